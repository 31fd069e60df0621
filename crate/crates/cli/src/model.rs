//! The saved fit: one long CSV of loadings, coefficients, kept labels and settings.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use mvdi::pipeline::{FittedPipeline, ForecastModel};
use mvdi::MatrixSeries;

use crate::error::CliError;
use crate::output;

pub const HEADER: [&str; 4] = ["section", "i", "j", "value"];

/// Model parameters with kept cells named by label.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub settings: BTreeMap<String, String>,
    pub kept_rows: Vec<String>,
    pub kept_cols: Vec<String>,
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl Bundle {
    pub fn from_fit(fit: &FittedPipeline, series: &MatrixSeries, settings: BTreeMap<String, String>) -> Self {
        let m = &fit.model;
        Self {
            settings,
            kept_rows: m.kept_rows.iter().map(|&i| series.row_labels()[i].clone()).collect(),
            kept_cols: m.kept_cols.iter().map(|&j| series.col_labels()[j].clone()).collect(),
            row_loadings: m.row_loadings.clone(),
            col_loadings: m.col_loadings.clone(),
            alpha: m.alpha.clone(),
            beta: m.beta.clone(),
        }
    }

    pub fn write(&self, path: &Path, config: &str) -> Result<(), CliError> {
        let mut rows: Vec<Vec<String>> = Vec::new();
        for (k, v) in &self.settings {
            rows.push(vec!["config".into(), k.clone(), String::new(), v.clone()]);
        }
        for (i, l) in self.kept_rows.iter().enumerate() {
            rows.push(vec!["kept_row".into(), i.to_string(), String::new(), l.clone()]);
        }
        for (j, l) in self.kept_cols.iter().enumerate() {
            rows.push(vec!["kept_col".into(), j.to_string(), String::new(), l.clone()]);
        }
        push_matrix(&mut rows, "row_loading", &self.row_loadings);
        push_matrix(&mut rows, "col_loading", &self.col_loadings);
        for (i, v) in self.alpha.iter().enumerate() {
            rows.push(vec!["alpha".into(), i.to_string(), String::new(), v.to_string()]);
        }
        for (i, v) in self.beta.iter().enumerate() {
            rows.push(vec!["beta".into(), i.to_string(), String::new(), v.to_string()]);
        }
        output::write_table(path, config, &HEADER, &rows)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let mut settings = BTreeMap::new();
        let mut kept_rows = Vec::new();
        let mut kept_cols = Vec::new();
        let mut row_entries = Vec::new();
        let mut col_entries = Vec::new();
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |n: usize| rec.get(n).unwrap_or("").to_string();
            let index = |n: usize| -> Result<usize, CliError> {
                field(n).parse().map_err(|_| CliError::Model(format!("line {line}: bad index `{}`", field(n))))
            };
            let number = || -> Result<f64, CliError> {
                field(3).parse().map_err(|_| CliError::Model(format!("line {line}: bad value `{}`", field(3))))
            };
            match field(0).as_str() {
                "config" => {
                    settings.insert(field(1), field(3));
                }
                "kept_row" => kept_rows.push((index(1)?, field(3))),
                "kept_col" => kept_cols.push((index(1)?, field(3))),
                "row_loading" => row_entries.push((index(1)?, index(2)?, number()?)),
                "col_loading" => col_entries.push((index(1)?, index(2)?, number()?)),
                "alpha" => alpha.push((index(1)?, number()?)),
                "beta" => beta.push((index(1)?, number()?)),
                other => return Err(CliError::Model(format!("line {line}: unknown section `{other}`"))),
            }
        }
        let kept_rows = ordered(kept_rows, "kept_row")?;
        let kept_cols = ordered(kept_cols, "kept_col")?;
        let alpha = DVector::from_vec(ordered(alpha, "alpha")?);
        let beta = DVector::from_vec(ordered(beta, "beta")?);
        let row_loadings = matrix(row_entries, kept_rows.len(), alpha.len(), "row_loading")?;
        let col_loadings = matrix(col_entries, kept_cols.len(), beta.len(), "col_loading")?;
        Ok(Self {
            settings,
            kept_rows,
            kept_cols,
            row_loadings,
            col_loadings,
            alpha,
            beta,
        })
    }

    /// Binds the kept labels to positions in `series`.
    pub fn model_for(&self, series: &MatrixSeries) -> Result<ForecastModel, CliError> {
        let find = |labels: &[String], want: &[String], axis: &str| -> Result<Vec<usize>, CliError> {
            want.iter()
                .map(|w| {
                    labels
                        .iter()
                        .position(|l| l == w)
                        .ok_or_else(|| CliError::Model(format!("{axis} `{w}` is not in the panel")))
                })
                .collect()
        };
        let rows = find(series.row_labels(), &self.kept_rows, "row_id")?;
        let cols = find(series.col_labels(), &self.kept_cols, "col_id")?;
        Ok(ForecastModel::new(
            series.nrows(),
            series.ncols(),
            rows,
            cols,
            self.row_loadings.clone(),
            self.col_loadings.clone(),
            self.alpha.clone(),
            self.beta.clone(),
        )?)
    }
}

fn push_matrix(rows: &mut Vec<Vec<String>>, section: &str, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push(vec![section.into(), i.to_string(), j.to_string(), m[(i, j)].to_string()]);
        }
    }
}

fn ordered<T>(mut v: Vec<(usize, T)>, section: &str) -> Result<Vec<T>, CliError> {
    v.sort_by_key(|e| e.0);
    if v.is_empty() || v.iter().enumerate().any(|(n, e)| e.0 != n) {
        return Err(CliError::Model(format!("section `{section}` is empty or has gaps")));
    }
    Ok(v.into_iter().map(|e| e.1).collect())
}

fn matrix(entries: Vec<(usize, usize, f64)>, n: usize, m: usize, section: &str) -> Result<DMatrix<f64>, CliError> {
    let mut out = DMatrix::from_element(n, m, f64::NAN);
    for (i, j, v) in entries {
        if i >= n || j >= m {
            return Err(CliError::Model(format!("section `{section}` entry ({i},{j}) outside {n}x{m}")));
        }
        out[(i, j)] = v;
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(CliError::Model(format!("section `{section}` is incomplete")));
    }
    Ok(out)
}
