//! Long-format CSV panels: ingestion with per-series transforms, and output.
//!
//! A panel file has the header `time,row_id,col_id,value`; a target file has
//! `time,value`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{MatrixSeries, ScalarSeries};

/// Stationarizing transform applied to one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    #[default]
    None,
    Diff1,
    Diff2,
    Log,
    LogDiff1,
}

impl Transform {
    /// Observations lost at the start of the series.
    pub fn lost(self) -> usize {
        match self {
            Transform::None | Transform::Log => 0,
            Transform::Diff1 | Transform::LogDiff1 => 1,
            Transform::Diff2 => 2,
        }
    }

    pub fn apply(self, v: &[f64]) -> std::result::Result<Vec<f64>, String> {
        if v.len() <= self.lost() {
            return Err(format!("series of length {} is too short for {self}", v.len()));
        }
        let logged = || -> std::result::Result<Vec<f64>, String> {
            v.iter()
                .enumerate()
                .map(|(t, x)| {
                    if *x > 0.0 {
                        Ok(x.ln())
                    } else {
                        Err(format!("log of nonpositive value {x} at position {t}"))
                    }
                })
                .collect()
        };
        Ok(match self {
            Transform::None => v.to_vec(),
            Transform::Diff1 => diff(v),
            Transform::Diff2 => diff(&diff(v)),
            Transform::Log => logged()?,
            Transform::LogDiff1 => diff(&logged()?),
        })
    }
}

fn diff(v: &[f64]) -> Vec<f64> {
    v.windows(2).map(|w| w[1] - w[0]).collect()
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transform::None => "none",
            Transform::Diff1 => "diff1",
            Transform::Diff2 => "diff2",
            Transform::Log => "log",
            Transform::LogDiff1 => "log_diff1",
        })
    }
}

impl FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Transform::None),
            "diff1" => Ok(Transform::Diff1),
            "diff2" => Ok(Transform::Diff2),
            "log" => Ok(Transform::Log),
            "log_diff1" => Ok(Transform::LogDiff1),
            other => Err(Error::InvalidInput(format!("unknown transform `{other}`"))),
        }
    }
}

/// Which transform each cell series gets. Cell rules beat column rules,
/// which beat the default.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransformSpec {
    pub default: Transform,
    pub per_col: HashMap<String, Transform>,
    pub per_cell: HashMap<(String, String), Transform>,
    pub target: Transform,
    pub center: bool,
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn rule(&self, row: &str, col: &str) -> Transform {
        self.per_cell
            .get(&(row.to_string(), col.to_string()))
            .or_else(|| self.per_col.get(col))
            .copied()
            .unwrap_or(self.default)
    }

    /// Reads `row_id,col_id,rule` lines. `*` as `row_id` makes a column rule,
    /// `*,*` sets the default and `target,*` the target's rule.
    pub fn from_reader<R: Read>(reader: R, center: bool) -> Result<Self> {
        let mut spec = TransformSpec {
            center,
            ..Self::default()
        };
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 3 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 3 fields (row_id,col_id,rule), found {}", rec.len()),
                });
            }
            let rule: Transform = rec[2].parse().map_err(|e: Error| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            match (&rec[0], &rec[1]) {
                ("*", "*") => spec.default = rule,
                ("target", _) => spec.target = rule,
                ("*", col) => {
                    spec.per_col.insert(col.to_string(), rule);
                }
                (row, col) => {
                    spec.per_cell.insert((row.to_string(), col.to_string()), rule);
                }
            }
        }
        Ok(spec)
    }

    pub fn from_path(path: &Path, center: bool) -> Result<Self> {
        Self::from_reader(File::open(path)?, center)
    }
}

/// Parsed long-format panel before any transform.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub times: Vec<String>,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// `cells[i + j * p][t]`.
    pub cells: Vec<Vec<f64>>,
}

fn parse_value(s: &str, line: u64) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse value `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value `{s}`"),
        });
    }
    Ok(v)
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Times sort numerically when they all parse as numbers, otherwise as strings.
fn sort_times(times: &mut [String]) {
    if times.iter().all(|t| t.parse::<f64>().is_ok()) {
        times.sort_by(|a, b| a.parse::<f64>().unwrap_or(0.0).total_cmp(&b.parse::<f64>().unwrap_or(0.0)));
    } else {
        times.sort();
    }
}

const MISSING_LISTED: usize = 20;

pub fn read_panel<R: Read>(reader: R) -> Result<RawPanel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    check_header(&mut rdr, &["time", "row_id", "col_id", "value"])?;
    let mut entries: HashMap<(String, String, String), f64> = HashMap::new();
    let mut time_set = BTreeSet::new();
    let mut row_ids: Vec<String> = Vec::new();
    let mut col_ids: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let value = parse_value(&rec[3], line)?;
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        if !row_ids.contains(&key.1) {
            row_ids.push(key.1.clone());
        }
        if !col_ids.contains(&key.2) {
            col_ids.push(key.2.clone());
        }
        time_set.insert(key.0.clone());
        if entries.insert(key.clone(), value).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate entry for time={}, row_id={}, col_id={}", key.0, key.1, key.2),
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let mut times: Vec<String> = time_set.into_iter().collect();
    sort_times(&mut times);
    let p = row_ids.len();
    let mut cells = vec![Vec::with_capacity(times.len()); p * col_ids.len()];
    let mut missing = Vec::new();
    let mut n_missing = 0usize;
    for t in &times {
        for (j, c) in col_ids.iter().enumerate() {
            for (i, r) in row_ids.iter().enumerate() {
                match entries.get(&(t.clone(), r.clone(), c.clone())) {
                    Some(v) => cells[i + j * p].push(*v),
                    None => {
                        n_missing += 1;
                        if missing.len() < MISSING_LISTED {
                            missing.push(format!("({t},{r},{c})"));
                        }
                    }
                }
            }
        }
    }
    if n_missing > 0 {
        return Err(Error::InvalidInput(format!(
            "incomplete panel grid: {n_missing} missing (time,row_id,col_id) keys: {}{}",
            missing.join(" "),
            if n_missing > missing.len() { " ..." } else { "" }
        )));
    }
    Ok(RawPanel {
        times,
        row_ids,
        col_ids,
        cells,
    })
}

pub fn read_target<R: Read>(reader: R) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    check_header(&mut rdr, &["time", "value"])?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        if !seen.insert(rec[0].to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate time {}", &rec[0]),
            });
        }
        out.push((rec[0].to_string(), parse_value(&rec[1], line)?));
    }
    Ok(out)
}

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= m;
    }
}

/// Applies the transforms, truncates every series to the shortest
/// transformed length (dropping the earliest points), then optionally
/// centres each series.
pub fn assemble(raw: &RawPanel, target: &[(String, f64)], spec: &TransformSpec) -> Result<(MatrixSeries, ScalarSeries)> {
    let by_time: HashMap<&str, f64> = target.iter().map(|(t, v)| (t.as_str(), *v)).collect();
    let missing: Vec<&str> = raw.times.iter().filter(|t| !by_time.contains_key(t.as_str())).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::InvalidInput(format!(
            "target is missing times: {}",
            missing.iter().take(MISSING_LISTED).copied().collect::<Vec<_>>().join(" ")
        )));
    }
    let y_raw: Vec<f64> = raw.times.iter().map(|t| by_time[t.as_str()]).collect();
    let p = raw.row_ids.len();
    let mut cells = Vec::with_capacity(raw.cells.len());
    for (j, c) in raw.col_ids.iter().enumerate() {
        for (i, r) in raw.row_ids.iter().enumerate() {
            let rule = spec.rule(r, c);
            let out = rule.apply(&raw.cells[i + j * p]).map_err(|m| {
                Error::InvalidInput(format!("row_id={r}, col_id={c}: {m}"))
            })?;
            cells.push(out);
        }
    }
    let mut y = spec
        .target
        .apply(&y_raw)
        .map_err(|m| Error::InvalidInput(format!("target: {m}")))?;
    let len = cells.iter().map(Vec::len).chain([y.len()]).min().unwrap_or(0);
    if len < 2 {
        return Err(Error::InsufficientData { needed: 2, available: len });
    }
    for c in &mut cells {
        let drop = c.len() - len;
        c.drain(..drop);
    }
    let drop = y.len() - len;
    y.drain(..drop);
    if spec.center {
        for c in &mut cells {
            center(c);
        }
        center(&mut y);
    }
    let times = raw.times[raw.times.len() - len..].to_vec();
    let q = raw.col_ids.len();
    // cells are ordered column-major, matching (i, j) -> i + j * p
    let values = (0..len)
        .map(|t| DMatrix::from_fn(p, q, |i, j| cells[i + j * p][t]))
        .collect();
    let series = MatrixSeries::with_labels(values, times.clone(), raw.row_ids.clone(), raw.col_ids.clone())?;
    Ok((series, ScalarSeries::new(y, times)?))
}

pub fn ingest(panel_path: &Path, target_path: &Path, spec: &TransformSpec) -> Result<(MatrixSeries, ScalarSeries)> {
    let raw = read_panel(File::open(panel_path)?)?;
    let target = read_target(File::open(target_path)?)?;
    assemble(&raw, &target, spec)
}

/// Writes a panel in long format; values use the shortest exact decimal form.
pub fn write_panel<W: Write>(series: &MatrixSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "row_id", "col_id", "value"])?;
    for (t, x) in series.matrices().iter().enumerate() {
        let time = &series.time_index()[t];
        for (j, c) in series.col_labels().iter().enumerate() {
            for (i, r) in series.row_labels().iter().enumerate() {
                w.write_record([time.as_str(), r.as_str(), c.as_str(), &x[(i, j)].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_target<W: Write>(target: &ScalarSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "value"])?;
    for (t, v) in target.time_index().iter().zip(target.values()) {
        w.write_record([t.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit(series: &MatrixSeries, target: &ScalarSeries, panel_path: &Path, target_path: &Path) -> Result<()> {
    write_panel(series, File::create(panel_path)?)?;
    write_target(target, File::create(target_path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_cases() {
        assert_eq!(Transform::Diff1.apply(&[1.0, 3.0, 6.0]).unwrap(), vec![2.0, 3.0]);
        assert_eq!(Transform::Diff2.apply(&[1.0, 3.0, 6.0]).unwrap(), vec![1.0]);
        let e = std::f64::consts::E;
        let ld = Transform::LogDiff1.apply(&[1.0, e, e * e]).unwrap();
        assert!((ld[0] - 1.0).abs() < 1e-15 && (ld[1] - 1.0).abs() < 1e-15);
        assert!(Transform::Log.apply(&[1.0, 0.0]).unwrap_err().contains("nonpositive"));
    }

    const PANEL: &str = "time,row_id,col_id,value\n\
        2,a,x,3\n1,a,x,1\n1,b,x,2\n2,b,x,4\n3,a,x,6\n3,b,x,7\n";

    #[test]
    fn reads_and_sorts_times() {
        let raw = read_panel(PANEL.as_bytes()).unwrap();
        assert_eq!(raw.times, vec!["1", "2", "3"]);
        assert_eq!(raw.row_ids, vec!["a", "b"]);
        assert_eq!(raw.cells[0], vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn incomplete_grid_lists_keys() {
        let text = "time,row_id,col_id,value\n1,a,x,1\n1,b,x,2\n2,a,x,3\n";
        let err = read_panel(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("(2,b,x)"), "{err}");
    }

    #[test]
    fn bad_value_reports_line() {
        let text = "time,row_id,col_id,value\n1,a,x,1\n2,a,x,oops\n";
        match read_panel(text.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "time,row_id,col_id,value\n1,a,x,1\n1,a,x,2\n";
        assert!(read_panel(text.as_bytes()).is_err());
    }

    #[test]
    fn transforms_truncate_to_common_length() {
        let raw = read_panel(PANEL.as_bytes()).unwrap();
        let target = read_target("time,value\n1,0\n2,1\n3,5\n".as_bytes()).unwrap();
        let mut spec = TransformSpec::identity();
        spec.per_cell.insert(("a".into(), "x".into()), Transform::Diff1);
        let (x, y) = assemble(&raw, &target, &spec).unwrap();
        assert_eq!(x.len(), 2);
        assert_eq!(x.time_index(), &["2".to_string(), "3".to_string()]);
        assert_eq!(x.get(0)[(0, 0)], 2.0);
        assert_eq!(x.get(1)[(1, 0)], 7.0);
        assert_eq!(y.values(), &[1.0, 5.0]);
    }

    #[test]
    fn spec_file_rules() {
        let text = "row_id,col_id,rule\n*,*,diff1\n*,gdp,log_diff1\nus,gdp,none\ntarget,*,diff2\n";
        let spec = TransformSpec::from_reader(text.as_bytes(), true).unwrap();
        assert_eq!(spec.rule("de", "cpi"), Transform::Diff1);
        assert_eq!(spec.rule("de", "gdp"), Transform::LogDiff1);
        assert_eq!(spec.rule("us", "gdp"), Transform::None);
        assert_eq!(spec.target, Transform::Diff2);
    }
}
