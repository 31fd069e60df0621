//! Supervised screening of predictor rows and columns by their average
//! absolute correlation with the target.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::{MatrixSeries, ScalarSeries};

/// Pearson correlations of every cell series with the target.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub corr: DMatrix<f64>,
    /// Cells whose series is constant; their correlation is set to 0.
    pub zero_variance: Vec<(usize, usize)>,
}

/// Pearson correlation. `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `rho_ij = corr(x_ij,t, y_t)` over all time points of `series`.
pub fn correlation_map(series: &MatrixSeries, target: &ScalarSeries) -> Result<CorrelationMap> {
    if series.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: series.len(),
            actual: target.len(),
        });
    }
    correlation_map_raw(series.matrices(), target.values())
}

pub(crate) fn correlation_map_raw(xs: &[DMatrix<f64>], y: &[f64]) -> Result<CorrelationMap> {
    if xs.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            available: xs.len(),
        });
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    if y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() == 0.0 {
        return Err(Error::ZeroVariance("target series is constant".into()));
    }
    let (p, q) = xs[0].shape();
    let mut corr = DMatrix::zeros(p, q);
    let mut zero_variance = Vec::new();
    let mut cell = vec![0.0; xs.len()];
    for j in 0..q {
        for i in 0..p {
            for (t, x) in xs.iter().enumerate() {
                cell[t] = x[(i, j)];
            }
            match pearson(&cell, y) {
                Some(r) => corr[(i, j)] = r,
                None => zero_variance.push((i, j)),
            }
        }
    }
    Ok(CorrelationMap { corr, zero_variance })
}

/// Diagnostics and kept index sets of one screening pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenResult {
    pub corr: DMatrix<f64>,
    /// `(1/q) sum_j |rho_ij|`.
    pub row_means: Vec<f64>,
    /// `(1/p) sum_i |rho_ij|`.
    pub col_means: Vec<f64>,
    pub kept_rows: Vec<usize>,
    pub kept_cols: Vec<usize>,
    pub row_threshold: f64,
    pub col_threshold: f64,
    pub zero_variance: Vec<(usize, usize)>,
}

impl ScreenResult {
    /// Slices any series with the same `p x q` layout down to the kept cells.
    pub fn apply(&self, series: &MatrixSeries) -> Result<MatrixSeries> {
        if series.nrows() != self.corr.nrows() || series.ncols() != self.corr.ncols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.corr.nrows(), self.corr.ncols()),
                actual: format!("{}x{}", series.nrows(), series.ncols()),
            });
        }
        series.select(&self.kept_rows, &self.kept_cols)
    }

    /// Row means sorted descending with their indices, for choosing a threshold by eye.
    pub fn row_scree(&self) -> Vec<(usize, f64)> {
        sorted_desc(&self.row_means)
    }

    pub fn col_scree(&self) -> Vec<(usize, f64)> {
        sorted_desc(&self.col_means)
    }
}

fn sorted_desc(v: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<_> = v.iter().copied().enumerate().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold {t} must lie in [0, 1)")))
    }
}

/// Applies the two thresholds to a correlation map.
pub fn screen(map: CorrelationMap, row_threshold: f64, col_threshold: f64) -> Result<ScreenResult> {
    check_threshold(row_threshold)?;
    check_threshold(col_threshold)?;
    let CorrelationMap { corr, zero_variance } = map;
    let (p, q) = corr.shape();
    let row_means: Vec<f64> = (0..p).map(|i| corr.row(i).iter().map(|r| r.abs()).sum::<f64>() / q as f64).collect();
    let col_means: Vec<f64> = (0..q).map(|j| corr.column(j).iter().map(|r| r.abs()).sum::<f64>() / p as f64).collect();
    let kept_rows: Vec<usize> = (0..p).filter(|&i| row_means[i] >= row_threshold).collect();
    let kept_cols: Vec<usize> = (0..q).filter(|&j| col_means[j] >= col_threshold).collect();
    if kept_rows.is_empty() {
        return Err(Error::AllRemoved {
            axis: "row",
            threshold: row_threshold,
        });
    }
    if kept_cols.is_empty() {
        return Err(Error::AllRemoved {
            axis: "column",
            threshold: col_threshold,
        });
    }
    Ok(ScreenResult {
        corr,
        row_means,
        col_means,
        kept_rows,
        kept_cols,
        row_threshold,
        col_threshold,
        zero_variance,
    })
}

/// Screens `series` against `target` and returns the refined panel.
pub fn refine(
    series: &MatrixSeries,
    target: &ScalarSeries,
    row_threshold: f64,
    col_threshold: f64,
) -> Result<(MatrixSeries, ScreenResult)> {
    check_threshold(row_threshold)?;
    check_threshold(col_threshold)?;
    let map = correlation_map(series, target)?;
    let result = screen(map, row_threshold, col_threshold)?;
    let refined = result.apply(series)?;
    Ok((refined, result))
}

/// [`refine`] with one threshold for both axes.
pub fn refine_uniform(series: &MatrixSeries, target: &ScalarSeries, threshold: f64) -> Result<(MatrixSeries, ScreenResult)> {
    refine(series, target, threshold, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::default_time_index;

    fn panel(cells: &[Vec<f64>], p: usize, q: usize) -> MatrixSeries {
        let t = cells[0].len();
        let values = (0..t)
            .map(|s| DMatrix::from_fn(p, q, |i, j| cells[i + j * p][s]))
            .collect();
        MatrixSeries::new(values, default_time_index(t)).unwrap()
    }

    #[test]
    fn pearson_hand_case() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn identical_and_negated_series() {
        let y = vec![0.3, -1.0, 2.0, 0.5, 1.1];
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let s = panel(&[y.clone(), neg], 1, 2);
        let target = ScalarSeries::from_values(y).unwrap();
        let m = correlation_map(&s, &target).unwrap();
        assert!((m.corr[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((m.corr[(0, 1)] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_cell_gets_zero_and_flag() {
        let y = vec![1.0, 2.0, 0.0, 4.0];
        let s = panel(&[y.clone(), vec![5.0; 4]], 2, 1);
        let m = correlation_map(&s, &ScalarSeries::from_values(y).unwrap()).unwrap();
        assert_eq!(m.corr[(1, 0)], 0.0);
        assert_eq!(m.zero_variance, vec![(1, 0)]);
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let y = vec![1.0, 2.0, 0.0, 4.0, 3.0];
        let cells: Vec<Vec<f64>> = (0..6).map(|c| y.iter().map(|v| v * (c as f64 + 1.0) + (c as f64) * 0.1).collect()).collect();
        let s = panel(&cells, 2, 3);
        let (out, res) = refine_uniform(&s, &ScalarSeries::from_values(y).unwrap(), 0.0).unwrap();
        assert_eq!(out, s);
        assert_eq!(res.kept_rows, vec![0, 1]);
    }

    #[test]
    fn weak_row_removed() {
        // row 1 has |rho| = 0.05 in both columns
        let corr = DMatrix::from_row_slice(2, 2, &[0.5, -0.4, 0.05, -0.05]);
        let res = screen(
            CorrelationMap {
                corr,
                zero_variance: vec![],
            },
            0.06,
            0.0,
        )
        .unwrap();
        assert!((res.row_means[1] - 0.05).abs() < 1e-15);
        assert_eq!(res.kept_rows, vec![0]);
        assert_eq!(res.kept_cols, vec![0, 1]);
    }

    #[test]
    fn everything_removed_is_an_error() {
        let corr = DMatrix::from_element(2, 2, 0.1);
        let err = screen(
            CorrelationMap {
                corr,
                zero_variance: vec![],
            },
            0.5,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::AllRemoved { axis: "row", .. }));
        assert!(err.to_string().contains("lower the threshold"));
    }

    #[test]
    fn threshold_range_checked() {
        let corr = DMatrix::from_element(1, 1, 0.1);
        assert!(screen(CorrelationMap { corr, zero_variance: vec![] }, 1.0, 0.0).is_err());
    }
}
