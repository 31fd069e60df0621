//! Comparison forecasters: bilinear regression on the raw panel, OLS and
//! Lasso on `vec(X_t)`, and a univariate AR(1).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bilinear_lse::{self, LseConfig};
use crate::error::{Error, Result};
use crate::evaluate::{cv_folds, CvConfig, Forecaster, TestInputs};
use crate::linalg::min_norm_lstsq;
use crate::types::{validate, LoadingEstimate, MatrixSeries, ScalarSeries};

/// Which benchmark to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    RawBilinear,
    VecOls,
    VecLasso,
    Ar1,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::RawBilinear,
        BenchmarkKind::VecOls,
        BenchmarkKind::VecLasso,
        BenchmarkKind::Ar1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkKind::RawBilinear => "raw",
            BenchmarkKind::VecOls => "vec",
            BenchmarkKind::VecLasso => "vec_lasso",
            BenchmarkKind::Ar1 => "ar1",
        }
    }
}

/// Bilinear regression `y_{t+h} = alpha' X_t beta` on the untransformed panel.
pub fn fit_raw(series: &MatrixSeries, target: &ScalarSeries, horizon: usize, cfg: &LseConfig) -> Result<LoadingEstimate> {
    let pairs = validate(series, target, horizon)?;
    let need = series.nrows() + series.ncols();
    if pairs.len() < need {
        return Err(Error::InsufficientData {
            needed: need,
            available: pairs.len(),
        });
    }
    bilinear_lse::fit_aligned(pairs.predictors, pairs.targets, cfg)
}

/// Rows are `vec(X_t)` (column-major) for each predictor.
pub fn vec_design(xs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = xs[0].len();
    DMatrix::from_fn(xs.len(), d, |t, c| xs[t].as_slice()[c])
}

/// Minimum-norm least squares of `y_{t+h}` on `vec(X_t)`.
pub fn fit_vec_ols(series: &MatrixSeries, target: &ScalarSeries, horizon: usize) -> Result<DVector<f64>> {
    let pairs = validate(series, target, horizon)?;
    min_norm_lstsq(&vec_design(pairs.predictors), &DVector::from_column_slice(pairs.targets))
}

pub fn predict_vec(coef: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    coef.as_slice().iter().zip(x.as_slice()).map(|(b, v)| b * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub max_sweeps: usize,
    /// Stop when no coefficient (on the standardized scale) moves more than this.
    pub tol: f64,
    pub grid_len: usize,
    /// Smallest grid value as a fraction of `lambda_max`.
    pub grid_ratio: f64,
    pub cv_folds: usize,
    pub cv_test_fraction: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 1_000,
            tol: 1e-10,
            grid_len: 50,
            grid_ratio: 1e-4,
            cv_folds: 5,
            cv_test_fraction: 0.2,
        }
    }
}

/// Coordinate-descent solution on standardized columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    /// Coefficients on the standardized scale.
    pub coef: DVector<f64>,
    /// `(1/2n)||y - Xb||^2 + lambda ||b||_1` after each sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Column scales: root mean square of each column, 0 for an all-zero column.
pub fn column_scales(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| (c.norm_squared() / n).sqrt()).collect()
}

fn standardize(x: &DMatrix<f64>, scales: &[f64]) -> DMatrix<f64> {
    let mut z = x.clone();
    for (mut c, s) in z.column_iter_mut().zip(scales) {
        if *s > 0.0 {
            c /= *s;
        } else {
            c.fill(0.0);
        }
    }
    z
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn lasso_objective(resid: &DVector<f64>, coef: &DVector<f64>, lambda: f64) -> f64 {
    let n = resid.len() as f64;
    resid.norm_squared() / (2.0 * n) + lambda * coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `(1/2n)||y - Zb||^2 + lambda ||b||_1`,
/// where every nonzero column of `z` has unit root mean square.
pub fn lasso_cd(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, start: Option<&DVector<f64>>, cfg: &LassoConfig) -> LassoPath {
    let (n, d) = z.shape();
    let nf = n as f64;
    let mut coef = start.cloned().unwrap_or_else(|| DVector::zeros(d));
    let mut resid = y - z * &coef;
    let col_sq: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / nf).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_sweeps {
        let mut max_step = 0.0_f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = z.column(j);
            let old = coef[j];
            let rho = col.dot(&resid) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &col, 1.0);
                coef[j] = new;
                max_step = max_step.max((new - old).abs());
            }
        }
        trace.push(lasso_objective(&resid, &coef, lambda));
        if max_step <= cfg.tol {
            converged = true;
            break;
        }
    }
    LassoPath {
        coef,
        objective_trace: trace,
        converged,
    }
}

/// `lambda_max = max_j |z_j' y| / n`: the smallest penalty with an all-zero solution.
pub fn lambda_max(z: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = z.nrows() as f64;
    z.column_iter().map(|c| c.dot(y).abs() / n).fold(0.0, f64::max)
}

/// Log-spaced grid from `lmax` down to `ratio * lmax`.
pub fn lambda_grid(lmax: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| lmax * (step * i as f64).exp()).collect()
}

/// Lasso on `vec(X_t)` with the penalty picked by rolling CV.
#[derive(Debug, Clone, PartialEq)]
pub struct VecLassoFit {
    /// Coefficients on the original predictor scale.
    pub coef: DVector<f64>,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub cv_msfe: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// Lasso at one penalty on raw design rows; returns original-scale coefficients.
pub fn lasso_fixed(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, cfg: &LassoConfig) -> (DVector<f64>, LassoPath) {
    let scales = column_scales(x);
    let z = standardize(x, &scales);
    let path = lasso_cd(&z, y, lambda, None, cfg);
    let coef = unscale(&path.coef, &scales);
    (coef, path)
}

fn unscale(coef: &DVector<f64>, scales: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        coef.len(),
        coef.iter().zip(scales).map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 }),
    )
}

/// Squared errors on `(test_x, test_y)` along the whole grid, warm-started
/// from the largest penalty.
fn path_errors(
    train_x: &DMatrix<f64>,
    train_y: &DVector<f64>,
    test_x: &DMatrix<f64>,
    test_y: &[f64],
    grid: &[f64],
    cfg: &LassoConfig,
) -> Vec<f64> {
    let scales = column_scales(train_x);
    let z = standardize(train_x, &scales);
    let mut warm: Option<DVector<f64>> = None;
    grid.iter()
        .map(|&lambda| {
            let path = lasso_cd(&z, train_y, lambda, warm.as_ref(), cfg);
            let coef = unscale(&path.coef, &scales);
            warm = Some(path.coef);
            let pred = test_x * &coef;
            pred.iter().zip(test_y).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / test_y.len() as f64
        })
        .collect()
}

pub fn fit_vec_lasso(series: &MatrixSeries, target: &ScalarSeries, horizon: usize, cfg: &LassoConfig) -> Result<VecLassoFit> {
    let pairs = validate(series, target, horizon)?;
    fit_vec_lasso_pairs(pairs.predictors, pairs.targets, horizon, cfg)
}

/// As [`fit_vec_lasso`], on aligned pairs.
pub fn fit_vec_lasso_pairs(xs: &[DMatrix<f64>], ys: &[f64], horizon: usize, cfg: &LassoConfig) -> Result<VecLassoFit> {
    if cfg.grid_len == 0 || !(cfg.grid_ratio > 0.0 && cfg.grid_ratio < 1.0) {
        return Err(Error::InvalidInput("lambda grid must be nonempty with ratio in (0, 1)".into()));
    }
    let x = vec_design(xs);
    let y = DVector::from_column_slice(ys);
    let scales = column_scales(&x);
    let lmax = lambda_max(&standardize(&x, &scales), &y);
    if !(lmax > 0.0) {
        return Err(Error::Degenerate("lambda_max is zero: no predictor correlates with the target".into()));
    }
    let grid = lambda_grid(lmax, cfg.grid_len, cfg.grid_ratio);
    let folds = cv_folds(
        ys.len(),
        &CvConfig {
            folds: cfg.cv_folds,
            test_fraction: cfg.cv_test_fraction,
            horizon,
        },
    )?;
    if folds[0].start < horizon + 2 {
        return Err(Error::InsufficientData {
            needed: horizon + 2,
            available: folds[0].start,
        });
    }
    let per_fold: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|fold| {
            let n_train = fold.start + 1 - horizon;
            let train_x = x.rows(0, n_train).into_owned();
            let train_y = y.rows(0, n_train).into_owned();
            let test_x = x.rows(fold.start, fold.len).into_owned();
            path_errors(&train_x, &train_y, &test_x, &ys[fold.start..fold.start + fold.len], &grid, cfg)
        })
        .collect();
    let cv_msfe: Vec<f64> = (0..grid.len())
        .map(|g| per_fold.iter().map(|f| f[g]).sum::<f64>() / per_fold.len() as f64)
        .collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| cv_msfe[a].total_cmp(&cv_msfe[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    let lambda = grid[best];
    let z = standardize(&x, &scales);
    let mut path = lasso_cd(&z, &y, grid[0], None, cfg);
    for &l in &grid[1..=best] {
        path = lasso_cd(&z, &y, l, Some(&path.coef), cfg);
    }
    let coef = unscale(&path.coef, &scales);
    if !path.converged {
        return Err(Error::NoConvergence {
            what: format!("lasso at lambda {lambda:.3e}"),
            iterations: cfg.max_sweeps,
        });
    }
    Ok(VecLassoFit {
        coef,
        lambda,
        lambda_grid: grid,
        cv_msfe,
        objective_trace: path.objective_trace,
        converged: path.converged,
    })
}

/// No-intercept slope of `y_{t+1}` on `y_t`.
pub fn fit_ar1(target: &[f64]) -> Result<f64> {
    if target.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            available: target.len(),
        });
    }
    let n = target.len() - 1;
    let den: f64 = target[..n].iter().map(|y| y * y).sum();
    if den == 0.0 {
        return Err(Error::ZeroVariance("target is identically zero".into()));
    }
    let num: f64 = (0..n).map(|t| target[t + 1] * target[t]).sum();
    Ok(num / den)
}

/// Benchmark wrapped for rolling evaluation.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub kind: BenchmarkKind,
    pub lse: LseConfig,
    pub lasso: LassoConfig,
}

impl Benchmark {
    pub fn new(kind: BenchmarkKind) -> Self {
        Self {
            kind,
            lse: LseConfig::default(),
            lasso: LassoConfig::default(),
        }
    }
}

impl Forecaster for Benchmark {
    fn name(&self) -> String {
        self.kind.as_str().to_string()
    }

    fn min_train_pairs(&self) -> usize {
        match self.kind {
            BenchmarkKind::Ar1 => 2,
            _ => 1,
        }
    }

    fn fit_predict(&self, train_x: &MatrixSeries, train_y: &ScalarSeries, horizon: usize, test: TestInputs<'_>) -> Result<Vec<f64>> {
        match self.kind {
            BenchmarkKind::RawBilinear => {
                let est = fit_raw(train_x, train_y, horizon, &self.lse)?;
                bilinear_lse::forecast_all(test.x, &est)
            }
            BenchmarkKind::VecOls => {
                let coef = fit_vec_ols(train_x, train_y, horizon)?;
                Ok(test.x.iter().map(|x| predict_vec(&coef, x)).collect())
            }
            BenchmarkKind::VecLasso => {
                let fit = fit_vec_lasso(train_x, train_y, horizon, &self.lasso)?;
                Ok(test.x.iter().map(|x| predict_vec(&fit.coef, x)).collect())
            }
            BenchmarkKind::Ar1 => {
                let phi = fit_ar1(train_y.values())?;
                let mult = phi.powi(horizon as i32);
                Ok(test.y_now.iter().map(|y| mult * y).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::default_time_index;

    fn series_1x1(v: &[f64]) -> MatrixSeries {
        MatrixSeries::new(
            v.iter().map(|x| DMatrix::from_element(1, 1, *x)).collect(),
            default_time_index(v.len()),
        )
        .unwrap()
    }

    #[test]
    fn ar1_cases() {
        assert_eq!(fit_ar1(&[1.0, 2.0, 4.0]).unwrap(), 2.0);
        let geo: Vec<f64> = (0..20).map(|t| 3.0 * 0.7_f64.powi(t)).collect();
        assert!((fit_ar1(&geo).unwrap() - 0.7).abs() < 1e-12);
        assert!(fit_ar1(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn raw_scalar_is_simple_slope() {
        let x = series_1x1(&[1.0, -1.0, 2.0, 0.5, 3.0]);
        let y = ScalarSeries::from_values(vec![0.0, 2.0, -2.0, 4.0, 1.0]).unwrap();
        let est = fit_raw(&x, &y, 1, &LseConfig::default()).unwrap();
        let xs = [1.0, -1.0, 2.0, 0.5];
        let ys = [2.0, -2.0, 4.0, 1.0];
        let slope = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / xs.iter().map(|a| a * a).sum::<f64>();
        assert!((est.beta()[0] - slope).abs() < 1e-12);
    }

    #[test]
    fn vec_ols_hand_case() {
        // three observations, two predictors
        let xs = vec![
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        ];
        let mut all = xs.clone();
        all.push(DMatrix::zeros(2, 1));
        let s = MatrixSeries::new(all, default_time_index(4)).unwrap();
        let y = ScalarSeries::from_values(vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let coef = fit_vec_ols(&s, &y, 1).unwrap();
        // normal equations [[2,1],[1,2]] b = (5, 6)
        assert!((coef[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((coef[1] - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_hand_case() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        // one unit-scale predictor with OLS coefficient 3 and lambda 1
        let z = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let y = &z * 3.0;
        let path = lasso_cd(&z, &y.column(0).into_owned(), 1.0, None, &LassoConfig::default());
        assert!((path.coef[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let x = DMatrix::from_fn(30, 4, |i, j| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let y = DVector::from_fn(30, |i, _| ((i * 5) % 11) as f64 - 5.0);
        let scales = column_scales(&x);
        let z = standardize(&x, &scales);
        let path = lasso_cd(&z, &y, lambda_max(&z, &y), None, &LassoConfig::default());
        assert!(path.coef.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid(2.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-4).abs() < 1e-15);
    }
}
