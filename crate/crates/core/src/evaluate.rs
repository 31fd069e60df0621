//! Losses against rotated truth, forecast accuracy, rolling cross-validation
//! and the Diebold-Mariano comparison.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::alpha_pca::mean_matrix;
use crate::error::{Error, Result};
use crate::linalg::{kron, spectral_norm};
use crate::types::{FactorEstimate, LoadingEstimate, MatrixSeries, ScalarSeries, SimTruth};

/// Condition numbers at or above this mark a rotation as degenerate.
pub const ROTATION_CONDITION_LIMIT: f64 = 1e8;

/// The rotations `H_R`, `H_C` linking estimated and true factor spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationPair {
    pub h_r: DMatrix<f64>,
    pub h_c: DMatrix<f64>,
    pub v_r: Vec<f64>,
    pub v_c: Vec<f64>,
    pub cond_r: f64,
    pub cond_c: f64,
}

impl RotationPair {
    pub fn degenerate(&self) -> bool {
        !(self.cond_r < ROTATION_CONDITION_LIMIT && self.cond_c < ROTATION_CONDITION_LIMIT)
    }
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 && max.is_finite() {
        max / min
    } else {
        f64::INFINITY
    }
}

fn inverse_diag(v: &[f64], axis: &str) -> Result<DMatrix<f64>> {
    if let Some(j) = v.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::Singular {
            context: format!("{axis} eigenvalue {} of V is not positive", j + 1),
            condition: f64::INFINITY,
        });
    }
    Ok(DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| 1.0 / x))))
}

/// Evaluates
/// `H_R = (1/pqT) sum_t F~_t C'C F~_t' R'R_hat V_R^{-1}` and
/// `H_C = (1/pqT) sum_t F~_t' R'R F~_t C'C_hat V_C^{-1}`,
/// where `F~_t = F_t + (sqrt(1 + alpha) - 1) F_bar`.
pub fn rotations(truth: &SimTruth, est: &FactorEstimate) -> Result<RotationPair> {
    let (p, k) = truth.row_loadings.shape();
    let (q, r) = truth.col_loadings.shape();
    let t = truth.factors.len();
    if est.row_loadings().shape() != (p, k) || est.col_loadings().shape() != (q, r) || est.factors().len() != t {
        return Err(Error::DimensionMismatch {
            expected: format!("p={p}, q={q}, k={k}, r={r}, T={t}"),
            actual: format!(
                "p={}, q={}, k={}, r={}, T={}",
                est.row_loadings().nrows(),
                est.col_loadings().nrows(),
                est.k(),
                est.r(),
                est.factors().len()
            ),
        });
    }
    let shift = (est.alpha_weight() + 1.0).sqrt() - 1.0;
    let fbar = mean_matrix(&truth.factors) * shift;
    let ctc = truth.col_loadings.tr_mul(&truth.col_loadings);
    let rtr = truth.row_loadings.tr_mul(&truth.row_loadings);
    let mut sum_r = DMatrix::zeros(k, k);
    let mut sum_c = DMatrix::zeros(r, r);
    for f in &truth.factors {
        let ft = f + &fbar;
        sum_r += &ft * &ctc * ft.transpose();
        sum_c += ft.transpose() * &rtr * &ft;
    }
    let scale = 1.0 / (p * q * t) as f64;
    let v_r = est.row_eigenvalues().to_vec();
    let v_c = est.col_eigenvalues().to_vec();
    let h_r = sum_r * scale * truth.row_loadings.tr_mul(est.row_loadings()) * inverse_diag(&v_r, "row")?;
    let h_c = sum_c * scale * truth.col_loadings.tr_mul(est.col_loadings()) * inverse_diag(&v_c, "column")?;
    let cond_r = condition(&h_r);
    let cond_c = condition(&h_c);
    Ok(RotationPair {
        h_r,
        h_c,
        v_r,
        v_c,
        cond_r,
        cond_c,
    })
}

fn invert(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone().try_inverse().ok_or_else(|| Error::Singular {
        context: format!("inverting {what}"),
        condition: condition(m),
    })
}

/// `||F_hat_t - H_R^{-1} F_t H_C^{-1}'||_2` for every `t`.
pub fn factor_loss(truth: &SimTruth, est: &FactorEstimate, rot: &RotationPair) -> Result<Vec<f64>> {
    if truth.factors.len() != est.factors().len() {
        return Err(Error::LengthMismatch {
            expected: truth.factors.len(),
            actual: est.factors().len(),
        });
    }
    let hr_inv = invert(&rot.h_r, "H_R")?;
    let hc_inv_t = invert(&rot.h_c, "H_C")?.transpose();
    Ok(truth
        .factors
        .iter()
        .zip(est.factors())
        .map(|(f, fh)| spectral_norm(&(fh - &hr_inv * f * &hc_inv_t)))
        .collect())
}

/// `ln ||beta_hat (x) alpha_hat - (H_C' beta) (x) (H_R' alpha)||_F^2`.
pub fn kron_loss(truth: &SimTruth, loadings: &LoadingEstimate, rot: &RotationPair) -> Result<f64> {
    let a = rot.h_r.tr_mul(&truth.alpha);
    let b = rot.h_c.tr_mul(&truth.beta);
    if a.len() != loadings.alpha().len() || b.len() != loadings.beta().len() {
        return Err(Error::DimensionMismatch {
            expected: format!("k={}, r={}", a.len(), b.len()),
            actual: format!("k={}, r={}", loadings.alpha().len(), loadings.beta().len()),
        });
    }
    log_sq_distance(&loadings.kron(), &kron(b.as_slice(), a.as_slice()))
}

/// Natural log of the squared Euclidean distance; an exact match is an error.
pub fn log_sq_distance(x: &[f64], y: &[f64]) -> Result<f64> {
    let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if d == 0.0 {
        return Err(Error::ExactMatch);
    }
    Ok(d.ln())
}

/// Mean squared forecast error.
pub fn msfe(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            expected: actual.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    Ok(pred.iter().zip(actual).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// Splits `n` points into `folds` contiguous sizes; the remainder goes to
/// the earliest folds.
pub fn fold_sizes(n: usize, folds: usize) -> Result<Vec<usize>> {
    if folds == 0 || n < folds {
        return Err(Error::InsufficientData {
            needed: folds.max(1),
            available: n,
        });
    }
    let (base, extra) = (n / folds, n % folds);
    Ok((0..folds).map(|i| base + usize::from(i < extra)).collect())
}

/// What a forecaster sees for one fold.
#[derive(Debug, Clone, Copy)]
pub struct TestInputs<'a> {
    /// `X_t` at each forecast origin.
    pub x: &'a [DMatrix<f64>],
    /// `y_t` at each forecast origin.
    pub y_now: &'a [f64],
}

/// A forecasting method that can be refit on an expanding window.
pub trait Forecaster: Sync {
    fn name(&self) -> String;

    /// Smallest number of training pairs the method accepts.
    fn min_train_pairs(&self) -> usize {
        1
    }

    /// Fits on `train_x`, `train_y` (times `0..=origin`), then forecasts
    /// `y_{t+h}` for each test origin `t`.
    fn fit_predict(
        &self,
        train_x: &MatrixSeries,
        train_y: &ScalarSeries,
        horizon: usize,
        test: TestInputs<'_>,
    ) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Share of the aligned pairs held out at the end of the sample.
    pub test_fraction: f64,
    pub horizon: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            test_fraction: 0.2,
            horizon: 1,
        }
    }
}

/// One fold of the rolling evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    /// Pair index (equivalently, time of `X_t`) of the first test point.
    pub start: usize,
    pub len: usize,
}

/// Layout of the evaluation span over `n_pairs` aligned pairs.
pub fn cv_folds(n_pairs: usize, cfg: &CvConfig) -> Result<Vec<Fold>> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::InvalidInput("test fraction must lie in (0, 1)".into()));
    }
    let n_test = (cfg.test_fraction * n_pairs as f64).round() as usize;
    let sizes = fold_sizes(n_test, cfg.folds)?;
    let mut start = n_pairs - n_test;
    Ok(sizes
        .into_iter()
        .map(|len| {
            let f = Fold { start, len };
            start += len;
            f
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub method: String,
    pub folds: Vec<Fold>,
    pub fold_msfe: Vec<f64>,
    pub mean_msfe: f64,
    pub predictions: Vec<Vec<f64>>,
    pub actuals: Vec<Vec<f64>>,
}

impl CvReport {
    /// Squared errors of every test point, in time order.
    pub fn squared_errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .zip(&self.actuals)
            .flat_map(|(p, a)| p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)))
            .collect()
    }
}

/// Expanding-window cross-validation over the last `test_fraction` of the
/// aligned pairs. For a fold starting at pair `a`, the method is fit on
/// times `0..=a`, so its training pairs are those with `i + h <= a`.
pub fn rolling_cv(
    series: &MatrixSeries,
    target: &ScalarSeries,
    forecaster: &dyn Forecaster,
    cfg: &CvConfig,
) -> Result<CvReport> {
    let h = cfg.horizon;
    let pairs = crate::types::validate(series, target, h)?;
    let folds = cv_folds(pairs.len(), cfg)?;
    let first_train = (folds[0].start + 1).saturating_sub(h);
    if first_train < forecaster.min_train_pairs() {
        return Err(Error::InsufficientData {
            needed: forecaster.min_train_pairs(),
            available: first_train,
        });
    }
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = folds
        .par_iter()
        .map(|fold| {
            let a = fold.start;
            let train_x = series.window(0, a + 1)?;
            let train_y = ScalarSeries::new(target.values()[..=a].to_vec(), target.time_index()[..=a].to_vec())?;
            let test = TestInputs {
                x: &series.matrices()[a..a + fold.len],
                y_now: &target.values()[a..a + fold.len],
            };
            let pred = forecaster.fit_predict(&train_x, &train_y, h, test)?;
            let actual = target.values()[a + h..a + h + fold.len].to_vec();
            if pred.len() != actual.len() {
                return Err(Error::LengthMismatch {
                    expected: actual.len(),
                    actual: pred.len(),
                });
            }
            Ok((pred, actual))
        })
        .collect();
    let mut predictions = Vec::with_capacity(folds.len());
    let mut actuals = Vec::with_capacity(folds.len());
    let mut fold_msfe = Vec::with_capacity(folds.len());
    for r in results {
        let (p, a) = r?;
        fold_msfe.push(msfe(&p, &a)?);
        predictions.push(p);
        actuals.push(a);
    }
    let mean_msfe = fold_msfe.iter().sum::<f64>() / fold_msfe.len() as f64;
    Ok(CvReport {
        method: forecaster.name(),
        folds,
        fold_msfe,
        mean_msfe,
        predictions,
        actuals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub loss_diff: Vec<f64>,
}

/// Two-sided Diebold-Mariano test of equal predictive accuracy. The
/// long-run variance of `d_t = loss_a - loss_b` uses Bartlett weights
/// `1 - l/h` up to lag `h - 1`.
pub fn dm_test(loss_a: &[f64], loss_b: &[f64], horizon: usize) -> Result<DmResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::LengthMismatch {
            expected: loss_a.len(),
            actual: loss_b.len(),
        });
    }
    let n = loss_a.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, available: n });
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "loss differential",
            index: format!("t={}", d.iter().position(|x| !x.is_finite()).unwrap_or(0)),
        });
    }
    if d.iter().all(|x| *x == 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 1.0,
            loss_diff: d,
        });
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |lag: usize| -> f64 { (lag..n).map(|t| (d[t] - mean) * (d[t - lag] - mean)).sum::<f64>() / nf };
    let mut lrv = autocov(0);
    for lag in 1..horizon.min(n) {
        lrv += 2.0 * (1.0 - lag as f64 / horizon as f64) * autocov(lag);
    }
    if !(lrv > 0.0) {
        return Err(Error::ZeroVariance("loss differential has no variance".into()));
    }
    let statistic = mean / (lrv / nf).sqrt();
    let p_value = erfc(statistic.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(DmResult {
        statistic,
        p_value,
        loss_diff: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{default_time_index, FactorKind, NoiseKind};

    #[test]
    fn msfe_cases() {
        assert_eq!(msfe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(msfe(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert!(msfe(&[], &[]).is_err());
    }

    #[test]
    fn fold_layout_for_107_points() {
        let folds = cv_folds(106, &CvConfig::default()).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.len).collect();
        assert_eq!(sizes, vec![3, 2, 2, 2, 2, 2, 2, 2, 2, 2]);
        assert_eq!(folds[0].start, 85);
        assert_eq!(folds[9].start + folds[9].len, 106);
    }

    #[test]
    fn dm_identical_losses() {
        let l = [1.0, 2.0, 0.5, 0.3, 0.9];
        let r = dm_test(&l, &l, 1).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn dm_six_point_hand_case() {
        // d = (1, -1, 2, 0, 1, 3): mean 1, population variance 10/6
        let a = [2.0, 0.0, 3.0, 1.0, 2.0, 4.0];
        let b = [1.0; 6];
        let r = dm_test(&a, &b, 1).unwrap();
        let expected = 1.0 / ((10.0 / 6.0) / 6.0_f64).sqrt();
        assert!((r.statistic - expected).abs() < 1e-12);
        let swapped = dm_test(&b, &a, 1).unwrap();
        assert_eq!(swapped.statistic, -r.statistic);
        assert!((r.p_value - swapped.p_value).abs() < 1e-15);
    }

    #[test]
    fn dm_constant_difference_has_no_variance() {
        let a = [2.0; 6];
        let b = [1.0; 6];
        assert!(matches!(dm_test(&a, &b, 1), Err(Error::ZeroVariance(_))));
    }

    fn exact_truth() -> (SimTruth, FactorEstimate) {
        // R = sqrt(2) e1..e2 block in 2x2 orthonormal scale; one factor each way
        let rr = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let cc = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let factors: Vec<_> = [1.0, -2.0, 0.5, 1.5].iter().map(|v| DMatrix::from_element(1, 1, *v)).collect();
        let xs: Vec<_> = factors.iter().map(|f| &rr * f * cc.transpose()).collect();
        let series = MatrixSeries::new(xs, default_time_index(4)).unwrap();
        let est = crate::alpha_pca::fit(&series, 1, 1, -1.0).unwrap();
        let truth = SimTruth {
            row_loadings: rr,
            col_loadings: cc,
            factors,
            alpha: DVector::from_vec(vec![1.0]),
            beta: DVector::from_vec(vec![2.0]),
            factor_kind: FactorKind::MatrixNormal,
            noise_kind: NoiseKind::Iid,
            factor_ar: None,
            noise_ar: None,
            sigma2: 0.0,
            horizon: 1,
            seed: 0,
            rep_index: 0,
        };
        (truth, est)
    }

    #[test]
    fn exact_recovery_has_zero_factor_loss() {
        let (truth, est) = exact_truth();
        assert_eq!(est.row_loadings(), &truth.row_loadings);
        let rot = rotations(&truth, &est).unwrap();
        assert!((rot.h_r[(0, 0)].abs() - 1.0).abs() < 1e-10);
        let loss = factor_loss(&truth, &est, &rot).unwrap();
        assert!(loss.iter().all(|l| *l < 1e-10));
    }

    #[test]
    fn kron_loss_guards_exact_match() {
        let (truth, _) = exact_truth();
        let rot = RotationPair {
            h_r: DMatrix::identity(1, 1),
            h_c: DMatrix::identity(1, 1),
            v_r: vec![1.0],
            v_c: vec![1.0],
            cond_r: 1.0,
            cond_c: 1.0,
        };
        let exact = LoadingEstimate::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0]), vec![], true, 1).unwrap();
        assert!(matches!(kron_loss(&truth, &exact, &rot), Err(Error::ExactMatch)));
        let off = LoadingEstimate::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.5]), vec![], true, 1).unwrap();
        assert!((kron_loss(&truth, &off, &rot).unwrap() - 0.25_f64.ln()).abs() < 1e-12);
    }
}
