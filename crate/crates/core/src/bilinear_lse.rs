//! Alternating least squares for `y_{t+h} = alpha' F_t beta + e`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, solve_spd};
use crate::types::LoadingEstimate;

/// Starting value for `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRule {
    FirstUnitVector,
    SeededRandomUnit(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LseConfig {
    pub max_iterations: usize,
    /// Stop once `(obj_prev - obj) <= rel_tol * obj_prev`.
    pub rel_tol: f64,
    pub init_rule: InitRule,
}

impl Default for LseConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-10,
            init_rule: InitRule::FirstUnitVector,
        }
    }
}

impl LseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("need max_iterations >= 1 and rel_tol > 0".into()));
        }
        Ok(())
    }
}

/// `alpha' F beta`, summed in a fixed order.
pub fn bilinear(alpha: &[f64], f: &DMatrix<f64>, beta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, b) in beta.iter().enumerate() {
        let mut col = 0.0;
        for (i, a) in alpha.iter().enumerate() {
            col += a * f[(i, j)];
        }
        acc += col * b;
    }
    acc
}

/// Fits on a full factor series and a target of the same length, pairing
/// `F_t` with `y_{t+h}`.
pub fn fit(factors: &[DMatrix<f64>], target: &[f64], horizon: usize, cfg: &LseConfig) -> Result<LoadingEstimate> {
    if factors.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: factors.len(),
            actual: target.len(),
        });
    }
    if horizon == 0 || horizon >= target.len() {
        return Err(Error::NoUsablePairs {
            len: target.len(),
            horizon,
        });
    }
    let n = target.len() - horizon;
    fit_aligned(&factors[..n], &target[horizon..], cfg)
}

/// Fits on already aligned pairs `(F_t, y_{t+h})`.
pub fn fit_aligned(predictors: &[DMatrix<f64>], targets: &[f64], cfg: &LseConfig) -> Result<LoadingEstimate> {
    cfg.validate()?;
    if predictors.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: predictors.len(),
            actual: targets.len(),
        });
    }
    let Some(first) = predictors.first() else {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    };
    let (k, r) = first.shape();
    if predictors.len() < k + r {
        return Err(Error::InsufficientData {
            needed: k + r,
            available: predictors.len(),
        });
    }
    if let Some(t) = predictors.iter().position(|f| f.shape() != (k, r)) {
        return Err(Error::DimensionMismatch {
            expected: format!("{k}x{r}"),
            actual: format!("{:?} at pair {t}", predictors[t].shape()),
        });
    }
    for (t, f) in predictors.iter().enumerate() {
        if f.iter().any(|v| !v.is_finite()) || !targets[t].is_finite() {
            return Err(Error::NonFinite {
                what: "regression pairs",
                index: format!("pair {t}"),
            });
        }
    }

    let tss: f64 = targets.iter().map(|y| y * y).sum();
    let floor = tss * 1e-28;
    let mut beta = initial_beta(r, cfg.init_rule);
    let mut alpha = DVector::zeros(k);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for sweep in 1..=cfg.max_iterations {
        let new_alpha = half_step(predictors, targets, &beta, false).map_err(|e| name_sweep(e, sweep, "alpha"))?;
        let new_beta = half_step(predictors, targets, &new_alpha, true).map_err(|e| name_sweep(e, sweep, "beta"))?;
        let obj = objective(predictors, targets, &new_alpha, &new_beta);
        iterations = sweep;
        if let Some(&prev) = trace.last() {
            if obj > prev {
                // rounding-level rise; keep the previous iterate
                converged = true;
                break;
            }
            alpha = new_alpha;
            beta = new_beta;
            trace.push(obj);
            if prev - obj <= cfg.rel_tol * prev || obj <= floor {
                converged = true;
                break;
            }
        } else {
            alpha = new_alpha;
            beta = new_beta;
            trace.push(obj);
            if obj <= floor {
                converged = true;
                break;
            }
        }
    }

    let scale = alpha.norm();
    if !(scale > 0.0) {
        return Err(Error::Degenerate("fitted alpha is zero".into()));
    }
    alpha /= scale;
    beta *= scale;
    if linalg::leading_sign(alpha.as_slice()) < 0.0 {
        alpha.neg_mut();
        beta.neg_mut();
    }
    LoadingEstimate::new(alpha, beta, trace, converged, iterations)
}

fn name_sweep(err: Error, sweep: usize, which: &str) -> Error {
    match err {
        Error::Singular { context, condition } => Error::Singular {
            context: format!("{which} update of sweep {sweep}: {context}"),
            condition,
        },
        other => other,
    }
}

fn initial_beta(r: usize, rule: InitRule) -> DVector<f64> {
    match rule {
        InitRule::FirstUnitVector => {
            let mut b = DVector::zeros(r);
            b[0] = 1.0;
            b
        }
        InitRule::SeededRandomUnit(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let b: DVector<f64> = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
                let n = b.norm();
                if n > 0.0 {
                    return b / n;
                }
            }
        }
    }
}

/// Exact least-squares solve for one side given the other.
///
/// With `transpose = false` this regresses `y` on `F_t v` (the alpha step);
/// otherwise on `F_t' v` (the beta step).
fn half_step(fs: &[DMatrix<f64>], ys: &[f64], v: &DVector<f64>, transpose: bool) -> Result<DVector<f64>> {
    let dim = if transpose { fs[0].ncols() } else { fs[0].nrows() };
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (f, y) in fs.iter().zip(ys) {
        let z = if transpose { f.tr_mul(v) } else { f * v };
        gram.ger(1.0, &z, &z, 1.0);
        rhs.axpy(*y, &z, 1.0);
    }
    solve_spd(&gram, &rhs)
}

/// Sum of squared residuals.
pub fn objective(fs: &[DMatrix<f64>], ys: &[f64], alpha: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    fs.iter()
        .zip(ys)
        .map(|(f, y)| {
            let e = y - bilinear(alpha.as_slice(), f, beta.as_slice());
            e * e
        })
        .sum()
}

/// Point forecast `alpha' F_t beta`.
pub fn forecast(factors_t: &DMatrix<f64>, loadings: &LoadingEstimate) -> Result<f64> {
    let (k, r) = (loadings.alpha().len(), loadings.beta().len());
    if factors_t.shape() != (k, r) {
        return Err(Error::DimensionMismatch {
            expected: format!("{k}x{r}"),
            actual: format!("{}x{}", factors_t.nrows(), factors_t.ncols()),
        });
    }
    Ok(bilinear(loadings.alpha().as_slice(), factors_t, loadings.beta().as_slice()))
}

/// Forecasts for every matrix in `factors`.
pub fn forecast_all(factors: &[DMatrix<f64>], loadings: &LoadingEstimate) -> Result<Vec<f64>> {
    factors.iter().map(|f| forecast(f, loadings)).collect()
}
