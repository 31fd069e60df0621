//! Alpha-PCA: loadings, factors and factor counts from a matrix series.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::EigPair;
use crate::types::{project_factor, FactorEstimate, MatrixSeries, MomentMatrices};

/// Eigenvalues at or below this fraction of the largest are treated as zero.
pub const ZERO_EIGEN_REL: f64 = 1e-12;

/// Sample mean `X_bar` of a nonempty slice of equally shaped matrices.
pub fn mean_matrix(xs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (p, q) = xs[0].shape();
    let mut acc = DMatrix::zeros(p, q);
    for x in xs {
        acc += x;
    }
    acc / xs.len() as f64
}

fn check_alpha(alpha_weight: f64) -> Result<()> {
    if alpha_weight.is_finite() && alpha_weight >= -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must be >= -1, got {alpha_weight}")))
    }
}

/// Row and column moment matrices, accumulated on the shifted data
/// `X*_t = X_t + (sqrt(1 + alpha) - 1) X_bar`.
pub fn moment_matrices(series: &MatrixSeries, alpha_weight: f64) -> Result<MomentMatrices> {
    check_alpha(alpha_weight)?;
    let (row, col) = raw_moments(series.matrices(), alpha_weight);
    MomentMatrices::new(row, col, alpha_weight)
}

pub(crate) fn raw_moments(xs: &[DMatrix<f64>], alpha_weight: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, q) = xs[0].shape();
    let shift = (alpha_weight + 1.0).sqrt() - 1.0;
    let xbar = mean_matrix(xs) * shift;
    let scale = 1.0 / (p * q * xs.len()) as f64;
    let mut row = DMatrix::zeros(p, p);
    let mut col = DMatrix::zeros(q, q);
    for x in xs {
        let xs_t = x + &xbar;
        row.gemm(scale, &xs_t, &xs_t.transpose(), 1.0);
        col.gemm_tr(scale, &xs_t, &xs_t, 1.0);
    }
    (symmetrize(row), symmetrize(col))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// The same matrices from the mean-plus-covariance expression, without the
/// data shift. Kept as a cross-check of [`moment_matrices`].
pub fn moment_matrices_direct(xs: &[DMatrix<f64>], alpha_weight: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_alpha(alpha_weight)?;
    if xs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let (p, q) = xs[0].shape();
    let t = xs.len() as f64;
    let xbar = mean_matrix(xs);
    let mut cov_r = DMatrix::zeros(p, p);
    let mut cov_c = DMatrix::zeros(q, q);
    for x in xs {
        let d = x - &xbar;
        cov_r += &d * d.transpose();
        cov_c += d.transpose() * &d;
    }
    let pq = (p * q) as f64;
    let row = (&xbar * xbar.transpose() * (1.0 + alpha_weight) + cov_r / t) / pq;
    let col = (xbar.transpose() * &xbar * (1.0 + alpha_weight) + cov_c / t) / pq;
    Ok((row, col))
}

/// Alpha-PCA with `k` row and `r` column factors.
pub fn fit(series: &MatrixSeries, k: usize, r: usize, alpha_weight: f64) -> Result<FactorEstimate> {
    let moments = moment_matrices(series, alpha_weight)?;
    fit_with_moments(series, &moments, k, r)
}

/// Alpha-PCA reusing precomputed moment matrices.
pub fn fit_with_moments(series: &MatrixSeries, moments: &MomentMatrices, k: usize, r: usize) -> Result<FactorEstimate> {
    let (p, q) = (series.nrows(), series.ncols());
    if moments.row().nrows() != p || moments.col().nrows() != q {
        return Err(Error::DimensionMismatch {
            expected: format!("{p}x{q} moments"),
            actual: format!("{}x{}", moments.row().nrows(), moments.col().nrows()),
        });
    }
    if k == 0 || k > p || r == 0 || r > q {
        return Err(Error::InvalidInput(format!(
            "need 1 <= k <= {p} and 1 <= r <= {q}, got k={k}, r={r}"
        )));
    }
    let row_loadings = scaled_top(moments.row_eig(), k, p, "row")?;
    let col_loadings = scaled_top(moments.col_eig(), r, q, "column")?;
    let factors = series
        .matrices()
        .iter()
        .map(|x| project_factor(&row_loadings, &col_loadings, x))
        .collect();
    FactorEstimate::new(
        row_loadings,
        col_loadings,
        factors,
        moments.row_eig().top_values(k),
        moments.col_eig().top_values(r),
        moments.alpha_weight(),
    )
}

fn scaled_top(eig: &EigPair, k: usize, n: usize, axis: &str) -> Result<DMatrix<f64>> {
    let lead = eig.eigenvalues[0];
    let kth = eig.eigenvalues[k - 1];
    if lead <= 0.0 || kth <= ZERO_EIGEN_REL * lead {
        return Err(Error::Degenerate(format!(
            "{axis} moment matrix has fewer than {k} positive eigenvalues; leading eigenvectors are undefined"
        )));
    }
    Ok(eig.top_vectors(k) * (n as f64).sqrt())
}

/// What to do when the ratio sequence has a single local maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackRule {
    /// Return the index of the second-largest ratio.
    SecondLargestRatio,
    /// Always return the plain argmax.
    None,
}

/// Search limits for the eigenvalue-ratio estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimSelectConfig {
    pub k_max: usize,
    pub r_max: usize,
    pub fallback_rule: FallbackRule,
}

impl DimSelectConfig {
    /// `k_max = ceil(p/2)`, `r_max = ceil(q/2)`.
    pub fn default_for(p: usize, q: usize) -> Self {
        Self {
            k_max: p.div_ceil(2),
            r_max: q.div_ceil(2),
            fallback_rule: FallbackRule::SecondLargestRatio,
        }
    }

    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if self.k_max < 1 || self.k_max + 1 > p || self.r_max < 1 || self.r_max + 1 > q {
            return Err(Error::InvalidInput(format!(
                "need 1 <= k_max <= p-1 and 1 <= r_max <= q-1 (p={p}, q={q}, k_max={}, r_max={})",
                self.k_max, self.r_max
            )));
        }
        Ok(())
    }
}

/// Outcome of the ratio estimator on one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioSelection {
    pub selected: usize,
    /// `lambda_j / lambda_{j+1}` for `j = 1..`; `+inf` where the next eigenvalue is zero.
    pub ratios: Vec<f64>,
    pub fallback_used: bool,
}

/// Both axes of the dimension estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DimEstimate {
    pub k: usize,
    pub r: usize,
    pub row: RatioSelection,
    pub col: RatioSelection,
}

/// Ratio estimator on a descending eigenvalue list, searching `j <= j_max`.
pub fn select_by_ratio(eigenvalues: &[f64], j_max: usize, rule: FallbackRule) -> Result<RatioSelection> {
    let lead = eigenvalues.first().copied().unwrap_or(0.0);
    if !(lead > 0.0) {
        return Err(Error::Degenerate("no positive eigenvalues".into()));
    }
    let zero = ZERO_EIGEN_REL * lead;
    let j_max = j_max.min(eigenvalues.len().saturating_sub(1));
    if j_max == 0 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: eigenvalues.len(),
        });
    }
    let mut ratios = Vec::with_capacity(j_max);
    for j in 0..j_max {
        let next = eigenvalues[j + 1];
        if next <= zero {
            ratios.push(f64::INFINITY);
            return Ok(RatioSelection {
                selected: j + 1,
                ratios,
                fallback_used: false,
            });
        }
        ratios.push(eigenvalues[j] / next);
    }
    let order = ranked(&ratios);
    let mut selected = order[0] + 1;
    let mut fallback_used = false;
    if rule == FallbackRule::SecondLargestRatio && ratios.len() >= 2 && local_maxima(&ratios) == 1 {
        selected = order[1] + 1;
        fallback_used = true;
    }
    Ok(RatioSelection {
        selected,
        ratios,
        fallback_used,
    })
}

/// Indices sorted by descending value; ties keep the smaller index first.
fn ranked(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Count of entries at least as large as each existing neighbour.
fn local_maxima(v: &[f64]) -> usize {
    (0..v.len())
        .filter(|&j| (j == 0 || v[j] >= v[j - 1]) && (j + 1 == v.len() || v[j] >= v[j + 1]))
        .count()
}

/// Estimates `(k, r)` from the spectra of the moment matrices.
pub fn estimate_dims(series: &MatrixSeries, alpha_weight: f64, cfg: &DimSelectConfig) -> Result<DimEstimate> {
    let moments = moment_matrices(series, alpha_weight)?;
    estimate_dims_with_moments(&moments, cfg)
}

pub fn estimate_dims_with_moments(moments: &MomentMatrices, cfg: &DimSelectConfig) -> Result<DimEstimate> {
    let (p, q) = (moments.row().nrows(), moments.col().nrows());
    cfg.validate(p, q)?;
    let row = select_by_ratio(moments.row_eig().eigenvalues.as_slice(), cfg.k_max, cfg.fallback_rule)?;
    let col = select_by_ratio(moments.col_eig().eigenvalues.as_slice(), cfg.r_max, cfg.fallback_rule)?;
    Ok(DimEstimate {
        k: row.selected,
        r: col.selected,
        row,
        col,
    })
}
