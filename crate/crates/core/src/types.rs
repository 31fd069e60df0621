//! Domain types shared by every estimator. Constructors enforce the
//! invariants, so an invalid instance cannot be built.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, EigPair};

const ORTHONORMAL_TOL: f64 = 1e-8;
const UNIT_NORM_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// An observed `T x p x q` panel `{X_t}` with aligned time labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSeries {
    values: Vec<DMatrix<f64>>,
    time_index: Vec<String>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
}

impl MatrixSeries {
    /// Builds a series with default row (`r1`, `r2`, ...) and column labels.
    pub fn new(values: Vec<DMatrix<f64>>, time_index: Vec<String>) -> Result<Self> {
        let (p, q) = values.first().map(|m| m.shape()).unwrap_or((0, 0));
        let rows = (1..=p).map(|i| format!("r{i}")).collect();
        let cols = (1..=q).map(|j| format!("c{j}")).collect();
        Self::with_labels(values, time_index, rows, cols)
    }

    pub fn with_labels(
        values: Vec<DMatrix<f64>>,
        time_index: Vec<String>,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                available: values.len(),
            });
        }
        if time_index.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                actual: time_index.len(),
            });
        }
        let (p, q) = values[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::InvalidInput("matrix observations must be at least 1x1".into()));
        }
        for (t, x) in values.iter().enumerate() {
            if x.shape() != (p, q) {
                return Err(Error::DimensionMismatch {
                    expected: format!("{p}x{q}"),
                    actual: format!("{}x{} at t={t}", x.nrows(), x.ncols()),
                });
            }
            if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "matrix series",
                    index: format!("t={t}, row={}, col={}", pos % p, pos / p),
                });
            }
        }
        if row_labels.len() != p || col_labels.len() != q {
            return Err(Error::DimensionMismatch {
                expected: format!("{p} row labels and {q} column labels"),
                actual: format!("{} and {}", row_labels.len(), col_labels.len()),
            });
        }
        Ok(Self {
            values,
            time_index,
            row_labels,
            col_labels,
        })
    }

    /// Number of time points `T`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nrows(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values[0].ncols()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn get(&self, t: usize) -> &DMatrix<f64> {
        &self.values[t]
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Time slice `[start, end)`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{end} out of range for length {}",
                self.len()
            )));
        }
        Self::with_labels(
            self.values[start..end].to_vec(),
            self.time_index[start..end].to_vec(),
            self.row_labels.clone(),
            self.col_labels.clone(),
        )
    }

    /// Keeps the given rows and columns of every observation, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Result<Self> {
        let (p, q) = (self.nrows(), self.ncols());
        if rows.iter().any(|&i| i >= p) || cols.iter().any(|&j| j >= q) {
            return Err(Error::InvalidInput("row/column index out of range".into()));
        }
        let values = self
            .values
            .iter()
            .map(|x| DMatrix::from_fn(rows.len(), cols.len(), |a, b| x[(rows[a], cols[b])]))
            .collect();
        Self::with_labels(
            values,
            self.time_index.clone(),
            rows.iter().map(|&i| self.row_labels[i].clone()).collect(),
            cols.iter().map(|&j| self.col_labels[j].clone()).collect(),
        )
    }

    /// The `(i, j)` entry as a scalar time series.
    pub fn entry_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.values.iter().map(|x| x[(i, j)]).collect()
    }
}

/// A scalar series `{y_t}` whose labels follow the same ordering contract as
/// [`MatrixSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSeries {
    values: Vec<f64>,
    time_index: Vec<String>,
}

impl ScalarSeries {
    pub fn new(values: Vec<f64>, time_index: Vec<String>) -> Result<Self> {
        if values.len() != time_index.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                actual: time_index.len(),
            });
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "scalar series",
                index: format!("t={t}"),
            });
        }
        Ok(Self { values, time_index })
    }

    /// Labels `1..=n`.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let labels = default_time_index(values.len());
        Self::new(values, labels)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_index(&self) -> &[String] {
        &self.time_index
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn default_time_index(n: usize) -> Vec<String> {
    (1..=n).map(|t| t.to_string()).collect()
}

/// Predictor/target pairs `(X_t, y_{t+h})` for `t = 1..T-h`.
#[derive(Debug, Clone, Copy)]
pub struct AlignedPairs<'a> {
    pub predictors: &'a [DMatrix<f64>],
    pub targets: &'a [f64],
    pub horizon: usize,
}

impl AlignedPairs<'_> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Pairs every `X_t` with `y_{t+h}`.
pub fn validate<'a>(series: &'a MatrixSeries, target: &'a ScalarSeries, horizon: usize) -> Result<AlignedPairs<'a>> {
    if series.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: series.len(),
            actual: target.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let n = series.len();
    if horizon >= n {
        return Err(Error::NoUsablePairs { len: n, horizon });
    }
    Ok(AlignedPairs {
        predictors: &series.matrices()[..n - horizon],
        targets: &target.values()[horizon..],
        horizon,
    })
}

/// Row and column moment matrices of the alpha-PCA estimator, with their
/// eigendecompositions.
#[derive(Debug, Clone)]
pub struct MomentMatrices {
    row: DMatrix<f64>,
    col: DMatrix<f64>,
    alpha_weight: f64,
    row_eig: EigPair,
    col_eig: EigPair,
}

impl MomentMatrices {
    /// Validates symmetry, positive semidefiniteness and trace agreement.
    pub fn new(row: DMatrix<f64>, col: DMatrix<f64>, alpha_weight: f64) -> Result<Self> {
        if !(alpha_weight >= -1.0) || !alpha_weight.is_finite() {
            return Err(Error::InvalidInput(format!("alpha weight {alpha_weight} must be >= -1")));
        }
        for (m, name) in [(&row, "row"), (&col, "column")] {
            if !linalg::is_symmetric(m, SYMMETRY_TOL) {
                return Err(Error::InvalidInput(format!("{name} moment matrix is not symmetric")));
            }
        }
        let (tr_r, tr_c) = (row.trace(), col.trace());
        if (tr_r - tr_c).abs() > TRACE_TOL * tr_r.abs().max(tr_c.abs()) {
            return Err(Error::InvalidInput(format!(
                "moment traces disagree: {tr_r} vs {tr_c}"
            )));
        }
        let row_eig = linalg::sym_eig(&row)?;
        let col_eig = linalg::sym_eig(&col)?;
        for (eig, name) in [(&row_eig, "row"), (&col_eig, "column")] {
            let top = eig.eigenvalues[0].abs();
            let min = eig.eigenvalues[eig.len() - 1];
            if min < -PSD_TOL * top {
                return Err(Error::InvalidInput(format!(
                    "{name} moment matrix is not positive semidefinite (min eigenvalue {min})"
                )));
            }
        }
        Ok(Self {
            row,
            col,
            alpha_weight,
            row_eig,
            col_eig,
        })
    }

    pub fn row(&self) -> &DMatrix<f64> {
        &self.row
    }

    pub fn col(&self) -> &DMatrix<f64> {
        &self.col
    }

    pub fn alpha_weight(&self) -> f64 {
        self.alpha_weight
    }

    pub fn row_eig(&self) -> &EigPair {
        &self.row_eig
    }

    pub fn col_eig(&self) -> &EigPair {
        &self.col_eig
    }
}

/// Output of alpha-PCA: loadings, factors and the leading eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEstimate {
    row_loadings: DMatrix<f64>,
    col_loadings: DMatrix<f64>,
    factors: Vec<DMatrix<f64>>,
    row_eigenvalues: Vec<f64>,
    col_eigenvalues: Vec<f64>,
    alpha_weight: f64,
}

impl FactorEstimate {
    pub fn new(
        row_loadings: DMatrix<f64>,
        col_loadings: DMatrix<f64>,
        factors: Vec<DMatrix<f64>>,
        row_eigenvalues: Vec<f64>,
        col_eigenvalues: Vec<f64>,
        alpha_weight: f64,
    ) -> Result<Self> {
        let (p, k) = row_loadings.shape();
        let (q, r) = col_loadings.shape();
        check_scaled_orthonormal(&row_loadings, p, "row loadings")?;
        check_scaled_orthonormal(&col_loadings, q, "column loadings")?;
        for (vals, n, name) in [(&row_eigenvalues, k, "row"), (&col_eigenvalues, r, "column")] {
            if vals.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: vals.len(),
                });
            }
            if vals.windows(2).any(|w| w[0] < w[1]) || vals.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} eigenvalues must be descending and nonnegative"
                )));
            }
        }
        if let Some(t) = factors.iter().position(|f| f.shape() != (k, r)) {
            return Err(Error::DimensionMismatch {
                expected: format!("{k}x{r}"),
                actual: format!("{:?} at t={t}", factors[t].shape()),
            });
        }
        Ok(Self {
            row_loadings,
            col_loadings,
            factors,
            row_eigenvalues,
            col_eigenvalues,
            alpha_weight,
        })
    }

    /// `R_hat`, `p x k`.
    pub fn row_loadings(&self) -> &DMatrix<f64> {
        &self.row_loadings
    }

    /// `C_hat`, `q x r`.
    pub fn col_loadings(&self) -> &DMatrix<f64> {
        &self.col_loadings
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn row_eigenvalues(&self) -> &[f64] {
        &self.row_eigenvalues
    }

    pub fn col_eigenvalues(&self) -> &[f64] {
        &self.col_eigenvalues
    }

    pub fn alpha_weight(&self) -> f64 {
        self.alpha_weight
    }

    pub fn k(&self) -> usize {
        self.row_loadings.ncols()
    }

    pub fn r(&self) -> usize {
        self.col_loadings.ncols()
    }

    /// Factor matrix `(1/pq) R_hat' X C_hat` for an observation not
    /// necessarily in the estimation sample.
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (p, q) = (self.row_loadings.nrows(), self.col_loadings.nrows());
        if x.shape() != (p, q) {
            return Err(Error::DimensionMismatch {
                expected: format!("{p}x{q}"),
                actual: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        Ok(project_factor(&self.row_loadings, &self.col_loadings, x))
    }
}

pub(crate) fn project_factor(row: &DMatrix<f64>, col: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let scale = 1.0 / (row.nrows() * col.nrows()) as f64;
    (row.transpose() * x * col) * scale
}

fn check_scaled_orthonormal(m: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    let gram = m.transpose() * m / n as f64;
    let eye = DMatrix::<f64>::identity(m.ncols(), m.ncols());
    if (gram - eye).amax() > ORTHONORMAL_TOL {
        return Err(Error::InvalidInput(format!("{what} violate (1/n) L'L = I")));
    }
    for (c, col) in m.column_iter().enumerate() {
        if linalg::leading_sign(col.as_slice()) < 0.0 {
            return Err(Error::InvalidInput(format!("{what} column {c} violates the sign convention")));
        }
    }
    Ok(())
}

/// Fitted bilinear loading vectors `(alpha, beta)` with the iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingEstimate {
    alpha: DVector<f64>,
    beta: DVector<f64>,
    objective_trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl LoadingEstimate {
    pub fn new(
        alpha: DVector<f64>,
        beta: DVector<f64>,
        objective_trace: Vec<f64>,
        converged: bool,
        iterations: usize,
    ) -> Result<Self> {
        if ((alpha.norm() - 1.0).abs()) > UNIT_NORM_TOL {
            return Err(Error::InvalidInput(format!("alpha must have unit norm, got {}", alpha.norm())));
        }
        if linalg::leading_sign(alpha.as_slice()) < 0.0 {
            return Err(Error::InvalidInput("alpha violates the sign convention".into()));
        }
        if objective_trace.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidInput("objective trace must be non-increasing".into()));
        }
        if alpha.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "loading vectors",
                index: "alpha/beta".into(),
            });
        }
        Ok(Self {
            alpha,
            beta,
            objective_trace,
            converged,
            iterations,
        })
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// `beta (x) alpha`, the identified coefficient on `vec(F_t)`.
    pub fn kron(&self) -> Vec<f64> {
        linalg::kron(self.beta.as_slice(), self.alpha.as_slice())
    }
}

/// How the latent factors evolve over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    /// i.i.d. standard matrix normal.
    MatrixNormal,
    /// `F_t = Phi1 F_{t-1} Phi2' + innovation`.
    Mar1,
}

/// Idiosyncratic noise process for `E_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Iid,
    Mar1,
    RowColCorr,
}

impl FactorKind {
    pub const ALL: [FactorKind; 2] = [FactorKind::MatrixNormal, FactorKind::Mar1];

    pub fn as_str(self) -> &'static str {
        match self {
            FactorKind::MatrixNormal => "matrix_normal",
            FactorKind::Mar1 => "mar1",
        }
    }
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Iid, NoiseKind::Mar1, NoiseKind::RowColCorr];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Iid => "iid",
            NoiseKind::Mar1 => "mar1",
            NoiseKind::RowColCorr => "row_col_corr",
        }
    }
}

impl fmt::Display for FactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FactorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix_normal" | "i" => Ok(FactorKind::MatrixNormal),
            "mar1" | "ii" => Ok(FactorKind::Mar1),
            other => Err(Error::InvalidInput(format!("unknown factor kind `{other}`"))),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" | "i" => Ok(NoiseKind::Iid),
            "mar1" | "mar1_noise" | "ii" => Ok(NoiseKind::Mar1),
            "row_col_corr" | "iii" => Ok(NoiseKind::RowColCorr),
            other => Err(Error::InvalidInput(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// Diagonal MAR(1) coefficients, stored as their diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mar1Coefficients {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl Mar1Coefficients {
    pub fn new(left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        if left.iter().chain(right.iter()).any(|c| !(c.abs() < 1.0)) {
            return Err(Error::InvalidInput("MAR(1) coefficients must lie in (-1, 1)".into()));
        }
        Ok(Self { left, right })
    }
}

/// Ground truth behind one simulated replication.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub factors: Vec<DMatrix<f64>>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub factor_kind: FactorKind,
    pub noise_kind: NoiseKind,
    /// `Phi1`, `Phi2` when the factors follow MAR(1).
    pub factor_ar: Option<Mar1Coefficients>,
    /// `Psi1`, `Psi2` when the noise follows MAR(1).
    pub noise_ar: Option<Mar1Coefficients>,
    pub sigma2: f64,
    pub horizon: usize,
    pub seed: u64,
    pub rep_index: u64,
}

impl SimTruth {
    pub fn check(&self) -> Result<()> {
        if (self.alpha.norm() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidInput("true alpha must have unit norm".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        for c in [&self.factor_ar, &self.noise_ar].into_iter().flatten() {
            Mar1Coefficients::new(c.left.clone(), c.right.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(t: usize) -> MatrixSeries {
        let values = (0..t).map(|i| DMatrix::from_element(2, 3, i as f64)).collect();
        MatrixSeries::new(values, default_time_index(t)).unwrap()
    }

    #[test]
    fn pairs_count_is_t_minus_h() {
        let x = series(10);
        let y = ScalarSeries::from_values((0..10).map(f64::from).collect()).unwrap();
        let pairs = validate(&x, &y, 1).unwrap();
        assert_eq!(pairs.len(), 9);
        assert_eq!(pairs.targets[0], 1.0);
        assert_eq!(pairs.predictors[0][(0, 0)], 0.0);

        let x = series(107);
        let y = ScalarSeries::from_values(vec![0.0; 107]).unwrap();
        assert_eq!(validate(&x, &y, 1).unwrap().len(), 106);
    }

    #[test]
    fn horizon_consuming_whole_sample_is_rejected() {
        let x = series(2);
        let y = ScalarSeries::from_values(vec![0.0, 1.0]).unwrap();
        assert!(matches!(validate(&x, &y, 2), Err(Error::NoUsablePairs { .. })));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let x = series(5);
        let y = ScalarSeries::from_values(vec![0.0; 4]).unwrap();
        assert!(matches!(validate(&x, &y, 1), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn non_finite_entry_reports_location() {
        let mut values: Vec<_> = (0..3).map(|_| DMatrix::zeros(2, 2)).collect();
        values[2][(1, 0)] = f64::INFINITY;
        let err = MatrixSeries::new(values, default_time_index(3)).unwrap_err();
        match err {
            Error::NonFinite { index, .. } => assert_eq!(index, "t=2, row=1, col=0"),
            other => panic!("{other:?}"),
        }
        let err = ScalarSeries::from_values(vec![0.0, f64::NAN]).unwrap_err();
        assert!(err.to_string().contains("t=1"));
    }

    #[test]
    fn ragged_series_is_rejected() {
        let values = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 3)];
        assert!(MatrixSeries::new(values, default_time_index(2)).is_err());
    }

    #[test]
    fn loading_estimate_checks_invariants() {
        let trace = vec![3.0, 2.0, 2.0];
        let ok = LoadingEstimate::new(
            DVector::from_vec(vec![0.6, 0.8]),
            DVector::from_vec(vec![1.0]),
            trace.clone(),
            true,
            3,
        );
        assert!(ok.is_ok());
        let flipped = LoadingEstimate::new(
            DVector::from_vec(vec![-0.6, 0.8]),
            DVector::from_vec(vec![1.0]),
            trace,
            true,
            3,
        );
        assert!(flipped.is_err());
        let rising = LoadingEstimate::new(
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![1.0]),
            vec![1.0, 2.0],
            true,
            2,
        );
        assert!(rising.is_err());
    }

    #[test]
    fn moment_matrices_reject_trace_mismatch() {
        let err = MomentMatrices::new(DMatrix::identity(2, 2), DMatrix::identity(3, 3), 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn select_keeps_order_and_labels() {
        let x = series(3).select(&[1], &[2, 0]).unwrap();
        assert_eq!(x.nrows(), 1);
        assert_eq!(x.col_labels(), &["c3".to_string(), "c1".to_string()]);
    }
}
