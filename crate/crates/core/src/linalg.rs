//! Dense numerical kernel shared by the estimators.
//!
//! Everything here is deterministic: the same input bits produce the same
//! output bits. Symmetric eigenvectors carry a fixed sign convention (the
//! first non-negligible entry of every column is positive) so that loadings
//! are reproducible across runs.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const EIGEN_MAX_ITER: usize = 10_000;
const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
const PIVOT_TOL: f64 = 1e-12;
/// Entries below this fraction of a column's max-abs are ignored when fixing signs.
const SIGN_NEGLIGIBLE: f64 = 1e-8;

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EigPair {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigPair {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Leading `k` eigenvectors as a `n x k` matrix.
    pub fn top_vectors(&self, k: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, k).into_owned()
    }

    pub fn top_values(&self, k: usize) -> Vec<f64> {
        self.eigenvalues.iter().take(k).copied().collect()
    }
}

fn check_finite(a: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        let (i, j) = (pos % a.nrows(), pos / a.nrows());
        return Err(Error::NonFinite {
            what,
            index: format!("({i}, {j})"),
        });
    }
    Ok(())
}

/// Sign of the first entry whose magnitude is not negligible relative to the
/// column's largest entry. Returns `1.0` for an all-zero column.
pub fn leading_sign(col: &[f64]) -> f64 {
    let max = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 1.0;
    }
    col.iter()
        .find(|v| v.abs() > SIGN_NEGLIGIBLE * max)
        .map(|v| v.signum())
        .unwrap_or(1.0)
}

/// Flip every column of `m` so its first non-negligible entry is positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        if leading_sign(col.as_slice()) < 0.0 {
            col.neg_mut();
        }
    }
}

fn lexicographic_desc(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Full symmetric eigendecomposition, eigenvalues descending.
///
/// The input is symmetrized as `(A + A')/2` first. Exact eigenvalue ties are
/// ordered by the sign-normalized eigenvectors, lexicographically descending;
/// under ties the choice of basis is otherwise arbitrary.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<EigPair> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            expected: "square matrix".into(),
            actual: format!("{}x{}", a.nrows(), a.ncols()),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    check_finite(a, "symmetric eigen input")?;

    let sym = (a + a.transpose()) * 0.5;
    let decomposition = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, EIGEN_MAX_ITER)
        .ok_or_else(|| Error::EigenNoConvergence {
            residual: off_diagonal_norm(&sym),
        })?;

    let mut pairs: Vec<(f64, DVector<f64>)> = decomposition
        .eigenvalues
        .iter()
        .zip(decomposition.eigenvectors.column_iter())
        .map(|(&lambda, v)| {
            let mut v = v.into_owned();
            if leading_sign(v.as_slice()) < 0.0 {
                v.neg_mut();
            }
            (lambda, v)
        })
        .collect();
    pairs.sort_by(|(la, va), (lb, vb)| lb.total_cmp(la).then_with(|| lexicographic_desc(va, vb)));

    let n = sym.nrows();
    let eigenvalues = DVector::from_iterator(n, pairs.iter().map(|(l, _)| *l));
    let eigenvectors = DMatrix::from_columns(&pairs.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());

    let scale = eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let residual = (&sym * &eigenvectors - &eigenvectors * DMatrix::from_diagonal(&eigenvalues)).norm();
    if residual > EIGEN_RESIDUAL_TOL * scale.max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::EigenNoConvergence { residual });
    }

    Ok(EigPair {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Solve `A x = b` for symmetric positive-definite `A` by Cholesky.
///
/// Fails with [`Error::Singular`] when a pivot drops below `1e-12 * ||A||_F`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n}x{n} system with rhs of length {n}"),
            actual: format!("{}x{} with rhs of length {}", a.nrows(), a.ncols(), b.len()),
        });
    }
    check_finite(a, "spd matrix")?;
    let norm = a.norm();
    let floor = PIVOT_TOL * norm;

    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut pivots = Vec::with_capacity(n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        pivots.push(d);
        if !(d > floor) || norm == 0.0 {
            let max = pivots.iter().fold(0.0_f64, |m, p| m.max(*p));
            let condition = if d > 0.0 { max / d } else { f64::INFINITY };
            return Err(Error::Singular {
                context: format!("cholesky pivot {j} of {n}"),
                condition,
            });
        }
        let diag = d.sqrt();
        l[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / diag;
        }
    }

    let mut z = DVector::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * z[k];
        }
        z[i] = s / l[(i, i)];
    }
    let mut x = DVector::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

/// Minimum-norm least-squares solution of `A x = b` via the SVD.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.nrows(),
            actual: b.len(),
        });
    }
    check_finite(a, "design matrix")?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * smax;
    svd.solve(b, tol)
        .map_err(|e| Error::InvalidInput(format!("svd solve failed: {e}")))
}

/// Kronecker product of two vectors: element `i*n + j` is `a[i] * b[j]`.
pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        out.extend(b.iter().map(|&y| x * y));
    }
    out
}

/// `||A||_2`, the largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// `||A||_F = sqrt(tr(A A'))`.
pub fn frob_norm(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// Frobenius distance between the orthogonal projections onto the column
/// spaces of `a` and `b`.
pub fn projection_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    Ok((projector(a)? - projector(b)?).norm())
}

fn projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gram = a.transpose() * a;
    let inv = gram.try_inverse().ok_or_else(|| Error::Singular {
        context: "projector gram matrix".into(),
        condition: f64::INFINITY,
    })?;
    Ok(a * inv * a.transpose())
}

/// True when `a` is square and `|a_ij - a_ji| <= rel_tol * max|a|` everywhere.
pub fn is_symmetric(a: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax();
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            if (a[(i, j)] - a[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(e.eigenvectors, DMatrix::identity(3, 3));
    }

    #[test]
    fn diagonal_eigenpairs() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let e = sym_eig(&a).unwrap();
        assert_eq!(e.eigenvalues.as_slice(), &[4.0, 1.0]);
        assert_close!(e.eigenvectors[(0, 1)].abs(), 1.0, 1e-15);
        assert_close!(e.eigenvectors[(1, 0)].abs(), 1.0, 1e-15);
        assert!(e.eigenvectors[(1, 0)] > 0.0 && e.eigenvectors[(0, 1)] > 0.0);
    }

    #[test]
    fn two_by_two_hand_case() {
        // characteristic polynomial (2-l)^2 - 1 = 0 -> l = 3, 1
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = sym_eig(&a).unwrap();
        assert_close!(e.eigenvalues[0], 3.0, 1e-14);
        assert_close!(e.eigenvalues[1], 1.0, 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_close!(e.eigenvectors[(0, 0)], h, 1e-14);
        assert_close!(e.eigenvectors[(1, 0)], h, 1e-14);
        assert_close!(e.eigenvectors[(0, 1)], h, 1e-14);
        assert_close!(e.eigenvectors[(1, 1)], -h, 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(sym_eig(&a), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0 + 1e-13, 1.0, 2.0]);
        let e = sym_eig(&a).unwrap();
        assert_close!(e.eigenvalues[0], 3.0, 1e-12);
    }

    #[test]
    fn spd_trivial_solves() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(solve_spd(&DMatrix::identity(3, 3), &b).unwrap(), b);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = solve_spd(&a, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert_close!(x[0], 1.0, 1e-14);
        assert_close!(x[1], 2.0, 1e-14);
    }

    #[test]
    fn spd_random_residual() {
        // A = B'B + I is SPD by construction
        let b = DMatrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let a = b.transpose() * &b + DMatrix::identity(5, 5);
        let rhs = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let x = solve_spd(&a, &rhs).unwrap();
        assert!((&a * &x - &rhs).norm() <= 1e-8 * rhs.norm());
    }

    #[test]
    fn spd_singular_reports_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = solve_spd(&a, &DVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        match err {
            Error::Singular { condition, .. } => assert!(condition > 1e12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn kron_layout() {
        assert_eq!(kron(&[1.0], &[1.0, 2.0]), vec![1.0, 2.0]);
        assert_eq!(kron(&[1.0, 0.0], &[0.0, 1.0]), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(kron(&[2.0, 3.0], &[1.0, -1.0]), vec![2.0, -2.0, 3.0, -3.0]);
    }

    #[test]
    fn norms_of_small_matrices() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_close!(spectral_norm(&i2), 1.0, 1e-15);
        assert_close!(frob_norm(&i2), 2f64.sqrt(), 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0]));
        assert_close!(spectral_norm(&d), 4.0, 1e-14);
        assert_close!(frob_norm(&d), 5.0, 1e-15);
    }

    #[test]
    fn rank_one_spectral_norm() {
        // u v' has a single singular value ||u|| ||v||
        let u = DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let a = &u * v.transpose();
        assert_close!(spectral_norm(&a), 3.0 * 5.0, 1e-12);
    }

    #[test]
    fn min_norm_interpolates_underdetermined() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let x = min_norm_lstsq(&a, &DVector::from_vec(vec![2.0])).unwrap();
        assert_close!(x[0], 1.0, 1e-14);
        assert_close!(x[1], 1.0, 1e-14);
    }

    #[test]
    fn leading_sign_skips_negligible_entries() {
        assert_eq!(leading_sign(&[1e-20, -1.0]), -1.0);
        assert_eq!(leading_sign(&[0.0, 0.0]), 1.0);
    }
}
