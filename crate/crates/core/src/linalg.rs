//! Small complex linear-algebra helpers shared by the transmit/receive code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative tolerance under which two eigenvalues count as tied.
pub const EIG_TIE_TOL: f64 = 1e-12;

/// Magnitude below which a vector component counts as zero for the sign rule.
const SIGN_EPS: f64 = 1e-12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest relative deviation from Hermitian symmetry, `max|A - A^H| / max|A|`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Replaces `A` by `(A + A^H)/2`.
pub fn symmetrize(a: &mut CMat) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = c(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

/// Multiplies `v` by a unit phase so that its first non-negligible component is
/// real and positive.
pub fn fix_phase(v: &mut CVec) {
    let scale = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return;
    }
    if let Some(pivot) = v.iter().find(|z| z.norm() > SIGN_EPS * scale) {
        let rot = pivot.conj() / pivot.norm();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Full eigen-decomposition of a Hermitian matrix.
pub fn hermitian_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let mut a = a.clone();
    symmetrize(&mut a);
    let eig = SymmetricEigen::new(a);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Dominant eigenpair of a Hermitian matrix.
///
/// Ties in the largest eigenvalue resolve to the lowest index in the solver's
/// output order; the eigenvector phase follows [`fix_phase`].
pub fn dominant_eigenpair(a: &CMat) -> Result<(f64, CVec)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "dominant eigenpair needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matrix entry".into()));
    }
    let (values, vectors) = hermitian_eigen(a);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = EIG_TIE_TOL * max.abs().max(f64::MIN_POSITIVE);
    let idx = values
        .iter()
        .position(|&v| v >= max - tol)
        .expect("eigenvalue list is non-empty");
    let mut u: CVec = vectors.column(idx).into_owned();
    let norm = u.norm();
    if norm > 0.0 {
        u /= c(norm, 0.0);
    }
    fix_phase(&mut u);
    Ok((values[idx], u))
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn hpd_inverse(a: &CMat) -> Result<CMat> {
    let mut a = a.clone();
    symmetrize(&mut a);
    let n = a.nrows();
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{n}x{n} matrix is not positive definite")))?;
    // complex square roots never fail, so indefiniteness shows up as a
    // non-real or non-positive pivot
    let l = chol.l_dirty();
    if (0..n).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-12 * l[(i, i)].re) {
        return Err(Error::Singular(format!("{n}x{n} matrix is not positive definite")));
    }
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// General complex inverse via LU.
pub fn inverse(a: &CMat) -> Result<CMat> {
    let n = a.nrows();
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{n}x{n} matrix is not invertible")))
}

/// Copies the principal submatrix on `idx`.
pub fn principal_submatrix(a: &CMat, idx: &[usize]) -> CMat {
    CMat::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])])
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

pub fn trace_re(a: &CMat) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominant_pair_of_diagonal() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(4.0, 0.0), c(2.0, 0.0)]));
        let (l, u) = dominant_eigenpair(&a).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
        assert!((u[1] - c(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identity_tie_resolves_to_first_basis_vector() {
        let a = CMat::identity(5, 5);
        let (l, u) = dominant_eigenpair(&a).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        assert!((u[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!(u.iter().skip(1).all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn phase_rule_makes_first_component_real_positive() {
        let mut v = CVec::from_vec(vec![c(0.0, 0.0), c(0.0, -2.0), c(1.0, 1.0)]);
        fix_phase(&mut v);
        assert!(v[1].im.abs() < 1e-15 && v[1].re > 0.0);
        assert!((v[1].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hpd_inverse_rejects_indefinite() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(-1.0, 0.0)]));
        assert!(hpd_inverse(&a).is_err());
    }
}
