//! Dense linear-algebra helpers shared by every module.
//!
//! All rank decisions go through [`rank_tolerance`]: a singular value is zero
//! when it is below `max(rows, cols) * sigma_max * 1e-10`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex<f64>>;

/// Relative factor of the shared rank threshold.
pub const RANK_RTOL: f64 = 1e-10;

/// Sorted (descending) singular values.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn rank_tolerance_from(max_dim: usize, sigma_max: f64) -> f64 {
    max_dim as f64 * sigma_max * RANK_RTOL
}

pub fn rank_tolerance(m: &Mat) -> f64 {
    let sv = singular_values(m);
    rank_tolerance_from(m.nrows().max(m.ncols()), sv.first().copied().unwrap_or(0.0))
}

pub fn numerical_rank(m: &Mat) -> usize {
    let sv = singular_values(m);
    let Some(&smax) = sv.first() else { return 0 };
    let tol = rank_tolerance_from(m.nrows().max(m.ncols()), smax);
    sv.iter().filter(|&&s| s > tol).count()
}

/// Moore-Penrose pseudo-inverse with the shared rank tolerance.
pub fn pinv(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("U requested");
    let vt = svd.v_t.expect("V^T requested");
    let smax = svd.singular_values.max();
    let tol = rank_tolerance_from(r.max(c), smax);
    let mut out = Mat::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part, eigenvalues ascending.
pub fn sym_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), Mat::zeros(0, 0));
    }
    let eig = symmetrize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Mat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigen(m).0.last().copied().unwrap_or(0.0)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigen(m).0.first().copied().unwrap_or(0.0)
}

/// Factor `W` with `W W^T = M` for symmetric PSD `M`; round-off negative
/// eigenvalues are clipped to zero and zero columns dropped. Errors if an
/// eigenvalue is below `-1e-8 * ||M||`.
pub fn psd_factor(m: &Mat) -> Result<Mat> {
    let (vals, vecs) = sym_eigen(m);
    let scale = vals.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if let Some(&lmin) = vals.first() {
        if lmin < -1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::IndefiniteMiddleMatrix(lmin));
        }
    }
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] > scale * 1e-14)
        .collect();
    let mut w = Mat::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        w.set_column(c, &(vecs.column(i) * vals[i].sqrt()));
    }
    Ok(w)
}

/// Symmetric PSD square root `M^{1/2}` (symmetric, same size as `M`).
pub fn sqrt_psd(m: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let d = Vector::from_iterator(vals.len(), vals.iter().map(|v| v.max(0.0).sqrt()));
    &vecs * Mat::from_diagonal(&d) * vecs.transpose()
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularCovariance(format!("{}x{} matrix is singular", m.nrows(), m.ncols())))
}

/// Inverse of a symmetric positive-definite matrix through Cholesky.
pub fn spd_inverse(m: &Mat) -> Result<Mat> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::SingularCovariance("matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn column(m: &Mat, j: usize) -> Mat {
    m.columns(j, 1).into_owned()
}

pub fn select_columns(m: &Mat, cols: &[usize]) -> Mat {
    Mat::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

pub fn hcat(blocks: &[&Mat]) -> Result<Mat> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    if blocks.iter().any(|b| b.nrows() != rows) {
        return Err(Error::ShapeMismatch("horizontal concatenation with unequal row counts".into()));
    }
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), b.shape()).copy_from(*b);
        at += b.ncols();
    }
    Ok(out)
}

pub fn vcat(blocks: &[&Mat]) -> Result<Mat> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    if blocks.iter().any(|b| b.ncols() != cols) {
        return Err(Error::ShapeMismatch("vertical concatenation with unequal column counts".into()));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), b.shape()).copy_from(*b);
        at += b.nrows();
    }
    Ok(out)
}

/// Extended observability matrix `[C; C A; ...; C A^{L-1}]`.
pub fn observability(c: &Mat, a: &Mat, horizon: usize) -> Mat {
    let (ny, n) = c.shape();
    let mut out = Mat::zeros(ny * horizon, n);
    let mut cak = c.clone();
    for i in 0..horizon {
        out.view_mut((i * ny, 0), (ny, n)).copy_from(&cak);
        cak = &cak * a;
    }
    out
}

pub fn complex(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

/// Singular values of a complex matrix, descending.
pub fn complex_singular_values(m: &CMat) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_satisfies_penrose_identity() {
        let m = Mat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 0.0, 0.0]);
        let p = pinv(&m);
        assert!((&m * &p * &m - &m).norm() < 1e-12);
        assert_eq!(numerical_rank(&m), 1);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = Mat::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let m = &a * a.transpose();
        let w = psd_factor(&m).unwrap();
        assert_eq!(w.ncols(), 2);
        assert!((&w * w.transpose() - &m).norm() < 1e-12);
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_factor(&m), Err(Error::IndefiniteMiddleMatrix(_))));
    }

    #[test]
    fn concatenation_checks_shapes() {
        let a = Mat::zeros(2, 1);
        let b = Mat::zeros(3, 1);
        assert!(hcat(&[&a, &b]).is_err());
        assert_eq!(vcat(&[&a, &b]).unwrap().shape(), (5, 1));
    }
}
