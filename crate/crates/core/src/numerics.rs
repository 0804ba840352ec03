//! Dense linear-algebra kernel shared by every other module.
//!
//! Problem sizes in this crate are tiny (state dimension 2, input dimension
//! 1), so the solvers favour exactness and simplicity over scalability: the
//! discrete Lyapunov equation is solved through the Kronecker product, and
//! eigenvalues come straight from the Schur form.

use crate::{Error, Mat, Result};

/// Stability margin used when rejecting Lyapunov solves near the unit circle.
pub const EPS_STAB: f64 = 1e-9;

/// Symmetric part `(M + M')/2`.
pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

fn symmetry_deviation(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

/// Solves the discrete Lyapunov equation `P = Q + A P A'` for `P`.
///
/// `Q` must be symmetric and `A` Schur stable. The solve is exact up to
/// floating point: `vec(P) = (I - A (x) A)^-1 vec(Q)`.
pub fn solve_dlyap(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "A must be square");
    assert_eq!(q.shape(), (n, n), "Q must match A");

    let dev = symmetry_deviation(q);
    if dev > 1e-9 * (1.0 + q.norm()) {
        return Err(Error::NonSymmetric { deviation: dev });
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 - EPS_STAB {
        return Err(Error::NotStable { rho });
    }

    let kron = a.kronecker(a);
    let lhs = Mat::identity(n * n, n * n) - kron;
    let q_sym = sym(q);
    let rhs = crate::Vec64::from_column_slice(q_sym.as_slice());
    let vec_p = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllConditioned { detail: "Lyapunov Kronecker solve failed".into() })?;
    let p = Mat::from_column_slice(n, n, vec_p.as_slice());
    Ok(sym(&p))
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &Mat) -> f64 {
    assert_eq!(a.nrows(), a.ncols(), "spectral radius needs a square matrix");
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Moore–Penrose pseudoinverse via SVD with a relative rank cutoff.
pub fn pinv(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if m.iter().all(|&x| x == 0.0) {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12 * (r.max(c) as f64);
    svd.pseudo_inverse(eps).expect("svd computed with u and v_t")
}

/// True iff `M` is symmetric (within `tol`) with smallest eigenvalue `>= -tol`.
pub fn is_psd(m: &Mat, tol: f64) -> Result<bool> {
    let dev = symmetry_deviation(m);
    if dev > tol.max(1e-9 * (1.0 + m.norm())) {
        return Err(Error::NonSymmetric { deviation: dev });
    }
    Ok(min_symmetric_eigenvalue(&sym(m)) >= -tol)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    nalgebra::SymmetricEigen::new(sym(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetric PSD square root; tiny negative eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let eig = nalgebra::SymmetricEigen::new(sym(m));
    let sqrt_vals =
        crate::Vec64::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&v| v.max(0.0).sqrt()));
    &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// 2-norm condition number estimate (sigma_max / sigma_min).
pub fn cond_2(m: &Mat) -> f64 {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Matrix exponential by scaling-and-squaring with a Taylor core.
pub fn expm(a: &Mat) -> Mat {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    let norm = a.norm();
    let scale_pow = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scaled = a / 2f64.powi(scale_pow as i32);

    let mut result = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        result += &term;
    }
    for _ in 0..scale_pow {
        result = &result * &result;
    }
    result
}

/// Zero-order-hold discretization of `(A, B)` at sampling period `dt`.
pub fn discretize(a: &Mat, b: &Mat, dt: f64) -> (Mat, Mat) {
    let n = a.nrows();
    let m = b.ncols();
    assert_eq!(b.nrows(), n);
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug);
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    (ad, bd)
}

/// Rank of the controllability matrix `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(a: &Mat, b: &Mat) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = Mat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        ctrb.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * &block;
    }
    let svd = ctrb.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count()
}
