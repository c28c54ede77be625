//! Dense complex linear algebra shared by the whole crate.
//!
//! Hermitian eigendecompositions call LAPACK's divide-and-conquer routine
//! `zheevd` directly; the unitaries assembled from its eigenvectors are
//! orthonormal to roundoff, which the integrator relies on. Singular value
//! decompositions go through ndarray-linalg.

use ndarray::{Array1, Array2};
use ndarray_linalg::{JobSvd, SVDDC};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CVec = Array1<C64>;
pub type CMat = Array2<C64>;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("LAPACK {routine} failed with info={info}")]
    Lapack { routine: &'static str, info: i32 },
    #[error("singular value decomposition failed: {0}")]
    Svd(String),
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

#[link(name = "openblas")]
extern "C" {
    fn zheevd_(
        jobz: *const i8,
        uplo: *const i8,
        n: *const i32,
        a: *mut C64,
        lda: *const i32,
        w: *mut f64,
        work: *mut C64,
        lwork: *const i32,
        rwork: *mut f64,
        lrwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );
    fn openblas_set_num_threads(n: i32);
}

/// Caps the number of BLAS threads used by every subsequent kernel call.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) }
}

/// Conjugate transpose.
pub fn dag(a: &CMat) -> CMat {
    a.t().map(|z| z.conj())
}

/// (A + A†)/2; absorbs roundoff asymmetry before eigendecompositions.
pub fn hermitize(a: &CMat) -> CMat {
    let mut out = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)].conj());
        }
    }
    out
}

/// Frobenius norm of A - A†.
pub fn herm_residual(a: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] - a[(j, i)].conj()).norm_sqr();
        }
    }
    acc.sqrt()
}

pub fn frob_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// max |(U†U - 1)_ij|.
pub fn unitarity_residual(u: &CMat) -> f64 {
    let g = dag(u).dot(u);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matrix whose columns are the
/// corresponding orthonormal eigenvectors. Only the lower triangle of `a` is
/// read, so tiny Hermiticity violations in the upper triangle are ignored.
pub fn eigh(a: &CMat) -> Result<(Array1<f64>, CMat), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare { rows: n, cols: a.ncols() });
    }
    if n == 0 {
        return Ok((Array1::zeros(0), CMat::zeros((0, 0))));
    }
    // Column-major copy for LAPACK.
    let mut buf = vec![C64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            buf[j * n + i] = a[(i, j)];
        }
    }
    let mut w = vec![0.0f64; n];
    let jobz = b'V' as i8;
    let uplo = b'L' as i8;
    let n_i = n as i32;
    let mut info: i32 = 0;

    // Workspace query.
    let mut work_q = [C64::new(0.0, 0.0)];
    let mut rwork_q = [0.0f64];
    let mut iwork_q = [0i32];
    let minus_one = -1i32;
    unsafe {
        zheevd_(
            &jobz, &uplo, &n_i, buf.as_mut_ptr(), &n_i, w.as_mut_ptr(),
            work_q.as_mut_ptr(), &minus_one, rwork_q.as_mut_ptr(), &minus_one,
            iwork_q.as_mut_ptr(), &minus_one, &mut info,
        );
    }
    if info != 0 {
        return Err(LinalgError::Lapack { routine: "zheevd (workspace query)", info });
    }
    let lwork = work_q[0].re as i32;
    let lrwork = rwork_q[0] as i32;
    let liwork = iwork_q[0];
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        zheevd_(
            &jobz, &uplo, &n_i, buf.as_mut_ptr(), &n_i, w.as_mut_ptr(),
            work.as_mut_ptr(), &lwork, rwork.as_mut_ptr(), &lrwork,
            iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(LinalgError::Lapack { routine: "zheevd", info });
    }
    let mut vectors = CMat::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vectors[(i, j)] = buf[j * n + i];
        }
    }
    Ok((Array1::from_vec(w), vectors))
}

/// exp(-i * factor * H) for Hermitian H, via eigendecomposition.
///
/// The result is unitary to roundoff for any real `factor`.
pub fn expm_minus_i(h: &CMat, factor: f64) -> Result<CMat, LinalgError> {
    let (w, e) = eigh(h)?;
    let n = h.nrows();
    let mut scaled = e.clone();
    for (k, &wk) in w.iter().enumerate() {
        let phase = C64::from_polar(1.0, -factor * wk);
        for i in 0..n {
            scaled[(i, k)] *= phase;
        }
    }
    Ok(scaled.dot(&dag(&e)))
}

/// Kronecker product a (m x n) with b (p x q) -> (mp x nq).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (m, n) = a.dim();
    let (p, q) = b.dim();
    let mut out = CMat::zeros((m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            let aij = a[(i, j)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for r in 0..p {
                for c in 0..q {
                    out[(i * p + r, j * q + c)] = aij * b[(r, c)];
                }
            }
        }
    }
    out
}

/// Thin SVD: a = u * diag(s) * vh with u (m x k), s (k), vh (k x n), k = min(m, n).
pub fn svd_thin(a: &CMat) -> Result<(CMat, Array1<f64>, CMat), LinalgError> {
    let (u, s, vh) = a
        .svddc(JobSvd::Some)
        .map_err(|e| LinalgError::Svd(e.to_string()))?;
    let u = u.ok_or_else(|| LinalgError::Svd("left vectors missing".into()))?;
    let vh = vh.ok_or_else(|| LinalgError::Svd("right vectors missing".into()))?;
    Ok((u, s, vh))
}

/// Singular values only, descending.
pub fn singular_values(a: &CMat) -> Result<Array1<f64>, LinalgError> {
    let (_, s, _) = a
        .svddc(JobSvd::None)
        .map_err(|e| LinalgError::Svd(e.to_string()))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = CMat::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        hermitize(&a)
    }

    #[test]
    fn eigh_reconstructs_known_pauli_x() {
        let mut x = CMat::zeros((2, 2));
        x[(0, 1)] = C64::new(1.0, 0.0);
        x[(1, 0)] = C64::new(1.0, 0.0);
        let (w, e) = eigh(&x).unwrap();
        assert_abs_diff_eq!(w[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 1.0, epsilon = 1e-14);
        let mut rebuilt = CMat::zeros((2, 2));
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    rebuilt[(i, j)] += w[k] * e[(i, k)] * e[(j, k)].conj();
                }
            }
        }
        assert!(max_abs(&(&rebuilt - &x)) < 1e-14);
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let h = CMat::zeros((3, 3));
        let u = expm_minus_i(&h, 0.7).unwrap();
        assert!(unitarity_residual(&u) < 1e-14);
        assert_abs_diff_eq!(u[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(u[(1, 2)].norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_matches_analytic_two_level_rotation() {
        // exp(-i t X) = cos t - i sin t X
        let mut x = CMat::zeros((2, 2));
        x[(0, 1)] = C64::new(1.0, 0.0);
        x[(1, 0)] = C64::new(1.0, 0.0);
        let t = 0.37;
        let u = expm_minus_i(&x, t).unwrap();
        assert_abs_diff_eq!(u[(0, 0)].re, t.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(u[(0, 1)].im, -t.sin(), epsilon = 1e-14);
    }

    #[test]
    fn kron_matches_hand_expansion() {
        let mut a = CMat::zeros((2, 1));
        a[(0, 0)] = C64::new(2.0, 0.0);
        a[(1, 0)] = C64::new(0.0, 1.0);
        let mut b = CMat::zeros((1, 2));
        b[(0, 0)] = C64::new(1.0, 0.0);
        b[(0, 1)] = C64::new(3.0, 0.0);
        let k = kron(&a, &b);
        assert_eq!(k.dim(), (2, 2));
        assert_eq!(k[(0, 1)], C64::new(6.0, 0.0));
        assert_eq!(k[(1, 0)], C64::new(0.0, 1.0));
    }

    #[test]
    fn svd_thin_recovers_rank() {
        // Rank-1 outer product.
        let mut a = CMat::zeros((3, 2));
        for i in 0..3 {
            for j in 0..2 {
                a[(i, j)] = C64::new((i + 1) as f64 * (j + 1) as f64, 0.0);
            }
        }
        let (_, s, _) = svd_thin(&a).unwrap();
        assert!(s[0] > 1.0);
        assert!(s[1] < 1e-12 * s[0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eigh_unitary_and_reconstruction(n in 1usize..12, seed in 0u64..1_000) {
            let a = random_hermitian(n, seed);
            let (w, e) = eigh(&a).unwrap();
            prop_assert!(unitarity_residual(&e) < 1e-12);
            let mut rebuilt = CMat::zeros((n, n));
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        rebuilt[(i, j)] += w[k] * e[(i, k)] * e[(j, k)].conj();
                    }
                }
            }
            prop_assert!(max_abs(&(&rebuilt - &a)) < 1e-11);
            for k in 1..n {
                prop_assert!(w[k] >= w[k - 1]);
            }
        }

        #[test]
        fn expm_is_unitary_and_inverts(n in 1usize..10, seed in 0u64..1_000) {
            let h = random_hermitian(n, seed);
            let u = expm_minus_i(&h, 0.31).unwrap();
            prop_assert!(unitarity_residual(&u) < 1e-12);
            let back = expm_minus_i(&h, -0.31).unwrap();
            let prod = u.dot(&back);
            let mut eye = CMat::zeros((n, n));
            for i in 0..n { eye[(i, i)] = C64::new(1.0, 0.0); }
            prop_assert!(max_abs(&(&prod - &eye)) < 1e-12);
        }
    }
}
