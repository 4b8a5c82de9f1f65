//! Dense linear-algebra primitives.
//!
//! Matrices are column-major and `vec` stacks columns, so that
//! `vec(A X Bᵀ) = (B ⊗ A) vec(X)` holds with the Kronecker product below.
//!
//! Decompositions (SVD, symmetric and general eigenvalues) go through faer;
//! nalgebra's bidiagonal SVD does not reconstruct some rank-deficient inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Problems up to this size use a dense eigensolver for the spectral radius.
const DENSE_EIGEN_LIMIT: usize = 2000;

/// Standard Kronecker product `M ⊗ K`.
pub fn kron(m: &Mat, k: &Mat) -> Mat {
    let (p, q) = m.shape();
    let (mr, nc) = k.shape();
    let mut out = Mat::zeros(p * mr, q * nc);
    for j in 0..q {
        for i in 0..p {
            let mij = m[(i, j)];
            if mij == 0.0 {
                continue;
            }
            let mut block = out.view_mut((i * mr, j * nc), (mr, nc));
            block.zip_apply(k, |o, kv| *o = mij * kv);
        }
    }
    out
}

/// Column-stacking vectorization.
pub fn vec_of(m: &Mat) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn mat_of(v: &[f64], rows: usize, cols: usize) -> Mat {
    Mat::from_column_slice(rows, cols, v)
}

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frob_inner(a: &Mat, b: &Mat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frob_sq(a: &Mat) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Entry-wise rearrangement taking an `ND×ND` matrix to a `D²×N²` matrix such
/// that `rearrange(M ⊗ K) = vec(M) vec(K)ᵀ` for `M: D×D`, `K: N×N`.
///
/// Row `i + jD` of the result is `vec` of the `(i, j)` `N×N` block of `a`.
pub fn rearrange(a: &Mat, n: usize, d: usize) -> Result<Mat> {
    let nd = n * d;
    if a.nrows() != nd || a.ncols() != nd {
        return Err(Error::Shape(format!(
            "rearrange expects a {nd}x{nd} matrix for (N={n}, D={d}), got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut out = Mat::zeros(d * d, n * n);
    for j in 0..d {
        for i in 0..d {
            let row = i + j * d;
            for q in 0..n {
                for p in 0..n {
                    out[(row, p + q * n)] = a[(i * n + p, j * n + q)];
                }
            }
        }
    }
    Ok(out)
}

/// Inverse permutation of [`rearrange`].
pub fn rearrange_inv(b: &Mat, n: usize, d: usize) -> Result<Mat> {
    if b.nrows() != d * d || b.ncols() != n * n {
        return Err(Error::Shape(format!(
            "rearrange_inv expects a {}x{} matrix for (N={n}, D={d}), got {}x{}",
            d * d,
            n * n,
            b.nrows(),
            b.ncols()
        )));
    }
    let mut out = Mat::zeros(n * d, n * d);
    for j in 0..d {
        for i in 0..d {
            let row = i + j * d;
            for q in 0..n {
                for p in 0..n {
                    out[(i * n + p, j * n + q)] = b[(row, p + q * n)];
                }
            }
        }
    }
    Ok(out)
}

/// Largest eigenvalue modulus. Dense Schur eigenvalues up to 2000 rows,
/// power iteration beyond.
pub fn spectral_radius(a: &Mat) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if a.nrows() <= DENSE_EIGEN_LIMIT {
        let eig = to_faer(a)
            .eigenvalues()
            .map_err(|e| Error::IllConditioned(format!("eigenvalue iteration failed: {e:?}")))?;
        Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
    } else {
        Ok(power_radius(a, 1e-10, 100_000))
    }
}

/// Power iteration on two-step growth ratios, which also settles for a
/// dominant complex-conjugate pair.
fn power_radius(a: &Mat, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    // deterministic, non-degenerate start
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.7548776662466927).fract());
    x /= x.norm();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let y = a * &x;
        let z = a * &y;
        let zn = z.norm();
        if zn == 0.0 {
            return 0.0;
        }
        let est = zn.sqrt();
        x = z / zn;
        if (est - prev).abs() <= tol * est.max(f64::MIN_POSITIVE) {
            return est;
        }
        prev = est;
    }
    prev
}

fn to_faer(a: &Mat) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(a: faer::MatRef<'_, f64>) -> Mat {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD with singular values sorted in decreasing order.
/// Returns `(L, σ, R)` with `a = L diag(σ) Rᵀ`.
pub fn sorted_svd(a: &Mat) -> (Mat, Vec<f64>, Mat) {
    let k = a.nrows().min(a.ncols());
    if k == 0 || a.iter().all(|&x| x == 0.0) {
        // faer returns arbitrary frames here too; fix them for determinism
        return (Mat::identity(a.nrows(), k), vec![0.0; k], Mat::identity(a.ncols(), k));
    }
    match to_faer(a).thin_svd() {
        Ok(svd) => {
            let s = svd.S().column_vector();
            (from_faer(svd.U()), (0..k).map(|i| s[i]).collect(), from_faer(svd.V()))
        }
        // non-finite input: return NaNs rather than panic
        Err(_) => (
            Mat::from_element(a.nrows(), k, f64::NAN),
            vec![f64::NAN; k],
            Mat::from_element(a.ncols(), k, f64::NAN),
        ),
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues decreasing.
pub fn sym_eigen_desc(a: &Mat) -> (Vec<f64>, Mat) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    match to_faer(&sym).self_adjoint_eigen(faer::Side::Lower) {
        Ok(eig) => {
            let s = eig.S().column_vector();
            let u = eig.U();
            // faer sorts ascending
            let vals = (0..n).rev().map(|i| s[i]).collect();
            let vecs = Mat::from_fn(n, n, |r, c| u[(r, n - 1 - c)]);
            (vals, vecs)
        }
        Err(_) => (vec![f64::NAN; n], Mat::from_element(n, n, f64::NAN)),
    }
}

/// Condition number of a symmetric positive semi-definite matrix
/// (`+∞` when singular or indefinite).
pub fn spd_condition(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let (vals, _) = sym_eigen_desc(a);
    let hi = vals[0];
    let lo = *vals.last().unwrap();
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &Mat) -> Option<Mat> {
    let sym = (a + a.transpose()) * 0.5;
    sym.cholesky().map(|c| c.inverse())
}

/// Solves the symmetric normal equations `G x = b`, optionally adding a small
/// ridge when `G` is ill-conditioned. Fails when the condition number stays
/// above `cond_limit`.
pub(crate) fn solve_normal(
    gram: &Mat,
    rhs: &Mat,
    cond_limit: f64,
    ridge: bool,
) -> std::result::Result<Mat, f64> {
    let p = gram.nrows();
    let mut g = (gram + gram.transpose()) * 0.5;
    let mut cond = spd_condition(&g);
    if cond > cond_limit && ridge {
        let tr = g.trace();
        let mut eps = 1e-10 * tr / p as f64;
        if !(eps > 0.0) {
            eps = 1e-10;
        }
        for i in 0..p {
            g[(i, i)] += eps;
        }
        cond = spd_condition(&g);
    }
    if cond > cond_limit {
        return Err(cond);
    }
    match g.cholesky() {
        Some(c) => Ok(c.solve(rhs)),
        None => Err(cond),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let out = kron(&Mat::identity(2, 2), &Mat::identity(3, 3));
        assert_eq!(out, Mat::identity(6, 6));
        let s = kron(&Mat::from_element(1, 1, 2.0), &Mat::from_element(1, 1, 3.0));
        assert_eq!(s[(0, 0)], 6.0);
    }

    #[test]
    fn kron_matches_vec_identity() {
        // vec(A X Bᵀ) = (B ⊗ A) vec(X)
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 3);
        let b = random(&mut rng, 2, 2);
        let x = random(&mut rng, 3, 2);
        let lhs = vec_of(&(&a * &x * b.transpose()));
        let rhs = kron(&b, &a) * vec_of(&x);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn kron_spectral_radius_is_multiplicative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a = random(&mut rng, 2, 2);
            let b = random(&mut rng, 2, 2);
            let lhs = spectral_radius(&kron(&a, &b)).unwrap();
            let rhs = spectral_radius(&a).unwrap() * spectral_radius(&b).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }

    #[test]
    fn rearrange_scalar_case() {
        let a = Mat::from_element(1, 1, 6.0);
        assert_eq!(rearrange(&a, 1, 1).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn rearrange_rejects_bad_shape() {
        assert!(matches!(rearrange(&Mat::zeros(5, 6), 3, 2), Err(Error::Shape(_))));
        assert!(matches!(rearrange_inv(&Mat::zeros(4, 8), 3, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn rearrange_inv_of_outer_product_is_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(&mut rng, 2, 2);
        let k = random(&mut rng, 3, 3);
        let outer = vec_of(&m) * vec_of(&k).transpose();
        assert_eq!(rearrange_inv(&outer, 3, 2).unwrap(), kron(&m, &k));
        assert_eq!(rearrange_inv(&Mat::zeros(4, 9), 3, 2).unwrap(), Mat::zeros(6, 6));
    }

    #[test]
    fn spectral_radius_examples() {
        assert!((spectral_radius(&Mat::identity(3, 3)).unwrap() - 1.0).abs() < 1e-12);
        // 0.3 I + 0.4 W on the directed 3-cycle: circulant, eigenvalues 0.3 + 0.4ω
        let mut w = Mat::zeros(3, 3);
        for i in 0..3 {
            w[(i, (i + 1) % 3)] = 1.0;
        }
        let b = Mat::identity(3, 3) * 0.3 + w * 0.4;
        assert!((spectral_radius(&b).unwrap() - 0.7).abs() < 1e-12);
        assert!(matches!(spectral_radius(&Mat::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn power_iteration_agrees_with_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = Mat::from_fn(30, 30, |_, _| rng.random_range(0.0..1.0));
        a /= 30.0;
        let dense = spectral_radius(&a).unwrap();
        let power = power_radius(&a, 1e-12, 100_000);
        assert!((dense - power).abs() < 1e-8 * dense);
        // rotation-like block with a complex dominant pair
        let c = Mat::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((power_radius(&c, 1e-12, 1000) - 0.9).abs() < 1e-10);
    }

    #[test]
    fn sorted_svd_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 5, 4);
        let (l, s, r) = sorted_svd(&a);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let rec = &l * Mat::from_diagonal(&DVector::from_vec(s)) * r.transpose();
        assert!((rec - a).norm() < 1e-12);
    }

    #[test]
    fn solve_normal_ridge_rescues_zero_gram() {
        let g = Mat::zeros(2, 2);
        let b = Mat::zeros(2, 1);
        assert!(solve_normal(&g, &b, 1e12, false).is_err());
        let x = solve_normal(&g, &b, 1e12, true).unwrap();
        assert_eq!(x, Mat::zeros(2, 1));
    }
}
