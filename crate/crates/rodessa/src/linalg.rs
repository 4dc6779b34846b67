//! Small dense linear-algebra kernels.
//!
//! The matrices handled here are modest (a few hundred rows/columns, factor
//! ranks below ~20), so simple high-accuracy algorithms win over tuned
//! libraries: one-sided Jacobi for the SVD, cyclic Jacobi for symmetric
//! eigendecompositions, and modified Gram-Schmidt with reorthogonalization
//! for thin QR. Everything is generic over the [`Scalar`] type.

use ndarray::{Array1, Array2};

use crate::scalar::{cast, Scalar};

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
///
/// `u` is m x r and `v` is n x r with r = min(m, n); singular values are
/// sorted in decreasing order. Columns of `u`/`v` belonging to zero singular
/// values are zero.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Array2<T>,
    pub s: Vec<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> Svd<T> {
    /// Reassemble `u * diag(s) * v^T`.
    pub fn reconstruct(&self) -> Array2<T> {
        let r = self.s.len();
        let mut us = self.u.clone();
        for j in 0..r {
            for i in 0..us.nrows() {
                us[[i, j]] *= self.s[j];
            }
        }
        us.dot(&self.v.t())
    }
}

/// One-sided Jacobi SVD.
///
/// Orthogonalizes the columns of the (possibly transposed) input until all
/// pairwise inner products are negligible. Deterministic: fixed cyclic sweep
/// order, no randomization.
pub fn jacobi_svd<T: Scalar>(a: &Array2<T>) -> Svd<T> {
    let (m, n) = a.dim();
    if m < n {
        // Work on the transpose so the orthogonalized side is the short one.
        let t = jacobi_svd(&a.t().to_owned());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }

    let mut b = a.clone();
    let mut v = Array2::<T>::eye(n);
    let tol = T::epsilon() * cast::<T>(64.0);
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut rotated = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut alpha = T::zero();
                let mut beta = T::zero();
                let mut gamma = T::zero();
                for r in 0..m {
                    let bi = b[[r, i]];
                    let bj = b[[r, j]];
                    alpha += bi * bi;
                    beta += bj * bj;
                    gamma += bi * bj;
                }
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (cast::<T>(2.0) * gamma);
                let t_rot = {
                    let denom = zeta.abs() + (T::one() + zeta * zeta).sqrt();
                    if zeta >= T::zero() {
                        T::one() / denom
                    } else {
                        -T::one() / denom
                    }
                };
                let c = T::one() / (T::one() + t_rot * t_rot).sqrt();
                let s = c * t_rot;
                for r in 0..m {
                    let bi = b[[r, i]];
                    let bj = b[[r, j]];
                    b[[r, i]] = c * bi - s * bj;
                    b[[r, j]] = s * bi + c * bj;
                }
                for r in 0..n {
                    let vi = v[[r, i]];
                    let vj = v[[r, j]];
                    v[[r, i]] = c * vi - s * vj;
                    v[[r, j]] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<T> = (0..n)
        .map(|j| {
            let mut acc = T::zero();
            for r in 0..m {
                acc += b[[r, j]] * b[[r, j]];
            }
            acc.sqrt()
        })
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).expect("finite norms"));

    let mut u = Array2::<T>::zeros((m, n));
    let mut vv = Array2::<T>::zeros((n, n));
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        if sigma > T::zero() {
            for r in 0..m {
                u[[r, dst]] = b[[r, src]] / sigma;
            }
        }
        for r in 0..n {
            vv[[r, dst]] = v[[r, src]];
        }
    }

    Svd { u, s, v: vv }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in decreasing order and the matching orthonormal
/// eigenvectors as columns. Intended for the small Gram matrices of the
/// factor updates.
pub fn sym_eigen<T: Scalar>(a: &Array2<T>) -> (Vec<T>, Array2<T>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen requires a square matrix");
    let mut m = a.clone();
    let mut q = Array2::<T>::eye(n);
    let tol = T::epsilon() * cast::<T>(64.0);
    let max_sweeps = 64;

    for _ in 0..max_sweeps {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += m[[i, i]].abs();
            for j in (i + 1)..n {
                off += m[[i, j]].abs();
            }
        }
        if off <= tol * (diag + off) {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = m[[i, j]];
                if apq.abs() <= tol * (m[[i, i]].abs() + m[[j, j]].abs() + apq.abs()) {
                    continue;
                }
                let theta = (m[[j, j]] - m[[i, i]]) / (cast::<T>(2.0) * apq);
                let t_rot = {
                    let denom = theta.abs() + (T::one() + theta * theta).sqrt();
                    if theta >= T::zero() {
                        T::one() / denom
                    } else {
                        -T::one() / denom
                    }
                };
                let c = T::one() / (T::one() + t_rot * t_rot).sqrt();
                let s = c * t_rot;
                for r in 0..n {
                    let mri = m[[r, i]];
                    let mrj = m[[r, j]];
                    m[[r, i]] = c * mri - s * mrj;
                    m[[r, j]] = s * mri + c * mrj;
                }
                for r in 0..n {
                    let mir = m[[i, r]];
                    let mjr = m[[j, r]];
                    m[[i, r]] = c * mir - s * mjr;
                    m[[j, r]] = s * mir + c * mjr;
                }
                for r in 0..n {
                    let qri = q[[r, i]];
                    let qrj = q[[r, j]];
                    q[[r, i]] = c * qri - s * qrj;
                    q[[r, j]] = s * qri + c * qrj;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[[y, y]].partial_cmp(&m[[x, x]]).expect("finite eigenvalues"));
    let mut vals = Vec::with_capacity(n);
    let mut vecs = Array2::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vals.push(m[[src, src]]);
        for r in 0..n {
            vecs[[r, dst]] = q[[r, src]];
        }
    }
    (vals, vecs)
}

/// Solve a symmetric positive semidefinite system via eigenvalue
/// pseudo-inverse with a relative cutoff.
///
/// Eigenvalues below `rel_cutoff * max_eigenvalue` are treated as zero,
/// yielding the minimum-norm least-squares solution. Returns the solution
/// and whether any component was clipped.
pub fn sym_solve_pinv<T: Scalar>(g: &Array2<T>, b: &Array1<T>, rel_cutoff: T) -> (Array1<T>, bool) {
    let (vals, vecs) = sym_eigen(g);
    let n = vals.len();
    let lambda_max = vals
        .iter()
        .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc });
    let cutoff = rel_cutoff * lambda_max;
    let mut clipped = false;
    let mut x = Array1::<T>::zeros(n);
    for k in 0..n {
        if vals[k].abs() <= cutoff || vals[k] == T::zero() {
            clipped = true;
            continue;
        }
        let mut proj = T::zero();
        for r in 0..n {
            proj += vecs[[r, k]] * b[r];
        }
        let coeff = proj / vals[k];
        for r in 0..n {
            x[r] += coeff * vecs[[r, k]];
        }
    }
    (x, clipped)
}

/// Thin QR factorization `a = q * r` with q m x n column-orthonormal.
///
/// Modified Gram-Schmidt with one reorthogonalization pass. Zero (or
/// numerically dependent) columns produce zero columns in `q` and a zero
/// row in `r`, which keeps products exact for rank-deficient inputs.
pub fn qr_thin<T: Scalar>(a: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let (m, n) = a.dim();
    let mut q = a.clone();
    let mut r = Array2::<T>::zeros((n, n));
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let mut dot = T::zero();
                for row in 0..m {
                    dot += q[[row, i]] * q[[row, j]];
                }
                r[[i, j]] += dot;
                for row in 0..m {
                    let qi = q[[row, i]];
                    q[[row, j]] = q[[row, j]] - dot * qi;
                }
            }
        }
        let mut norm = T::zero();
        for row in 0..m {
            norm += q[[row, j]] * q[[row, j]];
        }
        let norm = norm.sqrt();
        r[[j, j]] = norm;
        if norm > T::epsilon() * cast::<T>(16.0) {
            for row in 0..m {
                q[[row, j]] /= norm;
            }
        } else {
            r[[j, j]] = T::zero();
            for row in 0..m {
                q[[row, j]] = T::zero();
            }
        }
    }
    (q, r)
}

/// Frobenius norm of a matrix.
pub fn frobenius_norm<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().map(|&x| x * x).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array2::from_shape_fn((m, n), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        for (m, n, seed) in [(5, 3, 1), (3, 7, 2), (10, 10, 3), (35, 14, 4)] {
            let a = random_matrix(m, n, seed);
            let svd = jacobi_svd(&a);
            let err = frobenius_norm(&(&svd.reconstruct() - &a));
            assert!(err <= 1e-12 * frobenius_norm(&a).max(1.0), "err = {err}");
            // Orthonormal columns.
            let utu = svd.u.t().dot(&svd.u);
            for i in 0..svd.s.len() {
                for j in 0..svd.s.len() {
                    let expect = if i == j && svd.s[i] > 0.0 { 1.0 } else { 0.0 };
                    assert!((utu[[i, j]] - expect).abs() < 1e-12);
                }
            }
            // Decreasing singular values.
            for w in svd.s.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn svd_matches_known_two_by_two() {
        let a = array![[3.0, 0.0], [4.0, 5.0]];
        let svd = jacobi_svd(&a);
        // Known singular values of [[3,0],[4,5]]: sqrt(45) and sqrt(5).
        assert!((svd.s[0] - 45.0f64.sqrt()).abs() < 1e-12);
        assert!((svd.s[1] - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn svd_of_zero_matrix_is_zero() {
        let a = Array2::<f64>::zeros((4, 3));
        let svd = jacobi_svd(&a);
        assert!(svd.s.iter().all(|&s| s == 0.0));
        assert!(frobenius_norm(&svd.reconstruct()) == 0.0);
    }

    #[test]
    fn sym_eigen_recovers_spectrum() {
        let a = random_matrix(6, 6, 7);
        let sym = &a + &a.t().to_owned();
        let (vals, vecs) = sym_eigen(&sym);
        // A v = lambda v for each pair.
        for k in 0..6 {
            let v = vecs.column(k).to_owned();
            let av = sym.dot(&v);
            for r in 0..6 {
                assert!((av[r] - vals[k] * v[r]).abs() < 1e-10);
            }
        }
        for w in vals.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn pinv_solves_spd_and_singular_systems() {
        let a = random_matrix(4, 3, 11);
        let g = a.t().dot(&a); // SPD with prob 1
        let x_true = Array1::from(vec![1.0, -2.0, 0.5]);
        let b = g.dot(&x_true);
        let (x, clipped) = sym_solve_pinv(&g, &b, 1e-12);
        assert!(!clipped);
        for r in 0..3 {
            assert!((x[r] - x_true[r]).abs() < 1e-9);
        }

        // Rank-1 Gram matrix: minimum-norm solution still satisfies G x = b.
        let u = Array1::from(vec![1.0, 2.0, 2.0]);
        let mut g1 = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                g1[[i, j]] = u[i] * u[j];
            }
        }
        let b1 = g1.dot(&u);
        let (x1, clipped1) = sym_solve_pinv(&g1, &b1, 1e-12);
        assert!(clipped1);
        let res = &g1.dot(&x1) - &b1;
        assert!(res.iter().all(|&r| r.abs() < 1e-9));
    }

    #[test]
    fn qr_orthonormal_and_exact() {
        let a = random_matrix(8, 4, 13);
        let (q, r) = qr_thin(&a);
        let err = frobenius_norm(&(&q.dot(&r) - &a));
        assert!(err < 1e-12);
        let qtq = q.t().dot(&q);
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qr_handles_rank_deficiency() {
        let mut a = random_matrix(6, 3, 17);
        let c0 = a.column(0).to_owned();
        a.column_mut(2).assign(&c0); // duplicate column
        let (q, r) = qr_thin(&a);
        let err = frobenius_norm(&(&q.dot(&r) - &a));
        assert!(err < 1e-12);
    }
}
