//! Candidate low-rank fits used to initialize the robust iteration, plus the
//! M-scale selection rule that picks among them.
//!
//! Three candidates are computed: the classical truncated SVD, an L1 fit by
//! iteratively reweighted least squares, and the low-rank part of principal
//! component pursuit. The entrywise biweight fit lives here too; it doubles
//! as the CS competitor in the simulation harness.

use ndarray::Array2;

use crate::error::{Result, RodessaError};
use crate::fit::{diagonal_residuals, wls_update_u, wls_update_v};
use crate::linalg::{frobenius_norm, jacobi_svd};
use crate::loss::{mscale, LossSpec, MScaleConfig};
use crate::scalar::{cast, Scalar};
use crate::series::{diagonal_average, TrajectoryMatrix};

/// A rank-q factor pair; the estimation target is the product `u * v^T`.
///
/// The factors themselves are not identified: any invertible gauge
/// transformation leaves the product unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFit<T> {
    pub u: Array2<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> LowRankFit<T> {
    pub fn new(u: Array2<T>, v: Array2<T>) -> Self {
        assert_eq!(u.ncols(), v.ncols(), "factor ranks must agree");
        Self { u, v }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// Dense product `u * v^T`.
    pub fn product(&self) -> Array2<T> {
        self.u.dot(&self.v.t())
    }

    /// All-zero fit of the given shape and rank.
    pub fn zero(l: usize, k: usize, q: usize) -> Self {
        Self {
            u: Array2::zeros((l, q)),
            v: Array2::zeros((k, q)),
        }
    }

    /// Append a zero column to both factors, embedding the fit in the
    /// rank-(q+1) family without changing the product.
    pub fn pad_rank(&self) -> Self {
        let (l, q) = self.u.dim();
        let k = self.v.nrows();
        let mut u = Array2::zeros((l, q + 1));
        let mut v = Array2::zeros((k, q + 1));
        u.slice_mut(ndarray::s![.., ..q]).assign(&self.u);
        v.slice_mut(ndarray::s![.., ..q]).assign(&self.v);
        Self { u, v }
    }
}

/// Outcome of an iteratively reweighted fit, with its objective log.
#[derive(Debug, Clone)]
pub struct IterativeFit<T> {
    pub fit: LowRankFit<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Per-iteration objective values, starting at the initial fit.
    pub objective_trace: Vec<T>,
}

fn check_rank<T: Scalar>(x: &TrajectoryMatrix<T>, q: usize) -> Result<()> {
    let max = x.nrows().min(x.ncols());
    if q == 0 || q > max {
        return Err(RodessaError::RankTooLarge { rank: q, max });
    }
    Ok(())
}

/// Best rank-q approximation in Frobenius norm via the SVD, with the
/// singular values split evenly across the two factors.
pub fn svd_lowrank<T: Scalar>(x: &TrajectoryMatrix<T>, q: usize) -> Result<LowRankFit<T>> {
    check_rank(x, q)?;
    Ok(truncated_svd_fit(x.data(), q))
}

/// Rank-q truncation of an arbitrary matrix (shared by the SVD candidate and
/// the pursuit low-rank part).
pub(crate) fn truncated_svd_fit<T: Scalar>(a: &Array2<T>, q: usize) -> LowRankFit<T> {
    let svd = jacobi_svd(a);
    let (m, n) = a.dim();
    let mut u = Array2::<T>::zeros((m, q));
    let mut v = Array2::<T>::zeros((n, q));
    for r in 0..q.min(svd.s.len()) {
        let root = svd.s[r].sqrt();
        for i in 0..m {
            u[[i, r]] = svd.u[[i, r]] * root;
        }
        for i in 0..n {
            v[[i, r]] = svd.v[[i, r]] * root;
        }
    }
    LowRankFit::new(u, v)
}

/// Rank-q fit minimizing the entrywise L1 norm of the residual, by IRLS
/// with weights 1 / max(|R|, eps).
///
/// The logged objective is the eps-smoothed L1 norm that the reweighting
/// majorizes, so the trace is non-increasing by construction.
pub fn l1_lowrank<T: Scalar>(
    x: &TrajectoryMatrix<T>,
    q: usize,
    tol: T,
    max_iter: usize,
) -> Result<IterativeFit<T>> {
    check_rank(x, q)?;
    let data = x.data();
    let norm = frobenius_norm(data);
    let (l, k) = data.dim();
    if norm == T::zero() {
        return Ok(IterativeFit {
            fit: LowRankFit::zero(l, k, q),
            converged: true,
            iterations: 0,
            objective_trace: vec![T::zero()],
        });
    }
    let eps = cast::<T>(1e-8) * norm / cast::<T>((l * k) as f64).sqrt();
    let smoothed = |r: T| -> T {
        let a = r.abs();
        if a >= eps {
            a
        } else {
            (r * r + eps * eps) / (cast::<T>(2.0) * eps)
        }
    };

    let mut fit = truncated_svd_fit(data, q);
    let mut product = fit.product();
    let objective = |p: &Array2<T>| -> T {
        data.iter()
            .zip(p.iter())
            .map(|(&x, &f)| smoothed(x - f))
            .sum()
    };
    let mut trace = vec![objective(&product)];
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut w = Array2::<T>::zeros((l, k));
        for ((i, j), wv) in w.indexed_iter_mut() {
            let r = (data[[i, j]] - product[[i, j]]).abs();
            *wv = T::one() / r.max(eps);
        }
        let (v_new, _) = wls_update_v(&fit.u, &w, data);
        let fit_half = LowRankFit::new(fit.u.clone(), v_new);
        let (u_new, _) = wls_update_u(&fit_half.v, &w, data);
        let next = LowRankFit::new(u_new, fit_half.v);
        let next_product = next.product();
        let delta = frobenius_norm(&(&next_product - &product));
        let denom = frobenius_norm(&product).max(T::min_positive_value());
        fit = next;
        product = next_product;
        trace.push(objective(&product));
        if delta < tol * denom {
            converged = true;
            break;
        }
    }

    Ok(IterativeFit {
        fit,
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// Rank-q fit minimizing the entrywise biweight objective
/// sum rho_c(R_lk / sigma), with sigma the normal-consistent MAD of the
/// residuals from the SVD initial fit.
pub fn biweight_lowrank<T: Scalar>(
    x: &TrajectoryMatrix<T>,
    q: usize,
    tuning: T,
    tol: T,
    max_iter: usize,
) -> Result<IterativeFit<T>> {
    check_rank(x, q)?;
    let data = x.data();
    let (l, k) = data.dim();
    let mut fit = truncated_svd_fit(data, q);
    let mut product = fit.product();

    // Normal-consistent MAD of the initial residuals, floored to keep the
    // standardization defined when the initial fit is exact.
    let mut residuals: Vec<T> = data
        .iter()
        .zip(product.iter())
        .map(|(&x, &f)| x - f)
        .collect();
    let med = median_in_place(&mut residuals);
    let mut devs: Vec<T> = data
        .iter()
        .zip(product.iter())
        .map(|(&x, &f)| ((x - f) - med).abs())
        .collect();
    let mad = median_in_place(&mut devs);
    let rms = frobenius_norm(data) / cast::<T>((l * k) as f64).sqrt();
    let sigma = (cast::<T>(1.4826) * mad)
        .max(cast::<T>(1e-12) * rms)
        .max(T::epsilon());

    let loss = LossSpec::Biweight { c: tuning };
    let objective = |p: &Array2<T>| -> T {
        data.iter()
            .zip(p.iter())
            .map(|(&x, &f)| loss.rho((x - f) / sigma).expect("biweight accepts all reals"))
            .sum()
    };
    let mut trace = vec![objective(&product)];
    let mut converged = false;
    let mut iterations = 0;
    let cut = tuning * sigma;

    for _ in 0..max_iter {
        iterations += 1;
        let mut w = Array2::<T>::zeros((l, k));
        for ((i, j), wv) in w.indexed_iter_mut() {
            let r = data[[i, j]] - product[[i, j]];
            if r.abs() <= cut {
                let h = T::one() - (r * r) / (cut * cut);
                *wv = h * h;
            }
        }
        let (v_new, _) = wls_update_v(&fit.u, &w, data);
        let fit_half = LowRankFit::new(fit.u.clone(), v_new);
        let (u_new, _) = wls_update_u(&fit_half.v, &w, data);
        let next = LowRankFit::new(u_new, fit_half.v);
        let next_product = next.product();
        let delta = frobenius_norm(&(&next_product - &product));
        let denom = frobenius_norm(&product).max(T::min_positive_value());
        fit = next;
        product = next_product;
        trace.push(objective(&product));
        if delta < tol * denom {
            converged = true;
            break;
        }
    }

    Ok(IterativeFit {
        fit,
        converged,
        iterations,
        objective_trace: trace,
    })
}

fn median_in_place<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n == 0 {
        return T::zero();
    }
    if n % 2 == 0 {
        (values[n / 2 - 1] + values[n / 2]) / cast::<T>(2.0)
    } else {
        values[n / 2]
    }
}

/// Decomposition `x = lowrank + sparse` from principal component pursuit.
#[derive(Debug, Clone)]
pub struct PcpResult<T> {
    pub lowrank: Array2<T>,
    pub sparse: Array2<T>,
    pub converged: bool,
    pub iterations: usize,
}

/// Conventional pursuit penalty 1 / sqrt(max(L, K)).
pub fn pcp_default_lambda<T: Scalar>(l: usize, k: usize) -> T {
    T::one() / cast::<T>(l.max(k) as f64).sqrt()
}

/// Principal component pursuit by inexact augmented Lagrangian: approximately
/// minimizes ||A||_* + lambda ||E||_1 subject to A + E = X.
///
/// Each iteration applies singular value thresholding to the low-rank block
/// and soft thresholding to the sparse block, then grows the penalty by 1.5.
pub fn rpca_pcp<T: Scalar>(
    x: &TrajectoryMatrix<T>,
    lambda: Option<T>,
    tol: T,
    max_iter: usize,
) -> Result<PcpResult<T>> {
    let data = x.data();
    let (l, k) = data.dim();
    let lambda = lambda.unwrap_or_else(|| pcp_default_lambda(l, k));
    if lambda <= T::zero() {
        return Err(RodessaError::InvalidArgument(
            "pursuit penalty must be positive".into(),
        ));
    }
    let norm = frobenius_norm(data);
    if norm == T::zero() {
        return Ok(PcpResult {
            lowrank: Array2::zeros((l, k)),
            sparse: Array2::zeros((l, k)),
            converged: true,
            iterations: 0,
        });
    }

    let spectral = jacobi_svd(data).s[0];
    let inf_norm = data
        .iter()
        .fold(T::zero(), |acc, &v| if v.abs() > acc { v.abs() } else { acc });
    let mut dual = data / spectral.max(inf_norm / lambda);
    let mut lowrank = Array2::<T>::zeros((l, k));
    let mut sparse = Array2::<T>::zeros((l, k));
    let mut mu = cast::<T>(1.25) / spectral;
    let mu_max = mu * cast::<T>(1e7);
    let growth = cast::<T>(1.5);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // Singular value thresholding on X - E + Y/mu.
        let target = data - &sparse + &(&dual / mu);
        let svd = jacobi_svd(&target);
        let thresh = T::one() / mu;
        lowrank.fill(T::zero());
        for (r, &s) in svd.s.iter().enumerate() {
            if s > thresh {
                let sv = s - thresh;
                for i in 0..l {
                    let ui = svd.u[[i, r]] * sv;
                    for j in 0..k {
                        lowrank[[i, j]] += ui * svd.v[[j, r]];
                    }
                }
            }
        }
        // Soft thresholding on X - A + Y/mu.
        let starget = data - &lowrank + &(&dual / mu);
        let scut = lambda / mu;
        for ((i, j), e) in sparse.indexed_iter_mut() {
            let v = starget[[i, j]];
            *e = if v > scut {
                v - scut
            } else if v < -scut {
                v + scut
            } else {
                T::zero()
            };
        }
        let gap = data - &lowrank - &sparse;
        let gap_norm = frobenius_norm(&gap);
        dual = &dual + &(&gap * mu);
        mu = (mu * growth).min(mu_max);
        if gap_norm <= tol * norm {
            converged = true;
            break;
        }
    }

    Ok(PcpResult {
        lowrank,
        sparse,
        converged,
        iterations,
    })
}

/// Result of picking an initial fit among candidates.
#[derive(Debug, Clone)]
pub struct InitSelection<T> {
    pub fit: LowRankFit<T>,
    /// Index of the winning candidate in the input order.
    pub chosen: usize,
    /// M-scale score per candidate (0 when the scale degenerates to zero).
    pub scores: Vec<T>,
    /// True when every candidate degenerated; the earliest candidate wins.
    pub all_degenerate: bool,
}

/// Pick the candidate fit whose pooled diagonal residuals have the lowest
/// M-scale. Ties break toward the earlier candidate, so with the
/// conventional (SVD, L1, pursuit) ordering a full tie falls back to the SVD.
pub fn select_initializer<T: Scalar>(
    x: &TrajectoryMatrix<T>,
    candidates: Vec<LowRankFit<T>>,
) -> Result<InitSelection<T>> {
    if candidates.is_empty() {
        return Err(RodessaError::InvalidArgument(
            "no initializer candidates".into(),
        ));
    }
    let spec = *x.spec();
    let p = x.series_count();
    let series = diagonal_average(x.data(), &spec, p)?;
    let cfg = MScaleConfig::<T>::default();

    let mut scores = Vec::with_capacity(candidates.len());
    let mut degenerate = Vec::with_capacity(candidates.len());
    for cand in &candidates {
        let r_cell = diagonal_residuals(&series, cand, &spec)?;
        let roots: Vec<T> = r_cell.iter().map(|&r| r.sqrt()).collect();
        match mscale(&roots, &cfg) {
            Ok(s) => {
                scores.push(s);
                degenerate.push(false);
            }
            Err(RodessaError::DegenerateScale { .. })
            | Err(RodessaError::ScaleNotBracketed { .. }) => {
                // The robust scale collapses to its infimum of zero.
                scores.push(T::zero());
                degenerate.push(true);
            }
            Err(e) => return Err(e),
        }
    }

    let mut chosen = 0usize;
    for (idx, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[chosen] {
            chosen = idx;
        }
    }
    let all_degenerate = degenerate.iter().all(|&d| d);
    Ok(InitSelection {
        fit: candidates.into_iter().nth(chosen).expect("index in range"),
        chosen,
        scores,
        all_degenerate,
    })
}
