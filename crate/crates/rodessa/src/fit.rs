//! The diagonalwise robust objective, its residual and weight system, and
//! the IRLS solver.
//!
//! Residuals are aggregated per anti-diagonal: `r_i^{(j)}` is the mean
//! squared gap between the observed value `x_i^{(j)}` and the fitted cells on
//! its anti-diagonal, and `r_i` combines the p per-series values through the
//! first loss. Weights are the loss derivatives at the standardized
//! residuals, embedded back into the trajectory layout so each anti-diagonal
//! carries one weight. Alternating weighted least squares on rows and
//! columns with those weights decreases the objective at every sweep.

use ndarray::{Array1, Array2};

use crate::error::{Result, RodessaError};
use crate::init::{
    l1_lowrank, rpca_pcp, select_initializer, svd_lowrank, truncated_svd_fit, LowRankFit,
};
use crate::linalg::{frobenius_norm, sym_solve_pinv};
use crate::loss::{mscale, LossSpec, MScaleConfig};
use crate::scalar::{cast, Scalar};
use crate::series::{diagonal_average, embed, EmbeddingSpec, MultivariateSeries};

/// Relative eigenvalue cutoff of the pseudo-inverse used when a Gram matrix
/// of the weighted update is numerically singular.
const PINV_CUTOFF: f64 = 1e-12;

/// Parameters of the robust fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RodessaConfig<T> {
    /// Rank of the low-rank approximation.
    pub rank: usize,
    /// Tuning constant of the cellwise loss.
    pub c1: T,
    /// Tuning constant of the casewise loss.
    pub c2: T,
    /// Relative tolerance on the fitted-matrix change between sweeps.
    pub tolerance: T,
    pub max_iter: usize,
    /// Extra stop requirement: keep sweeping until the largest block
    /// gradient norm falls below this fraction of ||X||_F. `None` stops on
    /// the fit-change rule alone.
    pub stationarity_tol: Option<T>,
    pub initializer: InitPolicy,
}

/// Which candidate initial fits to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPolicy {
    /// SVD, L1, and pursuit candidates, selected by lowest M-scale.
    Auto,
    Svd,
    L1,
    Pcp,
}

impl<T: Scalar> RodessaConfig<T> {
    pub fn new(rank: usize, c1: T, c2: T) -> Self {
        Self {
            rank,
            c1,
            c2,
            tolerance: cast(1e-6),
            max_iter: 100,
            stationarity_tol: Some(cast(1e-6)),
            initializer: InitPolicy::Auto,
        }
    }

    pub fn loss_cell(&self) -> LossSpec<T> {
        LossSpec::SqrtBiweight { c: self.c1 }
    }

    pub fn loss_case(&self) -> LossSpec<T> {
        LossSpec::SqrtBiweight { c: self.c2 }
    }
}

/// Fixed scale estimates held constant through the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEstimates<T> {
    /// Per-series scales (sigma_1j, not squared).
    pub sigma1: Vec<T>,
    /// Casewise scale (sigma_2, not squared).
    pub sigma2: T,
    /// Series whose scale collapsed and was floored.
    pub floored_series: Vec<bool>,
    pub floored_case: bool,
}

impl<T: Scalar> ScaleEstimates<T> {
    /// Unit scales, used by reduction checks and reference-model work.
    pub fn unit(p: usize) -> Self {
        Self {
            sigma1: vec![T::one(); p],
            sigma2: T::one(),
            floored_series: vec![false; p],
            floored_case: false,
        }
    }
}

/// Diagonal and case residuals of a fit.
#[derive(Debug, Clone)]
pub struct ResidualState<T> {
    /// N x p matrix of r_i^{(j)}.
    pub cell: Array2<T>,
    /// Length-N vector of r_i.
    pub case: Vec<T>,
}

/// Cell and case weights plus the assembled trajectory-layout matrix.
#[derive(Debug, Clone)]
pub struct WeightState<T> {
    /// N x p matrix of w_{c,i}^{(j)}.
    pub cell: Array2<T>,
    /// Length-N vector of w_{r,i}.
    pub case: Vec<T>,
    /// L x K Hadamard product of the two Hankel-embedded weight layers.
    pub matrix: Array2<T>,
}

/// Complete output of the robust fit.
#[derive(Debug, Clone)]
pub struct RodessaResult<T> {
    /// The observed series the fit ran on.
    pub series: MultivariateSeries<T>,
    pub fit: LowRankFit<T>,
    pub scales: ScaleEstimates<T>,
    pub residuals: ResidualState<T>,
    pub weights: WeightState<T>,
    pub reconstruction: MultivariateSeries<T>,
    /// Objective value at the initial fit and after each sweep.
    pub objective_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest block gradient norm at the final iterate.
    pub stationarity_gap: T,
    /// Number of singular Gram systems solved through the pseudo-inverse.
    pub pinv_fallbacks: usize,
    /// Which initializer candidate won (index in the policy order).
    pub init_chosen: usize,
    /// Configuration the fit ran with.
    pub config: RodessaConfig<T>,
}

/// Mean squared anti-diagonal residuals r_i^{(j)} of a fit against the
/// observed series.
pub fn diagonal_residuals<T: Scalar>(
    series: &MultivariateSeries<T>,
    fit: &LowRankFit<T>,
    spec: &EmbeddingSpec,
) -> Result<Array2<T>> {
    let n = series.len();
    let p = series.series_count();
    if spec.len() != n {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("series of length {}", spec.len()),
            got: format!("{n}"),
        });
    }
    let l = spec.window();
    let k_u = spec.k_u();
    if fit.u.nrows() != l || fit.v.nrows() != spec.k(p) {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("factors {}x? and {}x?", l, spec.k(p)),
            got: format!("{}x? and {}x?", fit.u.nrows(), fit.v.nrows()),
        });
    }
    let product = fit.product();
    let mut out = Array2::<T>::zeros((n, p));
    for j in 0..p {
        for i in 1..=n {
            let n_i = spec.diag_len(i);
            let x = series.values()[[i - 1, j]];
            let mut acc = T::zero();
            for a in 1..=n_i {
                let row = l.min(i) - a; // 0-based
                let col = k_u.min(i) - (n_i - a) - 1 + k_u * j;
                let d = x - product[[row, col]];
                acc += d * d;
            }
            out[[i - 1, j]] = acc / cast::<T>(n_i as f64);
        }
    }
    Ok(out)
}

/// Case residuals r_i = (1/p) sum_j sigma_1j^2 rho_1(r_i^{(j)} / sigma_1j^2).
pub fn case_residuals<T: Scalar>(
    r_cell: &Array2<T>,
    sigma1: &[T],
    loss1: &LossSpec<T>,
) -> Result<Vec<T>> {
    let (n, p) = r_cell.dim();
    if sigma1.len() != p {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("{p} scales"),
            got: format!("{}", sigma1.len()),
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = T::zero();
        for j in 0..p {
            let s2 = sigma1[j] * sigma1[j];
            acc += s2 * loss1.rho(r_cell[[i, j]] / s2)?;
        }
        out.push(acc / cast::<T>(p as f64));
    }
    Ok(out)
}

/// The diagonalwise robust objective of a fit.
pub fn objective<T: Scalar>(
    series: &MultivariateSeries<T>,
    fit: &LowRankFit<T>,
    spec: &EmbeddingSpec,
    scales: &ScaleEstimates<T>,
    loss1: &LossSpec<T>,
    loss2: &LossSpec<T>,
) -> Result<T> {
    let r_cell = diagonal_residuals(series, fit, spec)?;
    let r_case = case_residuals(&r_cell, &scales.sigma1, loss1)?;
    objective_from_case(&r_case, spec, series.series_count(), scales.sigma2, loss2)
}

/// Objective from precomputed case residuals:
/// sum_i p n_i sigma_2^2 rho_2(r_i / sigma_2^2).
pub(crate) fn objective_from_case<T: Scalar>(
    r_case: &[T],
    spec: &EmbeddingSpec,
    p: usize,
    sigma2: T,
    loss2: &LossSpec<T>,
) -> Result<T> {
    let s2 = sigma2 * sigma2;
    let pf = cast::<T>(p as f64);
    let mut acc = T::zero();
    for (idx, &r) in r_case.iter().enumerate() {
        let n_i = cast::<T>(spec.diag_len(idx + 1) as f64);
        acc += pf * n_i * s2 * loss2.rho(r / s2)?;
    }
    Ok(acc)
}

/// Cellwise weights w_{c,i}^{(j)} = rho_1'(r_i^{(j)} / sigma_1j^2).
pub fn cell_weights<T: Scalar>(
    r_cell: &Array2<T>,
    sigma1: &[T],
    loss1: &LossSpec<T>,
) -> Result<Array2<T>> {
    let (n, p) = r_cell.dim();
    if sigma1.len() != p {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("{p} scales"),
            got: format!("{}", sigma1.len()),
        });
    }
    let mut out = Array2::<T>::zeros((n, p));
    for j in 0..p {
        let s2 = sigma1[j] * sigma1[j];
        for i in 0..n {
            out[[i, j]] = loss1.rho_prime(r_cell[[i, j]] / s2)?;
        }
    }
    Ok(out)
}

/// Casewise weights w_{r,i} = rho_2'(r_i / sigma_2^2).
pub fn case_weights<T: Scalar>(r_case: &[T], sigma2: T, loss2: &LossSpec<T>) -> Result<Vec<T>> {
    let s2 = sigma2 * sigma2;
    r_case.iter().map(|&r| loss2.rho_prime(r / s2)).collect()
}

/// Assemble the L x K weight matrix: within block j, the Hankel embedding of
/// the cell weights of series j times the Hankel embedding of the case
/// weights, so each anti-diagonal carries a constant weight.
pub fn assemble_weight_matrix<T: Scalar>(
    w_cell: &Array2<T>,
    w_case: &[T],
    spec: &EmbeddingSpec,
    p: usize,
) -> Result<Array2<T>> {
    let (n, pc) = w_cell.dim();
    if pc != p || w_case.len() != n || spec.len() != n {
        return Err(RodessaError::ShapeMismatch {
            expected: format!("{} x {} cell weights and {} case weights", spec.len(), p, spec.len()),
            got: format!("{n} x {pc} and {}", w_case.len()),
        });
    }
    let l = spec.window();
    let k_u = spec.k_u();
    let mut w = Array2::<T>::zeros((l, spec.k(p)));
    for j in 0..p {
        for k_local in 0..k_u {
            for row in 0..l {
                let i = row + k_local; // 0-based time index
                w[[row, j * k_u + k_local]] = w_cell[[i, j]] * w_case[i];
            }
        }
    }
    Ok(w)
}

/// Weighted least squares update of the right factor: column k of the fit
/// solves (U^T W_k U) v^k = U^T W_k X_k. Returns the new factor and the
/// number of singular systems that went through the pseudo-inverse.
pub fn wls_update_v<T: Scalar>(
    u: &Array2<T>,
    w: &Array2<T>,
    x: &Array2<T>,
) -> (Array2<T>, usize) {
    let (l, q) = u.dim();
    let k = x.ncols();
    let mut v = Array2::<T>::zeros((k, q));
    let mut fallbacks = 0usize;
    let cutoff = cast::<T>(PINV_CUTOFF);
    for col in 0..k {
        let mut gram = Array2::<T>::zeros((q, q));
        let mut rhs = Array1::<T>::zeros(q);
        for row in 0..l {
            let weight = w[[row, col]];
            if weight == T::zero() {
                continue;
            }
            let xv = x[[row, col]];
            for a in 0..q {
                let ua = u[[row, a]];
                rhs[a] += weight * xv * ua;
                for b in a..q {
                    gram[[a, b]] += weight * ua * u[[row, b]];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                gram[[a, b]] = gram[[b, a]];
            }
        }
        let (sol, clipped) = sym_solve_pinv(&gram, &rhs, cutoff);
        if clipped {
            fallbacks += 1;
        }
        for a in 0..q {
            v[[col, a]] = sol[a];
        }
    }
    (v, fallbacks)
}

/// Weighted least squares update of the left factor: row l of the fit
/// solves (V^T W^l V) u^l = V^T W^l X^l.
pub fn wls_update_u<T: Scalar>(
    v: &Array2<T>,
    w: &Array2<T>,
    x: &Array2<T>,
) -> (Array2<T>, usize) {
    let (k, q) = v.dim();
    let l = x.nrows();
    let mut u = Array2::<T>::zeros((l, q));
    let mut fallbacks = 0usize;
    let cutoff = cast::<T>(PINV_CUTOFF);
    for row in 0..l {
        let mut gram = Array2::<T>::zeros((q, q));
        let mut rhs = Array1::<T>::zeros(q);
        for col in 0..k {
            let weight = w[[row, col]];
            if weight == T::zero() {
                continue;
            }
            let xv = x[[row, col]];
            for a in 0..q {
                let va = v[[col, a]];
                rhs[a] += weight * xv * va;
                for b in a..q {
                    gram[[a, b]] += weight * va * v[[col, b]];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                gram[[a, b]] = gram[[b, a]];
            }
        }
        let (sol, clipped) = sym_solve_pinv(&gram, &rhs, cutoff);
        if clipped {
            fallbacks += 1;
        }
        for a in 0..q {
            u[[row, a]] = sol[a];
        }
    }
    (u, fallbacks)
}

/// Largest block gradient norm of the weighted least squares conditions:
/// max over rows of ||V^T W^l (V u^l - X^l)|| and over columns of
/// ||U^T W_k (U v^k - X_k)||.
pub fn stationarity_gap<T: Scalar>(
    x: &Array2<T>,
    fit: &LowRankFit<T>,
    w: &Array2<T>,
) -> T {
    let (l, k) = x.dim();
    let q = fit.rank();
    let product = fit.product();
    let mut worst = T::zero();
    for row in 0..l {
        let mut grad = vec![T::zero(); q];
        for col in 0..k {
            let c = w[[row, col]] * (product[[row, col]] - x[[row, col]]);
            for a in 0..q {
                grad[a] += fit.v[[col, a]] * c;
            }
        }
        let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
        if norm > worst {
            worst = norm;
        }
    }
    for col in 0..k {
        let mut grad = vec![T::zero(); q];
        for row in 0..l {
            let c = w[[row, col]] * (product[[row, col]] - x[[row, col]]);
            for a in 0..q {
                grad[a] += fit.u[[row, a]] * c;
            }
        }
        let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
        if norm > worst {
            worst = norm;
        }
    }
    worst
}

/// M-scale estimates of the residual magnitudes with respect to an initial
/// fit. Scales that cannot be estimated (residuals identically or mostly
/// zero) are floored at 1e-8 times the series RMS.
pub fn estimate_scales<T: Scalar>(
    series: &MultivariateSeries<T>,
    init_fit: &LowRankFit<T>,
    spec: &EmbeddingSpec,
    loss1: &LossSpec<T>,
) -> Result<ScaleEstimates<T>> {
    let p = series.series_count();
    let n = series.len();
    let cfg = MScaleConfig::<T>::default();
    let r_cell = diagonal_residuals(series, init_fit, spec)?;

    let floor_for = |rms: T| -> T {
        let base = if rms > T::zero() { rms } else { T::one() };
        cast::<T>(1e-8) * base
    };

    let mut sigma1 = Vec::with_capacity(p);
    let mut floored_series = Vec::with_capacity(p);
    for j in 0..p {
        let roots: Vec<T> = (0..n).map(|i| r_cell[[i, j]].sqrt()).collect();
        let rms = (series
            .series(j + 1)
            .iter()
            .map(|&x| x * x)
            .sum::<T>()
            / cast::<T>(n as f64))
        .sqrt();
        match mscale(&roots, &cfg) {
            Ok(s) => {
                sigma1.push(s.max(floor_for(rms)));
                floored_series.push(s < floor_for(rms));
            }
            Err(RodessaError::DegenerateScale { .. })
            | Err(RodessaError::ScaleNotBracketed { .. }) => {
                sigma1.push(floor_for(rms));
                floored_series.push(true);
            }
            Err(e) => return Err(e),
        }
    }

    let r_case = case_residuals(&r_cell, &sigma1, loss1)?;
    let roots: Vec<T> = r_case.iter().map(|&r| r.sqrt()).collect();
    let rms_all = (series
        .values()
        .iter()
        .map(|&x| x * x)
        .sum::<T>()
        / cast::<T>((n * p) as f64))
    .sqrt();
    let (sigma2, floored_case) = match mscale(&roots, &cfg) {
        Ok(s) => {
            let fl = floor_for(rms_all);
            (s.max(fl), s < fl)
        }
        Err(RodessaError::DegenerateScale { .. })
        | Err(RodessaError::ScaleNotBracketed { .. }) => (floor_for(rms_all), true),
        Err(e) => return Err(e),
    };

    Ok(ScaleEstimates {
        sigma1,
        sigma2,
        floored_series,
        floored_case,
    })
}

/// Fit the diagonalwise robust low-rank model by IRLS.
///
/// Initialization computes the configured candidate fits, keeps the one with
/// the lowest M-scale of its diagonal residuals, and freezes the scale
/// estimates at that fit. Each sweep then updates the right factor, the left
/// factor, and the weights, until the fitted matrix stabilizes.
pub fn irls_fit<T: Scalar>(
    series: &MultivariateSeries<T>,
    spec: &EmbeddingSpec,
    config: &RodessaConfig<T>,
) -> Result<RodessaResult<T>> {
    let trajectory = embed(series, spec)?;
    let candidates = initial_candidates(&trajectory, config)?;
    let selection = select_initializer(&trajectory, candidates)?;
    let scales = estimate_scales(series, &selection.fit, spec, &config.loss_cell())?;
    fit_prepared(series, spec, config, selection.fit, selection.chosen, scales)
}

/// Candidate initial fits in the fixed policy order.
pub(crate) fn initial_candidates<T: Scalar>(
    trajectory: &crate::series::TrajectoryMatrix<T>,
    config: &RodessaConfig<T>,
) -> Result<Vec<LowRankFit<T>>> {
    let q = config.rank;
    let mut out = Vec::new();
    match config.initializer {
        InitPolicy::Auto => {
            out.push(svd_lowrank(trajectory, q)?);
            out.push(l1_lowrank(trajectory, q, cast(1e-6), 200)?.fit);
            let pcp = rpca_pcp(trajectory, None, cast(1e-7), 500)?;
            out.push(truncated_svd_fit(&pcp.lowrank, q));
        }
        InitPolicy::Svd => out.push(svd_lowrank(trajectory, q)?),
        InitPolicy::L1 => out.push(l1_lowrank(trajectory, q, cast(1e-6), 200)?.fit),
        InitPolicy::Pcp => {
            let pcp = rpca_pcp(trajectory, None, cast(1e-7), 500)?;
            out.push(truncated_svd_fit(&pcp.lowrank, q));
        }
    }
    Ok(out)
}

/// IRLS from a given initial fit and frozen scales. Shared by the standard
/// entry point and the rank-scan machinery.
pub(crate) fn fit_prepared<T: Scalar>(
    series: &MultivariateSeries<T>,
    spec: &EmbeddingSpec,
    config: &RodessaConfig<T>,
    init_fit: LowRankFit<T>,
    init_chosen: usize,
    scales: ScaleEstimates<T>,
) -> Result<RodessaResult<T>> {
    let p = series.series_count();
    let trajectory = embed(series, spec)?;
    let x = trajectory.data();
    let x_norm = frobenius_norm(x);
    let loss1 = config.loss_cell();
    let loss2 = config.loss_case();

    let mut fit = init_fit;
    let mut product = fit.product();
    let mut r_cell = diagonal_residuals(series, &fit, spec)?;
    let mut r_case = case_residuals(&r_cell, &scales.sigma1, &loss1)?;
    let mut w_cell = cell_weights(&r_cell, &scales.sigma1, &loss1)?;
    let mut w_case = case_weights(&r_case, scales.sigma2, &loss2)?;
    let mut weight_matrix = assemble_weight_matrix(&w_cell, &w_case, spec, p)?;

    let mut trace = vec![objective_from_case(&r_case, spec, p, scales.sigma2, &loss2)?];
    let mut pinv_fallbacks = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;

    for _ in 0..config.max_iter {
        iterations += 1;
        let (v_new, f1) = wls_update_v(&fit.u, &weight_matrix, x);
        let half = LowRankFit::new(fit.u.clone(), v_new);
        let (u_new, f2) = wls_update_u(&half.v, &weight_matrix, x);
        pinv_fallbacks += f1 + f2;
        let next = LowRankFit::new(u_new, half.v);
        let next_product = next.product();

        let delta = frobenius_norm(&(&next_product - &product));
        let denom = {
            let prev = frobenius_norm(&product);
            if prev > T::zero() {
                prev
            } else {
                T::one()
            }
        };
        fit = next;
        product = next_product;

        r_cell = diagonal_residuals(series, &fit, spec)?;
        r_case = case_residuals(&r_cell, &scales.sigma1, &loss1)?;
        w_cell = cell_weights(&r_cell, &scales.sigma1, &loss1)?;
        w_case = case_weights(&r_case, scales.sigma2, &loss2)?;
        weight_matrix = assemble_weight_matrix(&w_cell, &w_case, spec, p)?;
        trace.push(objective_from_case(&r_case, spec, p, scales.sigma2, &loss2)?);

        if delta < config.tolerance * denom {
            converged = true;
            if let Some(stat_tol) = config.stationarity_tol {
                let gap = stationarity_gap(x, &fit, &weight_matrix);
                if gap >= stat_tol * x_norm && x_norm > T::zero() {
                    // Fit has stabilized but the gradient conditions have
                    // not settled yet; keep sweeping.
                    continue;
                }
            }
            break;
        }
    }

    let gap = stationarity_gap(x, &fit, &weight_matrix);
    let reconstruction = diagonal_average(&product, spec, p)?.with_labels_of(series);

    Ok(RodessaResult {
        series: series.clone(),
        fit,
        scales,
        residuals: ResidualState {
            cell: r_cell,
            case: r_case,
        },
        weights: WeightState {
            cell: w_cell,
            case: w_case,
            matrix: weight_matrix,
        },
        reconstruction,
        objective_trace: trace,
        iterations,
        converged,
        stationarity_gap: gap,
        pinv_fallbacks,
        init_chosen,
        config: *config,
    })
}
