//! Monte Carlo calibration of tuning constants and flagging quantiles, the
//! rank scan, and window-length defaults.
//!
//! Calibration works at the reference model: clean data with i.i.d. standard
//! normal errors and the fitted matrix equal to the truth, so each diagonal
//! residual reduces to a squared normal draw and scales are exactly one.
//! Tuning constants are chosen so the mean standardized weight hits the
//! downweighting target; flagging quantiles are empirical quantiles of the
//! same simulated weight distributions.

use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RodessaError};
use crate::fit::{fit_prepared, initial_candidates, RodessaConfig};
use crate::init::{select_initializer, LowRankFit};
use crate::rng::derive_seed;
use crate::scalar::{cast, Scalar};
use crate::series::{embed, EmbeddingSpec, MultivariateSeries};

/// Inputs that identify one calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub n: usize,
    pub p: usize,
    pub window: usize,
    pub delta_c: f64,
    pub delta_r: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
}

impl CalibrationParams {
    /// Stable identifier used as the cache file name.
    pub fn key(&self) -> String {
        format!(
            "calib_n{}_p{}_L{}_dc{:.4}_dr{:.4}_a{:.4}_r{}_s{}",
            self.n,
            self.p,
            self.window,
            self.delta_c,
            self.delta_r,
            self.alpha,
            self.replications,
            self.seed
        )
    }
}

/// Calibrated constants and flagging quantiles, together with the inputs
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub schema_version: u32,
    pub n: usize,
    pub p: usize,
    pub window: usize,
    pub delta_c: f64,
    pub delta_r: f64,
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub c1: f64,
    pub c2: f64,
    /// alpha-quantile of the simulated standardized cell weights.
    pub q_cell: f64,
    /// alpha-quantile of the simulated standardized case weights.
    pub q_case: f64,
}

impl CalibrationTable {
    pub fn params(&self) -> CalibrationParams {
        CalibrationParams {
            n: self.n,
            p: self.p,
            window: self.window,
            delta_c: self.delta_c,
            delta_r: self.delta_r,
            alpha: self.alpha,
            replications: self.replications,
            seed: self.seed,
        }
    }
}

/// Simulated squared standard normal draws at the reference model: one
/// N x p matrix per replication.
fn reference_draws(n: usize, p: usize, replications: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..replications)
        .map(|rep| {
            let mut rng =
                ChaCha12Rng::seed_from_u64(derive_seed(seed, "reference-model", &[rep as u64]));
            (0..n * p)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z * z
                })
                .collect()
        })
        .collect()
}

/// Mean standardized cellwise weight at tuning c over pooled squared draws.
fn mean_cell_weight(sq: &[Vec<f64>], c: f64) -> f64 {
    let c2 = c * c;
    let mut acc = 0.0;
    let mut count = 0usize;
    for rep in sq {
        for &r in rep {
            if r <= c2 {
                let w = 1.0 - r / c2;
                acc += w * w;
            }
            count += 1;
        }
    }
    acc / count as f64
}

/// Case residuals r_i at the reference model for a given c1: the mean of
/// the sqrt-composed biweight over the p coordinates of each time point.
fn reference_case_residuals(sq: &[Vec<f64>], n: usize, p: usize, c1: f64) -> Vec<Vec<f64>> {
    let c1sq = c1 * c1;
    sq.iter()
        .map(|rep| {
            (0..n)
                .map(|i| {
                    let mut acc = 0.0;
                    for j in 0..p {
                        let r = rep[i * p + j];
                        acc += if r > c1sq {
                            1.0
                        } else {
                            let w = 1.0 - r / c1sq;
                            1.0 - w * w * w
                        };
                    }
                    acc / p as f64
                })
                .collect()
        })
        .collect()
}

fn mean_case_weight(case: &[Vec<f64>], c: f64) -> f64 {
    let c2 = c * c;
    let mut acc = 0.0;
    let mut count = 0usize;
    for rep in case {
        for &r in rep {
            if r <= c2 {
                let w = 1.0 - r / c2;
                acc += w * w;
            }
            count += 1;
        }
    }
    acc / count as f64
}

/// Bisection for the tuning constant: the mean standardized weight is
/// continuous and increasing in c, so the root is bracketed on [0.1, 50].
fn solve_tuning(target: f64, mean_at: impl Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (0.1f64, 50.0f64);
    let f_lo = mean_at(lo) - target;
    let f_hi = mean_at(hi) - target;
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(RodessaError::Calibration(format!(
            "target {target} not bracketed on [{lo}, {hi}]: f(lo) = {f_lo:+.4e}, f(hi) = {f_hi:+.4e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = mean_at(mid) - target;
        if f_mid.abs() < 1e-4 {
            return Ok(mid);
        }
        if f_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Calibrate (c1, c2) so the mean standardized cell and case weights at the
/// reference model hit the downweighting targets. c2 is calibrated after c1
/// because the case residuals involve the cellwise loss.
pub fn calibrate_tuning<T: Scalar>(
    n: usize,
    p: usize,
    _window: usize,
    delta_c: T,
    delta_r: T,
    replications: usize,
    seed: u64,
) -> Result<(T, T)> {
    let dc = delta_c.to_f64().unwrap_or(f64::NAN);
    let dr = delta_r.to_f64().unwrap_or(f64::NAN);
    if !(0.0..1.0).contains(&dc) || dc <= 0.0 || !(0.0..1.0).contains(&dr) || dr <= 0.0 {
        return Err(RodessaError::InvalidArgument(
            "downweighting targets must lie in (0, 1)".into(),
        ));
    }
    let sq = reference_draws(n, p, replications, seed);
    let c1 = solve_tuning(dc, |c| mean_cell_weight(&sq, c))?;
    let case = reference_case_residuals(&sq, n, p, c1);
    let c2 = solve_tuning(dr, |c| mean_case_weight(&case, c))?;
    Ok((cast(c1), cast(c2)))
}

/// Empirical quantile with ceil(alpha * n) order statistic: alpha = 0 gives
/// the minimum and alpha = 1 the maximum.
fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    let k = ((alpha * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

/// Alpha-quantiles of the simulated standardized weight distributions at
/// the reference model.
pub fn flagging_quantiles<T: Scalar>(
    n: usize,
    p: usize,
    _window: usize,
    c1: T,
    c2: T,
    alpha: f64,
    replications: usize,
    seed: u64,
) -> Result<(T, T)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(RodessaError::InvalidArgument(format!(
            "alpha = {alpha} outside [0, 1]"
        )));
    }
    let c1 = c1.to_f64().unwrap_or(f64::NAN);
    let c2 = c2.to_f64().unwrap_or(f64::NAN);
    let sq = reference_draws(n, p, replications, seed);

    let c1sq = c1 * c1;
    let mut cell_weights: Vec<f64> = sq
        .iter()
        .flat_map(|rep| rep.iter())
        .map(|&r| {
            if r > c1sq {
                0.0
            } else {
                let w = 1.0 - r / c1sq;
                w * w
            }
        })
        .collect();
    cell_weights.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));

    let case = reference_case_residuals(&sq, n, p, c1);
    let c2sq = c2 * c2;
    let mut case_weights: Vec<f64> = case
        .iter()
        .flat_map(|rep| rep.iter())
        .map(|&r| {
            if r > c2sq {
                0.0
            } else {
                let w = 1.0 - r / c2sq;
                w * w
            }
        })
        .collect();
    case_weights.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));

    Ok((
        cast(empirical_quantile(&cell_weights, alpha)),
        cast(empirical_quantile(&case_weights, alpha)),
    ))
}

/// Run the full calibration for a parameter set.
pub fn compute_table(params: &CalibrationParams) -> Result<CalibrationTable> {
    let (c1, c2) = calibrate_tuning::<f64>(
        params.n,
        params.p,
        params.window,
        params.delta_c,
        params.delta_r,
        params.replications,
        params.seed,
    )?;
    let (q_cell, q_case) = flagging_quantiles::<f64>(
        params.n,
        params.p,
        params.window,
        c1,
        c2,
        params.alpha,
        params.replications,
        params.seed,
    )?;
    Ok(CalibrationTable {
        schema_version: 1,
        n: params.n,
        p: params.p,
        window: params.window,
        delta_c: params.delta_c,
        delta_r: params.delta_r,
        alpha: params.alpha,
        replications: params.replications,
        seed: params.seed,
        c1,
        c2,
        q_cell,
        q_case,
    })
}

/// Path of the cache file for a parameter set inside a cache directory.
pub fn cache_path(dir: &Path, params: &CalibrationParams) -> PathBuf {
    dir.join(format!("{}.toml", params.key()))
}

/// Load a cached table if present and matching, otherwise compute and cache.
pub fn load_or_compute(dir: &Path, params: &CalibrationParams) -> Result<CalibrationTable> {
    let path = cache_path(dir, params);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        let table: CalibrationTable = toml::from_str(&text)
            .map_err(|e| RodessaError::Parse(format!("calibration cache {path:?}: {e}")))?;
        if table.params() == *params {
            return Ok(table);
        }
    }
    let table = compute_table(params)?;
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string(&table)
        .map_err(|e| RodessaError::Parse(format!("serializing calibration table: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(table)
}

/// Objective value of the robust fit for each rank r = 1..=r_max.
///
/// The scales are estimated once, at the selected rank-1 initializer, and
/// held fixed across ranks so the curve is comparable point to point. Each
/// rank is fitted from the candidate initializers plus the zero-padded
/// solution of the previous rank, and the lowest final objective is
/// reported; seeding with the previous solution makes the curve
/// non-increasing by construction.
pub fn rank_curve<T: Scalar>(
    series: &MultivariateSeries<T>,
    spec: &EmbeddingSpec,
    config: &RodessaConfig<T>,
    r_max: usize,
) -> Result<Vec<(usize, T)>> {
    let trajectory = embed(series, spec)?;
    let max_rank = trajectory.nrows().min(trajectory.ncols());
    if r_max == 0 || r_max > max_rank {
        return Err(RodessaError::RankTooLarge {
            rank: r_max,
            max: max_rank,
        });
    }

    let mut cfg1 = *config;
    cfg1.rank = 1;
    let first_candidates = initial_candidates(&trajectory, &cfg1)?;
    let first = select_initializer(&trajectory, first_candidates)?;
    let scales = crate::fit::estimate_scales(series, &first.fit, spec, &config.loss_cell())?;

    let mut curve = Vec::with_capacity(r_max);
    let mut previous: Option<LowRankFit<T>> = None;
    for r in 1..=r_max {
        let mut cfg_r = *config;
        cfg_r.rank = r;
        let mut candidates = initial_candidates(&trajectory, &cfg_r)?;
        if let Some(prev) = &previous {
            candidates.push(prev.pad_rank());
        }
        let mut best: Option<crate::fit::RodessaResult<T>> = None;
        for (idx, cand) in candidates.into_iter().enumerate() {
            let run = fit_prepared(series, spec, &cfg_r, cand, idx, scales.clone())?;
            let obj = *run
                .objective_trace
                .last()
                .expect("trace holds at least the initial value");
            let better = match &best {
                None => true,
                Some(b) => obj < *b.objective_trace.last().expect("nonempty trace"),
            };
            if better {
                best = Some(run);
            }
        }
        let best = best.expect("at least one candidate per rank");
        curve.push((
            r,
            *best.objective_trace.last().expect("nonempty trace"),
        ));
        previous = Some(best.fit);
    }
    Ok(curve)
}

/// Rule used to pick a default window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowPolicy {
    /// L close to p N / (p + 1); suits a small number of series.
    SeriesScaled,
    /// L close to N / 2.
    HalfLength,
}

/// Default window length under a policy, clamped to the valid range
/// 2..=N-1.
pub fn default_window(n: usize, p: usize, policy: WindowPolicy) -> usize {
    let raw = match policy {
        WindowPolicy::SeriesScaled => (p as f64 * n as f64 / (p as f64 + 1.0)).round() as usize,
        WindowPolicy::HalfLength => (n as f64 / 2.0).round() as usize,
    };
    raw.clamp(2, n.saturating_sub(1).max(2))
}
