//! Robust multivariate singular spectrum analysis.
//!
//! The pipeline embeds a p-variate series into a stacked Hankel trajectory
//! matrix, fits a low-rank approximation that downweights anomalous
//! anti-diagonals (cells) and anomalous time points (cases), reconstructs
//! the series by diagonal averaging, and forecasts through the linear
//! recurrence implied by the fit. Cell and case weights feed outlier
//! flagging, report emission, and an enhanced time series plot. A seeded
//! Monte Carlo harness benchmarks the robust fit against classical and
//! competing robust decompositions.
//!
//! All numeric code is generic over the scalar type; `f64` aliases for the
//! main entry points live at the crate root.

pub mod calibrate;
pub mod detect;
pub mod error;
pub mod fit;
pub mod forecast;
pub mod init;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod plot;
pub mod rng;
pub mod scalar;
pub mod series;
pub mod simulate;

pub use error::{Result, RodessaError};
pub use scalar::Scalar;

/// f64 instantiations of the main types.
pub type Series64 = series::MultivariateSeries<f64>;
pub type LowRankFit64 = init::LowRankFit<f64>;
pub type RodessaConfig64 = fit::RodessaConfig<f64>;
pub type RodessaResult64 = fit::RodessaResult<f64>;
pub type ScaleEstimates64 = fit::ScaleEstimates<f64>;
pub type LossSpec64 = loss::LossSpec<f64>;

/// f32 aliases for reduced-precision use.
pub type Series32 = series::MultivariateSeries<f32>;
pub type RodessaConfig32 = fit::RodessaConfig<f32>;
