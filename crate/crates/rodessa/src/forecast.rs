//! Recurrent forecasting from a rank-q fit.
//!
//! The fitted matrix implies a linear recurrence of order L-1: the exact SVD
//! of the product `u * v^T` yields left singular vectors whose last
//! coordinates determine the recurrence coefficients. Forecasts extend the
//! reconstructed (not raw) series, so flagged outliers cannot re-enter
//! through the seed window.

use ndarray::Array2;

use crate::error::{Result, RodessaError};
use crate::init::LowRankFit;
use crate::linalg::{jacobi_svd, qr_thin};
use crate::scalar::{cast, Scalar};
use crate::series::MultivariateSeries;

/// Linear recurrence extracted from a low-rank fit.
///
/// `coefficients[m]` multiplies the reconstructed value `L-1-m` steps back,
/// so a forecast is the dot product of the coefficients with the last L-1
/// values in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceModel<T> {
    pub coefficients: Vec<T>,
    /// Sum of squared last coordinates of the left singular vectors; must
    /// stay below 1 for the recurrence to exist.
    pub verticality: T,
    pub rank: usize,
}

/// Derive the recurrence coefficients from the exact SVD of the fitted
/// product. The SVD is computed from the small q x q cross matrix of the QR
/// factors, so the result is gauge-invariant and exact.
pub fn recurrence_coefficients<T: Scalar>(fit: &LowRankFit<T>) -> Result<RecurrenceModel<T>> {
    let l = fit.u.nrows();
    let q = fit.rank();
    if l < 2 {
        return Err(RodessaError::InvalidArgument(
            "window length must exceed 1 for forecasting".into(),
        ));
    }
    let (qu, ru) = qr_thin(&fit.u);
    let (_qv, rv) = qr_thin(&fit.v);
    let cross = ru.dot(&rv.t());
    let small = jacobi_svd(&cross);
    // Left singular vectors of u v^T with nonzero singular value.
    let left = qu.dot(&small.u);

    let mut verticality = T::zero();
    for r in 0..q {
        if small.s[r] > T::zero() {
            verticality += left[[l - 1, r]] * left[[l - 1, r]];
        }
    }
    let gap = T::one() - verticality;
    if gap <= cast::<T>(1e-8) {
        return Err(RodessaError::Verticality {
            nu2: verticality.to_f64().unwrap_or(f64::NAN),
        });
    }

    // coefficients[m] pairs with lag L-1-m; the entry for lag d is
    // sum_r pi_r * u_{r, L-d} / (1 - nu^2).
    let mut coefficients = vec![T::zero(); l - 1];
    for r in 0..q {
        if small.s[r] <= T::zero() {
            continue;
        }
        let pi = left[[l - 1, r]];
        for m in 0..(l - 1) {
            coefficients[m] += pi * left[[m, r]] / gap;
        }
    }

    Ok(RecurrenceModel {
        coefficients,
        verticality,
        rank: q,
    })
}

/// Apply the recurrence to extend each reconstructed series h steps ahead.
/// Returns an h x p matrix; h = 0 yields an empty matrix.
pub fn forecast<T: Scalar>(
    model: &RecurrenceModel<T>,
    reconstruction: &MultivariateSeries<T>,
    horizon: usize,
) -> Result<Array2<T>> {
    let order = model.coefficients.len();
    let n = reconstruction.len();
    let p = reconstruction.series_count();
    if n < order {
        return Err(RodessaError::InvalidArgument(format!(
            "reconstruction length {n} shorter than recurrence order {order}"
        )));
    }
    let mut out = Array2::<T>::zeros((horizon, p));
    if horizon == 0 {
        return Ok(out);
    }
    for j in 0..p {
        // Chronological window of the last `order` values.
        let mut window: Vec<T> = (n - order..n)
            .map(|i| reconstruction.values()[[i, j]])
            .collect();
        for step in 0..horizon {
            let mut next = T::zero();
            for (m, &c) in model.coefficients.iter().enumerate() {
                next += c * window[m];
            }
            out[[step, j]] = next;
            window.rotate_left(1);
            window[order - 1] = next;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::svd_lowrank;
    use crate::series::{embed, EmbeddingSpec};
    use ndarray::Array2;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn harmonic(n: usize, amp: f64, phase: f64) -> MultivariateSeries<f64> {
        let v: Vec<f64> = (1..=n)
            .map(|i| amp * (2.0 * PI * i as f64 / 10.0 + phase).cos())
            .collect();
        MultivariateSeries::univariate(&v).unwrap()
    }

    #[test]
    fn constant_series_forecasts_constant() {
        let s = MultivariateSeries::univariate(&vec![3.25f64; 20]).unwrap();
        let spec = EmbeddingSpec::new(6, 20).unwrap();
        let x = embed(&s, &spec).unwrap();
        let fit = svd_lowrank(&x, 1).unwrap();
        let recon = crate::series::diagonal_average(&fit.product(), &spec, 1).unwrap();
        let model = recurrence_coefficients(&fit).unwrap();
        let fc = forecast(&model, &recon, 10).unwrap();
        for step in 0..10 {
            assert!((fc[[step, 0]] - 3.25).abs() < 1e-9, "step {step}: {}", fc[[step, 0]]);
        }
    }

    #[test]
    fn coefficients_are_gauge_invariant() {
        let s = harmonic(40, 2.0, 0.3);
        let spec = EmbeddingSpec::new(12, 40).unwrap();
        let x = embed(&s, &spec).unwrap();
        let fit = svd_lowrank(&x, 2).unwrap();
        let a = ndarray::array![[1.5, -0.7], [0.2, 0.9]];
        let det: f64 = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
        let a_inv_t = ndarray::array![
            [a[[1, 1]] / det, -a[[1, 0]] / det],
            [-a[[0, 1]] / det, a[[0, 0]] / det]
        ];
        let gauged = LowRankFit::new(fit.u.dot(&a), fit.v.dot(&a_inv_t));
        let m1 = recurrence_coefficients(&fit).unwrap();
        let m2 = recurrence_coefficients(&gauged).unwrap();
        for (c1, c2) in m1.coefficients.iter().zip(m2.coefficients.iter()) {
            assert!((c1 - c2).abs() < 1e-10);
        }
        assert!((m1.verticality - m2.verticality).abs() < 1e-10);
    }

    #[test]
    fn harmonic_recurrence_reproduces_signal() {
        let n = 50;
        let s = harmonic(n, 3.0, 0.7);
        let spec = EmbeddingSpec::new(15, n).unwrap();
        let x = embed(&s, &spec).unwrap();
        let fit = svd_lowrank(&x, 2).unwrap();
        let model = recurrence_coefficients(&fit).unwrap();
        // Applying the coefficients to the true signal reproduces it.
        let order = model.coefficients.len();
        for i in order..n {
            let mut pred = 0.0;
            for (m, &c) in model.coefficients.iter().enumerate() {
                pred += c * s.values()[[i - order + m, 0]];
            }
            assert!(
                (pred - s.values()[[i, 0]]).abs() < 1e-8,
                "i = {i}: {pred} vs {}",
                s.values()[[i, 0]]
            );
        }
    }

    #[test]
    fn harmonic_forecast_matches_analytic_continuation() {
        let n = 50;
        let amp = 3.0;
        let phase = 0.7;
        let s = harmonic(n, amp, phase);
        let spec = EmbeddingSpec::new(15, n).unwrap();
        let x = embed(&s, &spec).unwrap();
        let fit = svd_lowrank(&x, 2).unwrap();
        let recon = crate::series::diagonal_average(&fit.product(), &spec, 1).unwrap();
        let model = recurrence_coefficients(&fit).unwrap();
        let h = 20;
        let fc = forecast(&model, &recon, h).unwrap();
        for step in 1..=h {
            let i = n + step;
            let truth = amp * (2.0 * PI * i as f64 / 10.0 + phase).cos();
            assert!(
                (fc[[step - 1, 0]] - truth).abs() < 1e-6,
                "step {step}: {} vs {truth}",
                fc[[step - 1, 0]]
            );
        }
    }

    #[test]
    fn zero_horizon_and_zero_reconstruction() {
        let s = harmonic(30, 1.0, 0.0);
        let spec = EmbeddingSpec::new(10, 30).unwrap();
        let x = embed(&s, &spec).unwrap();
        let fit = svd_lowrank(&x, 2).unwrap();
        let recon = crate::series::diagonal_average(&fit.product(), &spec, 1).unwrap();
        let model = recurrence_coefficients(&fit).unwrap();
        let fc = forecast(&model, &recon, 0).unwrap();
        assert_eq!(fc.dim(), (0, 1));

        let zeros = MultivariateSeries::from_values(Array2::<f64>::zeros((30, 1))).unwrap();
        let fc = forecast(&model, &zeros, 5).unwrap();
        assert!(fc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn verticality_error_when_last_row_dominates() {
        // A fit whose column space is spanned by the last basis vector has
        // verticality exactly 1.
        let l = 6;
        let mut u = Array2::<f64>::zeros((l, 1));
        u[[l - 1, 0]] = 2.0;
        let v = Array2::<f64>::ones((8, 1));
        let fit = LowRankFit::new(u, v);
        assert!(matches!(
            recurrence_coefficients(&fit),
            Err(RodessaError::Verticality { .. })
        ));
    }

    proptest! {
        #[test]
        fn forecast_is_linear_in_the_series(lambda in -3.0f64..3.0, phase in 0.0f64..1.5) {
            let n = 40;
            let s = harmonic(n, 2.0, phase);
            let spec = EmbeddingSpec::new(12, n).unwrap();
            let x = embed(&s, &spec).unwrap();
            let fit = svd_lowrank(&x, 2).unwrap();
            let recon = crate::series::diagonal_average(&fit.product(), &spec, 1).unwrap();
            let model = recurrence_coefficients(&fit).unwrap();
            let fc = forecast(&model, &recon, 6).unwrap();
            let scaled = MultivariateSeries::from_values(recon.values() * lambda).unwrap();
            let fc_scaled = forecast(&model, &scaled, 6).unwrap();
            for (a, b) in fc.iter().zip(fc_scaled.iter()) {
                prop_assert!((a * lambda - b).abs() < 1e-9 * (a.abs() * lambda.abs()).max(1.0));
            }
        }
    }
}
