//! Temporally correlated user channels, intermittent CSI updates and the
//! effective downlink rate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::CommUserParams;
use crate::linalg::{inner, CMatrix, CVector};
use crate::rng::complex_gaussian;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommChannelState {
    pub g_true: CVector,
    pub g_hat: CVector,
    pub varsigma: f64,
}

/// CSI estimate and its error variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEstimate {
    pub g_hat: CVector,
    pub varsigma: f64,
}

impl CommChannelState {
    /// Draws the initial channel and an estimate whose error has the
    /// configured initial variance.
    pub fn initial<R: Rng + ?Sized>(params: &CommUserParams, antennas: usize, rng: &mut R) -> Self {
        let g_true = complex_gaussian(antennas, params.beta_bar, rng);
        let err = complex_gaussian(antennas, params.initial_error_variance, rng);
        Self {
            g_hat: &g_true + err,
            g_true,
            varsigma: params.initial_error_variance,
        }
    }

    pub fn estimate(&self) -> CommEstimate {
        CommEstimate {
            g_hat: self.g_hat.clone(),
            varsigma: self.varsigma,
        }
    }
}

/// `g' = ρ g + √(1−ρ²) ε`, `ε ~ CN(0, β̄ I)`.
pub fn evolve_true_channel<R: Rng + ?Sized>(
    g: &CVector,
    rho: f64,
    beta_bar: f64,
    rng: &mut R,
) -> CVector {
    let eps = complex_gaussian(g.len(), beta_bar, rng);
    g * nalgebra::Complex::from(rho)
        + eps * nalgebra::Complex::from((1.0 - rho * rho).max(0.0).sqrt())
}

/// Shrinkage factor of the linear MMSE estimator for a length-`training_length` pilot.
pub fn estimation_gain(params: &CommUserParams, training_length: usize) -> f64 {
    let snr = training_length as f64 * params.beta_bar * params.uplink_power;
    snr / (snr + params.uplink_noise)
}

/// Prediction branch: `ĝ' = ρ ĝ`, `ς' = ρ² ς + (1−ρ²) β̄`.
pub fn predict_csi(prev: &CommEstimate, params: &CommUserParams) -> CommEstimate {
    let rho = params.rho;
    CommEstimate {
        g_hat: &prev.g_hat * nalgebra::Complex::from(rho),
        varsigma: rho * rho * prev.varsigma + (1.0 - rho * rho) * params.beta_bar,
    }
}

/// Estimation branch. `unit_noise` holds CN(0, 1) draws which are scaled to
/// the effective pilot noise variance `δ / (D P_u)`.
pub fn estimate_csi(
    g_true: &CVector,
    params: &CommUserParams,
    training_length: usize,
    unit_noise: &CVector,
) -> CommEstimate {
    let kappa = estimation_gain(params, training_length);
    let noise_std = (params.uplink_noise / (training_length as f64 * params.uplink_power)).sqrt();
    let observed = g_true + unit_noise * nalgebra::Complex::from(noise_std);
    CommEstimate {
        g_hat: observed * nalgebra::Complex::from(kappa),
        varsigma: params.beta_bar * (1.0 - kappa),
    }
}

/// Applies one decision bit to a user whose true channel is already at the
/// current frame.
pub fn update_csi<R: Rng + ?Sized>(
    state: &CommChannelState,
    estimate: bool,
    params: &CommUserParams,
    training_length: usize,
    rng: &mut R,
) -> CommEstimate {
    let noise = complex_gaussian(state.g_true.len(), 1.0, rng);
    if estimate {
        estimate_csi(&state.g_true, params, training_length, &noise)
    } else {
        predict_csi(&state.estimate(), params)
    }
}

/// Effective rate (nats/s/Hz) of user `k` given estimates of its channel.
///
/// `training_symbols` symbols of the `symbols_per_frame` carry uplink pilots
/// and no data.
#[allow(clippy::too_many_arguments)]
pub fn effective_rate(
    g_hat: &CVector,
    varsigma: f64,
    w: &CMatrix,
    k: usize,
    symbols_per_frame: usize,
    training_symbols: usize,
    noise_power: f64,
    power: f64,
) -> f64 {
    assert!(
        training_symbols <= symbols_per_frame,
        "training symbols exceed the frame"
    );
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, col) in w.column_iter().enumerate() {
        let g = inner(g_hat, &col.into_owned()).norm_sqr();
        if i == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    let sinr = signal / (interference + varsigma * power + noise_power);
    let data_fraction = (symbols_per_frame - training_symbols) as f64 / symbols_per_frame as f64;
    data_fraction * sinr.ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(rho: f64, beta_bar: f64, uplink_noise: f64) -> CommUserParams {
        CommUserParams {
            rho,
            beta_bar,
            uplink_power: 1.0,
            noise_power: 1.0,
            uplink_noise,
            initial_error_variance: 0.5 * beta_bar,
            weight: 1.0,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn unit_correlation_freezes_channel() {
        let mut r = rng();
        let g = complex_gaussian(4, 1.0, &mut r);
        assert_eq!(evolve_true_channel(&g, 1.0, 1.0, &mut r), g);
    }

    #[test]
    fn innovation_moments() {
        let mut r = rng();
        let trials = 100_000;
        let beta = 2.5;
        let g = CVector::from_element(1, C64::new(1.0, 0.0));
        let (mut var0, mut pow9) = (0.0, 0.0);
        for _ in 0..trials {
            var0 += evolve_true_channel(&g, 0.0, beta, &mut r)[0].norm_sqr();
            pow9 += evolve_true_channel(&g, 0.9, 1.0, &mut r)[0].norm_sqr();
        }
        var0 /= trials as f64;
        pow9 /= trials as f64;
        assert!((var0 / beta - 1.0).abs() < 0.03, "{var0}");
        assert!((pow9 / (0.81 + 0.19) - 1.0).abs() < 0.03, "{pow9}");
    }

    #[test]
    fn estimation_gain_hand_value() {
        let p = params(0.9, 1.0, 1.0);
        assert_relative_eq!(estimation_gain(&p, 10), 10.0 / 11.0, max_relative = 1e-15);
        let g = CVector::from_element(3, C64::new(0.3, -0.2));
        let e = estimate_csi(&g, &p, 10, &CVector::zeros(3));
        assert_relative_eq!(e.varsigma, 1.0 / 11.0, max_relative = 1e-14);
    }

    #[test]
    fn noiseless_estimation_is_exact() {
        let p = params(0.9, 1.0, 0.0);
        let mut r = rng();
        let g = complex_gaussian(4, 1.0, &mut r);
        let e = estimate_csi(&g, &p, 10, &complex_gaussian(4, 1.0, &mut r));
        assert_eq!(e.varsigma, 0.0);
        assert_eq!(e.g_hat, g);
    }

    #[test]
    fn full_decorrelation_resets_variance() {
        let p = params(0.0, 3.0, 1.0);
        for prior in [0.0, 1.0, 7.0] {
            let prev = CommEstimate {
                g_hat: CVector::zeros(2),
                varsigma: prior,
            };
            assert_eq!(predict_csi(&prev, &p).varsigma, 3.0);
        }
    }

    #[test]
    fn prediction_converges_geometrically() {
        let p = params(0.93, 1.7, 1.0);
        let mut e = CommEstimate {
            g_hat: CVector::zeros(1),
            varsigma: 0.1,
        };
        let gap0 = (0.1f64 - 1.7).abs();
        for n in 1..=200 {
            e = predict_csi(&e, &p);
            let bound = p.rho.powi(2 * n) * gap0;
            assert!((e.varsigma - p.beta_bar).abs() <= bound * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn estimation_error_variance_monte_carlo() {
        let p = params(0.9, 1.0, 4.0);
        let kappa = estimation_gain(&p, 2);
        let mut r = rng();
        let trials = 100_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let g = complex_gaussian(1, 1.0, &mut r);
            let n = complex_gaussian(1, 1.0, &mut r);
            let e = estimate_csi(&g, &p, 2, &n);
            acc += (g[0] - e.g_hat[0]).norm_sqr();
        }
        let emp = acc / trials as f64;
        let theory = p.beta_bar * (1.0 - kappa);
        assert!((emp / theory - 1.0).abs() < 0.03, "{emp} vs {theory}");
    }

    #[test]
    fn reduced_estimator_matches_pilot_matrix_form() {
        // Y = g b^H + U with b^H b = D P_u; ĝ = κ Y b / (D P_u).
        let p = CommUserParams {
            uplink_power: 0.5,
            ..params(0.9, 1.0, 2.0)
        };
        let d = 4usize;
        let kappa = estimation_gain(&p, d);
        let mut r = rng();
        let trials = 40_000;
        let (mut full, mut reduced) = (0.0, 0.0);
        let amp = C64::from((p.uplink_power).sqrt());
        for _ in 0..trials {
            let g = complex_gaussian(2, 1.0, &mut r);
            let b = CVector::from_fn(d, |i, _| {
                amp * C64::from_polar(1.0, 2.0 * std::f64::consts::PI * i as f64 / d as f64)
            });
            let u = CMatrix::from_fn(2, d, |_, _| complex_gaussian(1, p.uplink_noise, &mut r)[0]);
            let y = &g * b.adjoint() + u;
            let est = (&y * &b) * C64::from(kappa / (d as f64 * p.uplink_power));
            full += (&g - est).norm_squared();
            let e = estimate_csi(&g, &p, d, &complex_gaussian(2, 1.0, &mut r));
            reduced += (&g - e.g_hat).norm_squared();
        }
        let (full, reduced) = (full / trials as f64, reduced / trials as f64);
        assert!((full / reduced - 1.0).abs() < 0.03, "{full} vs {reduced}");
    }

    #[test]
    fn variance_ignores_noise_realisation() {
        let p = params(0.95, 1.0, 0.5);
        let bits = [true, false, false, true, false];
        let trace = |seed: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut s = CommChannelState::initial(&p, 3, &mut r);
            bits.iter()
                .map(|&b| {
                    s.g_true = evolve_true_channel(&s.g_true, p.rho, p.beta_bar, &mut r);
                    let e = update_csi(&s, b, &p, 10, &mut r);
                    s.g_hat = e.g_hat;
                    s.varsigma = e.varsigma;
                    s.varsigma
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(trace(1), trace(2));
    }

    #[test]
    fn rate_hand_values() {
        let g = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let p: f64 = 2.0;
        let w = CMatrix::from_column_slice(2, 1, &[C64::new(p.sqrt(), 0.0), C64::new(0.0, 0.0)]);
        assert_relative_eq!(
            effective_rate(&g, 0.0, &w, 0, 800, 0, p, p),
            2f64.ln(),
            max_relative = 1e-14
        );
        assert_eq!(effective_rate(&g, 0.0, &w, 0, 800, 800, p, p), 0.0);
        let orth = CMatrix::from_column_slice(2, 1, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        assert_eq!(effective_rate(&g, 0.0, &orth, 0, 800, 0, p, p), 0.0);
    }

    #[test]
    fn rate_monotone_in_error_and_overhead() {
        let mut r = rng();
        let g = complex_gaussian(4, 1.0, &mut r);
        let w = CMatrix::from_fn(4, 2, |_, _| complex_gaussian(1, 0.25, &mut r)[0]);
        let mut prev = f64::INFINITY;
        for s in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let c = effective_rate(&g, s, &w, 0, 800, 20, 0.1, 1.0);
            assert!(c <= prev);
            prev = c;
        }
        let mut prev = f64::INFINITY;
        for m1 in [0, 10, 100, 400, 800] {
            let c = effective_rate(&g, 0.2, &w, 1, 800, m1, 0.1, 1.0);
            assert!(c <= prev);
            prev = c;
        }
    }
}
