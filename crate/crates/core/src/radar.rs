//! Target kinematics, the CRB measurement surrogate, EKF tracking with its
//! posterior bound, and the radar performance metric.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RadarTargetParams, SystemConfig};
use crate::error::{IsacError, Result};
use crate::linalg::{symmetrize, CMatrix, CVector, C64};
use crate::rng::standard_normal;

/// Smallest admissible |cos| in the CRB expressions.
pub const GRAZING_LIMIT: f64 = 1e-6;
/// Largest admissible condition number of a predicted bound.
pub const MAX_CONDITION: f64 = 1e12;

/// Estimate `[angle, distance, velocity]` and its posterior bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub x_hat: Vector3<f64>,
    pub pcrb: Matrix3<f64>,
}

/// Output of the EKF prediction step, shared by both decision branches.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPrediction {
    pub x_pred: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
    pub m_pred: Matrix3<f64>,
}

/// CRB numerators for unit sensing gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbCoefficients {
    pub angle: f64,
    pub distance: f64,
    pub velocity: f64,
}

impl CrbCoefficients {
    pub fn diagonal(&self) -> Vector3<f64> {
        Vector3::new(self.angle, self.distance, self.velocity)
    }

    pub fn sigma_delta(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.diagonal())
    }
}

/// Eigen-decomposed pieces of the tracking error used by the metric and the
/// beamforming solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTerms {
    pub lambda: [f64; 3],
    pub psi: [f64; 3],
    pub psi_tilde: f64,
    pub c: Matrix3<f64>,
}

impl ErrorTerms {
    /// Weighted posterior error `Σ_l ψ_l / (γ + λ_l)`.
    pub fn posterior_error(&self, gamma: f64) -> f64 {
        self.psi
            .iter()
            .zip(&self.lambda)
            .map(|(p, l)| p / (gamma + l))
            .sum()
    }
}

fn check_distance(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(IsacError::DegenerateGeometry(d))
    }
}

/// Constant-velocity motion over one frame of duration `frame_duration`.
pub fn gamma_transition(
    x: &Vector3<f64>,
    velocity_angle: f64,
    frame_duration: f64,
) -> Result<Vector3<f64>> {
    let next = x + gamma_displacement(x, velocity_angle, frame_duration)?;
    check_distance(next[1])?;
    Ok(next)
}

/// `Γ(x) − x`, computed without forming `Γ(x)`.
pub fn gamma_displacement(
    x: &Vector3<f64>,
    velocity_angle: f64,
    frame_duration: f64,
) -> Result<Vector3<f64>> {
    let (theta, d, v) = (x[0], x[1], x[2]);
    check_distance(d)?;
    let phi = theta - velocity_angle;
    let step = v * frame_duration;
    Ok(Vector3::new(step * phi.sin() / d, -step * phi.cos(), 0.0))
}

pub fn gamma_jacobian(
    x: &Vector3<f64>,
    velocity_angle: f64,
    frame_duration: f64,
) -> Result<Matrix3<f64>> {
    let (theta, d, v) = (x[0], x[1], x[2]);
    check_distance(d)?;
    let phi = theta - velocity_angle;
    let (s, c) = phi.sin_cos();
    let t = frame_duration;
    Ok(Matrix3::new(
        1.0 + v * t * c / d,
        -v * t * s / (d * d),
        t * s / d,
        v * t * s,
        1.0,
        -t * c,
        0.0,
        0.0,
        1.0,
    ))
}

/// `x' = Γ(x) + ε` with `ε ~ N(0, Σ_ε)`; `z` holds three standard normals.
pub fn evolve_with_draws(
    x: &Vector3<f64>,
    params: &RadarTargetParams,
    frame_duration: f64,
    z: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let mean = gamma_transition(x, params.velocity_angle, frame_duration)?;
    let std = Vector3::from(params.evolution_noise).map(f64::sqrt);
    let next = mean + std.component_mul(z);
    check_distance(next[1])?;
    Ok(next)
}

pub fn evolve_true_state<R: Rng + ?Sized>(
    x: &Vector3<f64>,
    params: &RadarTargetParams,
    frame_duration: f64,
    rng: &mut R,
) -> Result<Vector3<f64>> {
    let z = Vector3::from_fn(|_, _| standard_normal(rng));
    evolve_with_draws(x, params, frame_duration, &z)
}

/// CRB numerators at state `x` when `data_symbols` symbols carry the echo.
pub fn crb_coefficients(
    x: &Vector3<f64>,
    velocity_angle: f64,
    rcs: f64,
    cfg: &SystemConfig,
    data_symbols: usize,
) -> Result<CrbCoefficients> {
    let (theta, d) = (x[0], x[1]);
    check_distance(d)?;
    if data_symbols < 2 {
        return Err(IsacError::InvalidArgument(format!(
            "at least two echo symbols are required, got {data_symbols}"
        )));
    }
    let cos_theta = theta.cos();
    let cos_motion = (theta - velocity_angle).cos();
    if cos_theta.abs() < GRAZING_LIMIT {
        return Err(IsacError::Singularity(format!(
            "angle {theta} rad is at broadside"
        )));
    }
    if cos_motion.abs() < GRAZING_LIMIT {
        return Err(IsacError::Singularity(format!(
            "motion is tangential (angle {theta} rad, heading {velocity_angle} rad)"
        )));
    }
    let c0 = cfg.c0;
    let b = cfg.subcarriers as f64;
    let m2 = data_symbols as f64;
    let l_r = cfg.rx_antennas as f64;
    let l_t = cfg.tx_antennas as f64;
    let sigma = cfg.radar_noise();
    let alpha_sq = c0 * c0 * rcs / ((4.0 * PI).powi(3) * cfg.fc * cfg.fc * d.powi(4));
    let xi = alpha_sq * PI * PI * b * m2 * l_r * l_t;
    let doppler = cfg.t_symbol * cfg.fc * cos_motion;
    Ok(CrbCoefficients {
        angle: 6.0 * sigma / (xi * cos_theta * cos_theta * (l_r * l_r - 1.0)),
        distance: 3.0 * c0 * c0 * sigma / (8.0 * xi * cfg.delta_f * cfg.delta_f * (b * b - 1.0)),
        velocity: 3.0 * c0 * c0 * sigma / (8.0 * xi * doppler * doppler * (m2 * m2 - 1.0)),
    })
}

/// Half-wavelength ULA response `v(θ)` such that `v^H w` is the array gain
/// towards `θ`: entries `e^{-jπ l sin θ} / √L`.
pub fn steering_vector(theta: f64, antennas: usize) -> CVector {
    let scale = 1.0 / (antennas as f64).sqrt();
    let s = theta.sin();
    CVector::from_fn(antennas, |l, _| C64::from_polar(scale, -PI * l as f64 * s))
}

/// `Σ_k |v(θ)^H w_k|²`.
pub fn sensing_gain(w: &CMatrix, theta: f64) -> f64 {
    let v = steering_vector(theta, w.nrows());
    (v.adjoint() * w).iter().map(|z| z.norm_sqr()).sum()
}

/// Measurement `x + δ`, `δ ~ N(0, Σ_δ/γ)`; `z` holds three standard normals.
pub fn measurement_from_draws(
    x_true: &Vector3<f64>,
    crb: &CrbCoefficients,
    gamma: f64,
    z: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    if !(gamma > 0.0) {
        return Err(IsacError::NoIllumination {
            target: 0,
            gain: gamma,
        });
    }
    let std = (crb.diagonal() / gamma).map(f64::sqrt);
    Ok(x_true + std.component_mul(z))
}

pub fn synthesize_measurement<R: Rng + ?Sized>(
    x_true: &Vector3<f64>,
    crb: &CrbCoefficients,
    gamma: f64,
    rng: &mut R,
) -> Result<Vector3<f64>> {
    let z = Vector3::from_fn(|_, _| standard_normal(rng));
    measurement_from_draws(x_true, crb, gamma, &z)
}

/// Eigenvalues of a symmetric matrix, checked for positive definiteness and
/// conditioning.
fn check_conditioning(m: &Matrix3<f64>) -> Result<()> {
    let eig = m.symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(min > 0.0) || !max.is_finite() {
        return Err(IsacError::IllConditioned(f64::INFINITY));
    }
    let cond = max / min;
    if cond > MAX_CONDITION {
        return Err(IsacError::IllConditioned(cond));
    }
    Ok(())
}

/// EKF prediction: `x̃ = Γ(x̂)`, `M̃ = Σ_ε + Γ' M Γ'^T`.
pub fn predict_track(
    track: &TrackState,
    params: &RadarTargetParams,
    frame_duration: f64,
) -> Result<TrackPrediction> {
    let x_pred = gamma_transition(&track.x_hat, params.velocity_angle, frame_duration)?;
    let jacobian = gamma_jacobian(&track.x_hat, params.velocity_angle, frame_duration)?;
    let m_pred =
        symmetrize(&(params.evolution_covariance() + jacobian * track.pcrb * jacobian.transpose()));
    Ok(TrackPrediction {
        x_pred,
        jacobian,
        m_pred,
    })
}

/// EKF correction with measurement `x_bar` of covariance `Σ_δ / γ`.
pub fn correct_track(
    pred: &TrackPrediction,
    x_bar: &Vector3<f64>,
    crb: &CrbCoefficients,
    gamma: f64,
) -> Result<TrackState> {
    if !(gamma > 0.0) {
        return Err(IsacError::NoIllumination {
            target: 0,
            gain: gamma,
        });
    }
    check_conditioning(&pred.m_pred)?;
    let r = crb.sigma_delta() / gamma;
    let s = r + pred.m_pred;
    let s_inv = s
        .try_inverse()
        .ok_or(IsacError::IllConditioned(f64::INFINITY))?;
    let gain = pred.m_pred * s_inv;
    let x_hat = pred.x_pred + gain * (x_bar - pred.x_pred);
    check_distance(x_hat[1])?;
    let m_inv = pred
        .m_pred
        .try_inverse()
        .ok_or(IsacError::IllConditioned(f64::INFINITY))?;
    let info = m_inv + Matrix3::from_diagonal(&crb.diagonal().map(|a| gamma / a));
    let pcrb = info
        .try_inverse()
        .ok_or(IsacError::IllConditioned(f64::INFINITY))?;
    Ok(TrackState {
        x_hat,
        pcrb: symmetrize(&pcrb),
    })
}

/// One EKF step; `x_bar` is required when `estimate` is set.
pub fn ekf_step(
    track: &TrackState,
    estimate: bool,
    x_bar: Option<&Vector3<f64>>,
    crb: &CrbCoefficients,
    gamma: f64,
    params: &RadarTargetParams,
    frame_duration: f64,
) -> Result<TrackState> {
    let pred = predict_track(track, params, frame_duration)?;
    if !estimate {
        return Ok(TrackState {
            x_hat: pred.x_pred,
            pcrb: pred.m_pred,
        });
    }
    let x_bar = x_bar.ok_or_else(|| {
        IsacError::InvalidArgument("an estimation step needs a measurement".into())
    })?;
    correct_track(&pred, x_bar, crb, gamma)
}

/// Decomposes `B = Σ_δ^{1/2} M̃^{-1} Σ_δ^{1/2} = U Λ U^T` and forms the
/// weighted projections of `C = Σ_δ^{1/2} U`.
pub fn eigen_error_terms(
    m_pred: &Matrix3<f64>,
    crb: &CrbCoefficients,
    omega: &[f64; 3],
) -> Result<ErrorTerms> {
    check_conditioning(m_pred)?;
    // `B⁻¹ = Σ_δ^{-1/2} M̃ Σ_δ^{-1/2}` shares B's eigenvectors; decomposing it
    // avoids inverting a possibly ill-conditioned M̃.
    let sqrt_s = Matrix3::from_diagonal(&crb.diagonal().map(f64::sqrt));
    let inv_sqrt_s = Matrix3::from_diagonal(&crb.diagonal().map(|a| 1.0 / a.sqrt()));
    let eig = SymmetricEigen::new(symmetrize(&(inv_sqrt_s * m_pred * inv_sqrt_s)));
    if !eig.eigenvalues.iter().all(|&k| k > 0.0 && k.is_finite()) {
        return Err(IsacError::IllConditioned(f64::INFINITY));
    }
    let c = sqrt_s * eig.eigenvectors;
    let mut lambda = [0.0; 3];
    let mut psi = [0.0; 3];
    for l in 0..3 {
        lambda[l] = 1.0 / eig.eigenvalues[l];
        psi[l] = (0..3).map(|j| omega[j] * c[(j, l)] * c[(j, l)]).sum();
    }
    let psi_tilde = (0..3).map(|j| omega[j] * m_pred[(j, j)]).sum();
    Ok(ErrorTerms {
        lambda,
        psi,
        psi_tilde,
        c,
    })
}

/// Self-interference cancellation cost at sensing gain `gamma`.
pub fn sic_cost(gamma: f64, cfg: &SystemConfig) -> f64 {
    cfg.xi_a - cfg.xi_b * (gamma / (cfg.xi_c * cfg.power + cfg.radar_noise())).log10()
}

/// Weighted tracking error and SIC cost of one target.
pub fn radar_performance(
    estimate: bool,
    terms: &ErrorTerms,
    gamma: f64,
    cfg: &SystemConfig,
) -> Result<f64> {
    if !estimate {
        return Ok(cfg.omega_bar * terms.psi_tilde);
    }
    if !(gamma > 0.0) {
        return Err(IsacError::NoIllumination {
            target: 0,
            gain: gamma,
        });
    }
    Ok(cfg.omega_bar * terms.posterior_error(gamma) + (1.0 - cfg.omega_bar) * sic_cost(gamma, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Preset, Scenario};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(noise: [f64; 3]) -> RadarTargetParams {
        RadarTargetParams {
            velocity_angle: 0.3,
            evolution_noise: noise,
            rcs: 1.0,
            initial_state: [0.5, 150.0, 30.0],
            initial_pcrb: [[1e-4, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]],
            weight: 1.0,
        }
    }

    fn random_spd<R: Rng>(rng: &mut R) -> Matrix3<f64> {
        crate::instances::random_pcrb(rng)
    }

    fn random_crb<R: Rng>(rng: &mut R) -> CrbCoefficients {
        crate::instances::random_crb(rng)
    }

    #[test]
    fn transition_hand_values() {
        let x = Vector3::new(0.4, 120.0, 0.0);
        assert_eq!(gamma_transition(&x, 1.0, 0.01).unwrap(), x);

        let x = Vector3::new(0.7, 100.0, 10.0);
        let y = gamma_transition(&x, 0.7, 1e-3).unwrap();
        assert_eq!(y[0], 0.7);
        assert_relative_eq!(y[1], 100.0 - 1e-2, max_relative = 1e-15);

        let y = gamma_transition(&Vector3::new(0.7 + PI / 2.0, 100.0, 10.0), 0.7, 1e-3).unwrap();
        assert_relative_eq!(y[0], 0.7 + PI / 2.0 + 1e-4, max_relative = 1e-14);
        assert_relative_eq!(y[1], 100.0, max_relative = 1e-14);
    }

    #[test]
    fn approaching_target_closes_in() {
        let x = Vector3::new(0.2, 50.0, 5.0);
        let y = gamma_transition(&x, 0.2, 0.1).unwrap();
        assert!(y[1] < x[1]);
        assert!(matches!(
            gamma_transition(&Vector3::new(0.2, 0.4, 5.0), 0.2, 0.1),
            Err(IsacError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn jacobian_hand_values() {
        let t = 6.4e-3;
        let x = Vector3::new(1.1, 80.0, 0.0);
        let j = gamma_jacobian(&x, 0.2, t).unwrap();
        let phi: f64 = 1.1 - 0.2;
        let mut expect = Matrix3::identity();
        expect[(0, 2)] = t * phi.sin() / 80.0;
        expect[(1, 2)] = -t * phi.cos();
        assert_relative_eq!(j, expect, epsilon = 1e-15);

        let j = gamma_jacobian(&Vector3::new(0.2, 80.0, 12.0), 0.2, t).unwrap();
        assert_relative_eq!(j[(0, 0)], 1.0 + 12.0 * t / 80.0, max_relative = 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = Vector3::new(
                rng.random_range(-1.4..1.4),
                rng.random_range(50.0..500.0),
                rng.random_range(-40.0..40.0),
            );
            let tb = rng.random_range(-PI..PI);
            let t = 6.4e-3;
            let j = gamma_jacobian(&x, tb, t).unwrap();
            for c in 0..3 {
                let h = 1e-6 * x[c].abs().max(1.0);
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                // Differencing the displacement Γ(x) − x avoids cancellation
                // against the large identity part.
                let disp = |y: &Vector3<f64>| gamma_displacement(y, tb, t).unwrap();
                let fd = (disp(&xp) - disp(&xm)) / (2.0 * h);
                for r in 0..3 {
                    let exact = j[(r, c)] - if r == c { 1.0 } else { 0.0 };
                    let err = (fd[r] - exact).abs();
                    assert!(
                        err <= 1e-5 * exact.abs() + 1e-12,
                        "({r},{c}): {} vs {}",
                        fd[r],
                        exact
                    );
                }
            }
        }
    }

    #[test]
    fn noiseless_evolution_is_deterministic() {
        let p = params([0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Vector3::new(0.5, 150.0, 30.0);
        let y = evolve_true_state(&x, &p, 6.4e-3, &mut rng).unwrap();
        assert_eq!(y, gamma_transition(&x, p.velocity_angle, 6.4e-3).unwrap());
    }

    #[test]
    fn evolution_noise_covariance_monte_carlo() {
        let p = params([1e-4, 0.3, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Vector3::new(0.5, 150.0, 30.0);
        let mean = gamma_transition(&x, p.velocity_angle, 6.4e-3).unwrap();
        let trials = 100_000;
        let mut acc = Vector3::zeros();
        let mut v_sum = 0.0;
        for _ in 0..trials {
            let e = evolve_true_state(&x, &p, 6.4e-3, &mut rng).unwrap() - mean;
            acc += e.component_mul(&e);
            v_sum += e[2];
        }
        for i in 0..3 {
            let emp = acc[i] / trials as f64;
            assert!((emp / p.evolution_noise[i] - 1.0).abs() < 0.03);
        }
        // The velocity mean is unbiased: sample mean within 4 standard errors.
        assert!((v_sum / trials as f64).abs() < 4.0 * (2.0 / trials as f64).sqrt());
    }

    #[test]
    fn crb_scaling_laws() {
        let s = Scenario::from_preset(Preset::Desk).unwrap();
        let cfg = s.system().clone();
        let x = Vector3::new(0.5, 150.0, 30.0);
        let a = crb_coefficients(&x, 2.0, 1.0, &cfg, 780).unwrap();
        let far = crb_coefficients(&Vector3::new(0.5, 300.0, 30.0), 2.0, 1.0, &cfg, 780).unwrap();
        assert_relative_eq!(far.angle, 16.0 * a.angle, max_relative = 1e-12);
        assert_relative_eq!(far.distance, 16.0 * a.distance, max_relative = 1e-12);
        assert_relative_eq!(far.velocity, 16.0 * a.velocity, max_relative = 1e-12);

        let mut cfg2 = cfg.clone();
        cfg2.rx_antennas *= 2;
        let b = crb_coefficients(&x, 2.0, 1.0, &cfg2, 780).unwrap();
        let lr = cfg.rx_antennas as f64;
        let ratio = (lr * (lr * lr - 1.0)) / (2.0 * lr * (4.0 * lr * lr - 1.0));
        assert_relative_eq!(b.angle, a.angle * ratio, max_relative = 1e-12);
        assert_relative_eq!(b.distance, a.distance / 2.0, max_relative = 1e-12);

        assert!(matches!(
            crb_coefficients(&Vector3::new(PI / 2.0, 150.0, 30.0), 2.0, 1.0, &cfg, 780),
            Err(IsacError::Singularity(_))
        ));
        let near = crb_coefficients(
            &Vector3::new(PI / 2.0 - 1e-3, 150.0, 30.0),
            2.0,
            1.0,
            &cfg,
            780,
        )
        .unwrap();
        assert!(near.angle > 1e5 * a.angle);
    }

    #[test]
    fn crb_direct_formula() {
        let s = Scenario::from_preset(Preset::Paper).unwrap();
        let cfg = s.system();
        let (theta, d, tb, m2) = (PI / 4.0, 150.0, PI / 4.0 + 11.0 * PI / 12.0, 790usize);
        let a = crb_coefficients(&Vector3::new(theta, d, 30.0), tb, 1.0, cfg, m2).unwrap();
        // straight-line evaluation
        let sigma = 156.25e3 * 10f64.powf(-20.4);
        let alpha2 = 9e16 / ((4.0 * PI).powi(3) * 5.89e9f64.powi(2) * d.powi(4));
        let xi = alpha2 * PI * PI * 64.0 * 790.0 * 32.0 * 64.0;
        let at = 6.0 * sigma / (xi * theta.cos().powi(2) * (32.0 * 32.0 - 1.0));
        let ad = 3.0 * 9e16 * sigma / (8.0 * xi * 156.25e3f64.powi(2) * (64.0 * 64.0 - 1.0));
        let av = 3.0 * 9e16 * sigma
            / (8.0 * xi * (8e-6 * 5.89e9 * (theta - tb).cos()).powi(2) * (790.0f64.powi(2) - 1.0));
        assert_relative_eq!(a.angle, at, max_relative = 1e-9);
        assert_relative_eq!(a.distance, ad, max_relative = 1e-9);
        assert_relative_eq!(a.velocity, av, max_relative = 1e-9);
    }

    #[test]
    fn sensing_gain_cases() {
        let w = CMatrix::zeros(8, 3);
        assert_eq!(sensing_gain(&w, 0.4), 0.0);
        let p: f64 = 2.5;
        let v = steering_vector(0.4, 8);
        let w = CMatrix::from_columns(&[v.clone() * C64::from(p.sqrt())]);
        assert_relative_eq!(sensing_gain(&w, 0.4), p, max_relative = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = CMatrix::from_fn(6, 3, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let theta: f64 = 0.77;
        let mut oracle = 0.0;
        for k in 0..3 {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..6 {
                // conj(v_l) w_lk with v_l = e^{-jπ l sinθ}/√L
                let vl = C64::from_polar(1.0 / 6f64.sqrt(), -PI * l as f64 * theta.sin());
                acc += vl.conj() * w[(l, k)];
            }
            oracle += acc.norm_sqr();
        }
        assert_relative_eq!(sensing_gain(&w, theta), oracle, max_relative = 1e-12);
    }

    #[test]
    fn measurement_statistics() {
        let crb = CrbCoefficients {
            angle: 1e-4,
            distance: 2.0,
            velocity: 0.5,
        };
        let gamma = 4.0;
        let x = Vector3::new(0.3, 100.0, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trials = 100_000;
        let mut sq = Vector3::zeros();
        let mut cross = 0.0;
        for _ in 0..trials {
            let e = synthesize_measurement(&x, &crb, gamma, &mut rng).unwrap() - x;
            sq += e.component_mul(&e);
            cross += e[1] * e[2];
        }
        let want = crb.diagonal() / gamma;
        for i in 0..3 {
            assert!((sq[i] / trials as f64 / want[i] - 1.0).abs() < 0.03);
        }
        let cross_sd = (want[1] * want[2] / trials as f64).sqrt();
        assert!((cross / trials as f64).abs() < 3.0 * cross_sd);

        let exact = measurement_from_draws(&x, &crb, 1e30, &Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(exact, x, epsilon = 1e-12);
        assert!(synthesize_measurement(&x, &crb, 0.0, &mut rng).is_err());
    }

    #[test]
    fn prediction_recursion_matches_hand_composition() {
        let p = params([1e-6, 1e-3, 1e-2]);
        let t = 6.4e-3;
        let track = TrackState {
            x_hat: Vector3::new(0.5, 150.0, 30.0),
            pcrb: p.initial_pcrb_matrix(),
        };
        let dummy = CrbCoefficients {
            angle: 1.0,
            distance: 1.0,
            velocity: 1.0,
        };
        let one = ekf_step(&track, false, None, &dummy, 1.0, &p, t).unwrap();
        let two = ekf_step(&one, false, None, &dummy, 1.0, &p, t).unwrap();
        let j0 = gamma_jacobian(&track.x_hat, p.velocity_angle, t).unwrap();
        let x1 = gamma_transition(&track.x_hat, p.velocity_angle, t).unwrap();
        let j1 = gamma_jacobian(&x1, p.velocity_angle, t).unwrap();
        let se = p.evolution_covariance();
        let expect = se + j1 * (se + j0 * track.pcrb * j0.transpose()) * j1.transpose();
        assert_relative_eq!(two.pcrb, expect, max_relative = 1e-12);
    }

    #[test]
    fn strong_measurement_dominates() {
        let p = params([1e-6, 1e-3, 1e-2]);
        let track = TrackState {
            x_hat: Vector3::new(0.5, 150.0, 30.0),
            pcrb: p.initial_pcrb_matrix(),
        };
        let crb = CrbCoefficients {
            angle: 1e-6,
            distance: 1e-3,
            velocity: 1e-3,
        };
        let xb = Vector3::new(0.51, 151.0, 29.0);
        let out = ekf_step(&track, true, Some(&xb), &crb, 1e12, &p, 6.4e-3).unwrap();
        assert_relative_eq!(out.x_hat, xb, max_relative = 1e-9);
        assert!(out.pcrb.norm() < 1e-12);
    }

    #[test]
    fn correction_shrinks_bound_and_matches_eigen_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let m = random_spd(&mut rng);
            let crb = random_crb(&mut rng);
            let gamma = 10f64.powf(rng.random_range(-3.0..3.0));
            let pred = TrackPrediction {
                x_pred: Vector3::new(0.3, 100.0, 3.0),
                jacobian: Matrix3::identity(),
                m_pred: m,
            };
            let post = correct_track(&pred, &pred.x_pred, &crb, gamma).unwrap();
            let diff = m - post.pcrb;
            assert!(diff.symmetric_eigenvalues().min() >= -1e-10 * m.norm());

            let terms = eigen_error_terms(&m, &crb, &[1.0, 1.0, 1.0]).unwrap();
            let inv =
                Matrix3::from_diagonal(&Vector3::from(terms.lambda).map(|l| 1.0 / (l + gamma)));
            let via_eigen = terms.c * inv * terms.c.transpose();
            assert!((via_eigen - post.pcrb).norm() <= 1e-10 * post.pcrb.norm().max(1.0));
        }
    }

    #[test]
    fn eigen_terms_cases() {
        let crb = CrbCoefficients {
            angle: 2e-3,
            distance: 0.5,
            velocity: 3.0,
        };
        let t = eigen_error_terms(&crb.sigma_delta(), &crb, &[1.0, 2.0, 0.5]).unwrap();
        for l in t.lambda {
            assert_relative_eq!(l, 1.0, max_relative = 1e-12);
        }
        let psi_sum: f64 = t.psi.iter().sum();
        assert_relative_eq!(psi_sum, 2e-3 + 1.0 + 1.5, max_relative = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let omega = [0.7, 1.3, 0.2];
        for _ in 0..200 {
            let m = random_spd(&mut rng);
            let crb = random_crb(&mut rng);
            let gamma = 10f64.powf(rng.random_range(-2.0..2.0));
            let t = eigen_error_terms(&m, &crb, &omega).unwrap();
            let direct = (m.try_inverse().unwrap()
                + Matrix3::from_diagonal(&crb.diagonal().map(|a| gamma / a)))
            .try_inverse()
            .unwrap();
            let want: f64 = (0..3).map(|j| omega[j] * direct[(j, j)]).sum();
            assert!((t.posterior_error(gamma) - want).abs() <= 1e-10 * want.max(1e-12));
            let unweighted = eigen_error_terms(&m, &crb, &[1.0; 3]).unwrap();
            assert_relative_eq!(unweighted.psi_tilde, m.trace(), max_relative = 1e-14);
        }
    }

    #[test]
    fn ill_conditioned_prediction_is_rejected() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 1e-14));
        let crb = CrbCoefficients {
            angle: 1.0,
            distance: 1.0,
            velocity: 1.0,
        };
        assert!(matches!(
            eigen_error_terms(&m, &crb, &[1.0; 3]),
            Err(IsacError::IllConditioned(_))
        ));
    }

    #[test]
    fn radar_metric_cases() {
        let s = Scenario::from_preset(Preset::Desk).unwrap();
        let mut cfg = s.system().clone();
        let crb = CrbCoefficients {
            angle: 2e-3,
            distance: 0.5,
            velocity: 3.0,
        };
        let m = Matrix3::from_diagonal(&Vector3::new(1e-2, 4.0, 1.0));
        let t = eigen_error_terms(&m, &crb, &cfg.omega).unwrap();
        let g0 = cfg.xi_c * cfg.power + cfg.radar_noise();
        let r = radar_performance(true, &t, g0, &cfg).unwrap();
        assert_relative_eq!(
            r,
            cfg.omega_bar * t.posterior_error(g0) + (1.0 - cfg.omega_bar) * cfg.xi_a,
            max_relative = 1e-12
        );
        let a = radar_performance(false, &t, 0.1, &cfg).unwrap();
        let b = radar_performance(false, &t, 10.0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(radar_performance(true, &t, 0.0, &cfg).is_err());

        cfg.omega_bar = 1.0;
        let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&g| radar_performance(true, &t, g, &cfg).unwrap())
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }
        // convexity on a log-spaced grid: check via midpoint in γ
        for &g in &grid {
            let f = |x: f64| t.posterior_error(x);
            assert!(f(g * 1.5) <= 0.5 * (f(g) + f(g * 2.0)) + 1e-15);
        }
    }
}
