//! Random problem instances for property tests and the acceptance suite.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::beamforming::{CandidateState, RadarBranch};
use crate::comm::CommEstimate;
use crate::config::Scenario;
use crate::decision::DecisionPair;
use crate::radar::{crb_coefficients, eigen_error_terms, CrbCoefficients};
use crate::rng::complex_gaussian;

/// Random symmetric positive definite matrix with per-axis scales typical of
/// predicted tracking bounds.
pub fn random_pcrb<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let scale = Matrix3::from_diagonal(&Vector3::new(
        10f64.powf(rng.random_range(-3.0..-1.0)),
        10f64.powf(rng.random_range(-1.0..1.0)),
        10f64.powf(rng.random_range(-1.5..0.0)),
    ));
    scale * (a * a.transpose() + Matrix3::identity() * 0.3) * scale
}

/// Random unit-gain CRB coefficients spanning several decades per axis.
pub fn random_crb<R: Rng + ?Sized>(rng: &mut R) -> CrbCoefficients {
    CrbCoefficients {
        angle: 10f64.powf(rng.random_range(-6.0..-2.0)),
        distance: 10f64.powf(rng.random_range(-3.0..1.0)),
        velocity: 10f64.powf(rng.random_range(-3.0..0.0)),
    }
}

/// Candidate state for `decision` with random estimates drawn at the
/// scenario's signal scales.
pub fn random_candidate<R: Rng + ?Sized>(
    scenario: &Scenario,
    decision: &DecisionPair,
    rng: &mut R,
) -> CandidateState {
    let sys = scenario.system();
    let comm = scenario
        .users
        .iter()
        .map(|u| {
            let frac = rng.random_range(0.02..0.6);
            CommEstimate {
                g_hat: complex_gaussian(sys.tx_antennas, u.beta_bar * (1.0 - frac), rng),
                varsigma: u.beta_bar * frac,
            }
        })
        .collect();
    let training_symbols = sys.training_symbols(decision.estimating_users());
    let data_symbols = sys.symbols_per_frame - training_symbols;
    let radar = scenario
        .targets
        .iter()
        .zip(&decision.radar)
        .map(|(t, &estimate)| {
            let theta = rng.random_range(-1.3..1.3);
            let x = Vector3::new(theta, rng.random_range(100.0..400.0), 30.0);
            let crb = crb_coefficients(&x, t.velocity_angle, t.rcs, sys, data_symbols)
                .expect("random geometry away from singularities");
            let terms = eigen_error_terms(&random_pcrb(rng), &crb, &sys.omega)
                .expect("well-conditioned random bound");
            RadarBranch {
                estimate,
                terms,
                sensing_angle: theta,
            }
        })
        .collect();
    CandidateState {
        comm,
        radar,
        training_symbols,
    }
}

/// Uniformly random decision pair respecting the uplink timing limit.
pub fn random_decision<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> DecisionPair {
    crate::baselines::random_decision(
        scenario.num_users(),
        scenario.num_targets(),
        scenario.system().max_reestimations(),
        rng,
    )
}
