//! Browser bindings for three cheap views of the model: how channel error
//! ages under prediction, how a target's tracking bound evolves under
//! periodic re-estimation, and the beam pattern of the optimized precoder
//! against matched filtering.

use std::f64::consts::FRAC_PI_2;

use isac_core::beamforming::{mrt_beamformer, solve_p2, P2Problem, SolverOptions};
use isac_core::comm::{predict_csi, CommEstimate};
use isac_core::instances::{random_candidate, random_decision};
use isac_core::linalg::CMatrix;
use isac_core::radar::{correct_track, crb_coefficients, predict_track, sensing_gain, TrackState};
use isac_core::{IsacError, Preset, Scenario};
use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js(e: IsacError) -> JsError {
    JsError::new(&e.to_string())
}

/// Error variance of a channel predicted for `frames` frames from `start`.
pub fn varsigma_aging_curve(rho: f64, beta_bar: f64, start: f64, frames: usize) -> Vec<f64> {
    let mut params = Scenario::from_preset(Preset::Desk)
        .expect("desk preset is valid")
        .users[0]
        .clone();
    params.rho = rho;
    params.beta_bar = beta_bar;
    let mut est = CommEstimate {
        g_hat: DVector::zeros(1),
        varsigma: start,
    };
    std::iter::once(start)
        .chain((0..frames).map(|_| {
            est = predict_csi(&est, &params);
            est.varsigma
        }))
        .collect()
}

#[wasm_bindgen]
pub fn varsigma_aging(
    rho: f64,
    beta_bar: f64,
    start: f64,
    frames: usize,
) -> Result<Vec<f64>, JsError> {
    if !(0.0..=1.0).contains(&rho)
        || beta_bar.is_nan()
        || beta_bar <= 0.0
        || start.is_nan()
        || start < 0.0
    {
        return Err(JsError::new(
            "need 0 ≤ ρ ≤ 1, β̄ > 0 and a non-negative start",
        ));
    }
    Ok(varsigma_aging_curve(rho, beta_bar, start, frames))
}

/// Trace of the tracking bound of desk target `target`, re-estimated at
/// sensing gain `gamma` every `period` frames (0 never) along its noiseless
/// trajectory.
pub fn pcrb_trace_curve(
    target: usize,
    gamma: f64,
    period: usize,
    frames: usize,
) -> Result<Vec<f64>, IsacError> {
    let s = Scenario::from_preset(Preset::Desk)?;
    let params = s
        .targets
        .get(target)
        .ok_or_else(|| IsacError::InvalidArgument(format!("no target {target}")))?;
    let sys = s.system();
    let mut track = TrackState {
        x_hat: Vector3::from(params.initial_state),
        pcrb: params.initial_pcrb_matrix(),
    };
    let mut out = vec![track.pcrb.trace()];
    for n in 1..=frames {
        let pred = predict_track(&track, params, sys.frame_duration())?;
        track = if period > 0 && n % period == 0 {
            let crb = crb_coefficients(
                &pred.x_pred,
                params.velocity_angle,
                params.rcs,
                sys,
                sys.symbols_per_frame,
            )?;
            correct_track(&pred, &pred.x_pred, &crb, gamma)?
        } else {
            TrackState {
                x_hat: pred.x_pred,
                pcrb: pred.m_pred,
            }
        };
        out.push(track.pcrb.trace());
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn pcrb_trace(
    target: usize,
    gamma: f64,
    period: usize,
    frames: usize,
) -> Result<Vec<f64>, JsError> {
    pcrb_trace_curve(target, gamma, period, frames).map_err(js)
}

/// Array gain over `points` angles in [−π/2, π/2] for a random desk frame
/// sensing target 0: the optimized precoder first, then matched filtering.
pub fn beam_pattern_curves(seed: u64, points: usize) -> Result<Vec<f64>, IsacError> {
    let s = Scenario::from_preset(Preset::Desk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decision = random_decision(&s, &mut rng);
    decision.radar[0] = true;
    let candidate = random_candidate(&s, &decision, &mut rng);
    let problem = P2Problem::new(&candidate, &s)?;
    let fp = solve_p2(&problem, &SolverOptions::default())?.w;
    let mrt = mrt_beamformer(&problem.channels, problem.power)?;
    let angles: Vec<f64> = (0..points)
        .map(|i| -FRAC_PI_2 + std::f64::consts::PI * i as f64 / (points.max(2) - 1) as f64)
        .collect();
    let pattern = |w: &CMatrix| {
        angles
            .iter()
            .map(|&t| sensing_gain(w, t))
            .collect::<Vec<_>>()
    };
    Ok([pattern(&fp), pattern(&mrt)].concat())
}

#[wasm_bindgen]
pub fn beam_pattern(seed: u64, points: usize) -> Result<Vec<f64>, JsError> {
    beam_pattern_curves(seed, points).map_err(js)
}
