//! Simulation state shared by every decision policy: the true channels and
//! target states, the base station's estimates, and the per-frame branch
//! precomputation used to score candidate decisions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::beamforming::{
    beamform, BeamformerMode, CandidateState, DecisionOutcome, RadarBranch, SolverOptions,
};
use crate::comm::{self, CommChannelState, CommEstimate};
use crate::config::Scenario;
use crate::decision::DecisionPair;
use crate::error::{IsacError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::radar::{self, ErrorTerms, TrackPrediction, TrackState};
use crate::rng::{complex_gaussian, standard_normal, RngStreams, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    /// Number of completed frames.
    pub frame: usize,
    pub users: Vec<CommChannelState>,
    pub targets: Vec<Vector3<f64>>,
    pub tracks: Vec<TrackState>,
    rng: RngStreams,
}

/// Both branches of one user for the current frame.
#[derive(Debug, Clone)]
pub struct UserFrame {
    pub g_true: CVector,
    pub predicted: CommEstimate,
    pub estimated: CommEstimate,
}

/// Prediction and measurement draws of one target for the current frame.
#[derive(Debug, Clone)]
pub struct TargetFrame {
    pub x_true: Vector3<f64>,
    pub prediction: TrackPrediction,
    measurement_draws: Vector3<f64>,
}

/// Everything needed to score and then apply any decision for one frame.
/// Building it does not modify the world.
#[derive(Debug, Clone)]
pub struct FrameContext {
    pub frame: usize,
    pub users: Vec<UserFrame>,
    pub targets: Vec<TargetFrame>,
    rng_after: RngStreams,
}

impl World {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        let mut rng = RngStreams::new(seed);
        let l_t = scenario.system().tx_antennas;
        let users = scenario
            .users
            .iter()
            .map(|u| {
                let g_true = complex_gaussian(l_t, u.beta_bar, rng.get(Stream::ChannelEvolution));
                let err = complex_gaussian(
                    l_t,
                    u.initial_error_variance,
                    rng.get(Stream::EstimationNoise),
                );
                CommChannelState {
                    g_hat: &g_true + err,
                    g_true,
                    varsigma: u.initial_error_variance,
                }
            })
            .collect();
        let mut targets = Vec::new();
        let mut tracks = Vec::new();
        for t in &scenario.targets {
            let x0 = Vector3::from(t.initial_state);
            let m0 = t.initial_pcrb_matrix();
            let chol = m0.cholesky().ok_or_else(|| {
                IsacError::InvalidConfig("initial bound is not positive definite".into())
            })?;
            let z = Vector3::from_fn(|_, _| standard_normal(rng.get(Stream::MeasurementNoise)));
            let x_hat = x0 + chol.l() * z;
            if !(x_hat[1] > 0.0) {
                return Err(IsacError::DegenerateGeometry(x_hat[1]));
            }
            targets.push(x0);
            tracks.push(TrackState { x_hat, pcrb: m0 });
        }
        Ok(Self {
            frame: 0,
            users,
            targets,
            tracks,
            rng,
        })
    }

    pub fn master_seed(&self) -> u64 {
        self.rng.master_seed()
    }

    /// Advances the true states and draws this frame's noises. All draws
    /// happen regardless of the eventual decision so that policies sharing a
    /// seed see identical true trajectories.
    pub fn begin_frame(&self, scenario: &Scenario) -> Result<FrameContext> {
        let sys = scenario.system();
        let mut rng = self.rng.clone();
        let mut users = Vec::with_capacity(self.users.len());
        for (state, params) in self.users.iter().zip(&scenario.users) {
            let g_true = comm::evolve_true_channel(
                &state.g_true,
                params.rho,
                params.beta_bar,
                rng.get(Stream::ChannelEvolution),
            );
            let noise = complex_gaussian(g_true.len(), 1.0, rng.get(Stream::EstimationNoise));
            let predicted = comm::predict_csi(&state.estimate(), params);
            let estimated = comm::estimate_csi(&g_true, params, sys.training_length, &noise);
            users.push(UserFrame {
                g_true,
                predicted,
                estimated,
            });
        }
        let frame_duration = sys.frame_duration();
        let mut targets = Vec::with_capacity(self.targets.len());
        for ((x, track), params) in self.targets.iter().zip(&self.tracks).zip(&scenario.targets) {
            let x_true = radar::evolve_true_state(
                x,
                params,
                frame_duration,
                rng.get(Stream::StateEvolution),
            )?;
            let measurement_draws =
                Vector3::from_fn(|_, _| standard_normal(rng.get(Stream::MeasurementNoise)));
            let prediction = radar::predict_track(track, params, frame_duration)?;
            targets.push(TargetFrame {
                x_true,
                prediction,
                measurement_draws,
            });
        }
        Ok(FrameContext {
            frame: self.frame + 1,
            users,
            targets,
            rng_after: rng,
        })
    }

    /// Applies `decision` with precoder `w` and moves to the next frame.
    /// Either every state is updated or none is.
    pub fn commit(
        &mut self,
        scenario: &Scenario,
        ctx: FrameContext,
        decision: &DecisionPair,
        w: &CMatrix,
    ) -> Result<()> {
        let sys = scenario.system();
        decision.check_feasible(sys.training_length, sys.symbols_per_frame)?;
        let data_symbols =
            sys.symbols_per_frame - sys.training_symbols(decision.estimating_users());
        let mut tracks = Vec::with_capacity(ctx.targets.len());
        for (q, (tf, params)) in ctx.targets.iter().zip(&scenario.targets).enumerate() {
            if !decision.radar[q] {
                tracks.push(TrackState {
                    x_hat: tf.prediction.x_pred,
                    pcrb: tf.prediction.m_pred,
                });
                continue;
            }
            let x_pred = &tf.prediction.x_pred;
            let crb = radar::crb_coefficients(
                x_pred,
                params.velocity_angle,
                params.rcs,
                sys,
                data_symbols,
            )?;
            let gamma = radar::sensing_gain(w, x_pred[0]);
            if !(gamma > 0.0) {
                return Err(IsacError::NoIllumination {
                    target: q,
                    gain: gamma,
                });
            }
            let x_bar = if sys.true_angle_sensing {
                let x_true = &tf.x_true;
                let crb_true = radar::crb_coefficients(
                    x_true,
                    params.velocity_angle,
                    params.rcs,
                    sys,
                    data_symbols,
                )?;
                let gamma_true = radar::sensing_gain(w, x_true[0]);
                radar::measurement_from_draws(x_true, &crb_true, gamma_true, &tf.measurement_draws)
            } else {
                radar::measurement_from_draws(&tf.x_true, &crb, gamma, &tf.measurement_draws)
            }
            .map_err(|_| IsacError::NoIllumination {
                target: q,
                gain: gamma,
            })?;
            tracks.push(radar::correct_track(&tf.prediction, &x_bar, &crb, gamma)?);
        }
        let users = ctx
            .users
            .into_iter()
            .zip(&decision.comm)
            .map(|(uf, &est)| {
                let e = if est { uf.estimated } else { uf.predicted };
                CommChannelState {
                    g_true: uf.g_true,
                    g_hat: e.g_hat,
                    varsigma: e.varsigma,
                }
            })
            .collect();
        self.users = users;
        self.targets = ctx.targets.into_iter().map(|t| t.x_true).collect();
        self.tracks = tracks;
        self.rng = ctx.rng_after;
        self.frame = ctx.frame;
        Ok(())
    }

    /// Copies the estimates (not the true states) from `other`.
    pub fn sync_estimates_from(&mut self, other: &World) {
        for (mine, theirs) in self.users.iter_mut().zip(&other.users) {
            mine.g_hat = theirs.g_hat.clone();
            mine.varsigma = theirs.varsigma;
        }
        self.tracks = other.tracks.clone();
    }

    /// True when both worlds hold identical estimates.
    pub fn estimates_equal(&self, other: &World) -> bool {
        self.tracks == other.tracks
            && self
                .users
                .iter()
                .zip(&other.users)
                .all(|(a, b)| a.g_hat == b.g_hat && a.varsigma == b.varsigma)
    }
}

impl FrameContext {
    /// Scores `decision` by choosing its precoder.
    pub fn solve(
        &self,
        scenario: &Scenario,
        decision: &DecisionPair,
        mode: BeamformerMode,
        opts: &SolverOptions,
    ) -> Result<DecisionOutcome> {
        beamform(
            &self.candidate_state(scenario, decision)?,
            scenario,
            mode,
            opts,
        )
    }

    /// Estimates as they would be after applying `decision`, for scoring.
    pub fn candidate_state(
        &self,
        scenario: &Scenario,
        decision: &DecisionPair,
    ) -> Result<CandidateState> {
        let sys = scenario.system();
        decision.check_feasible(sys.training_length, sys.symbols_per_frame)?;
        let training_symbols = sys.training_symbols(decision.estimating_users());
        let data_symbols = sys.symbols_per_frame - training_symbols;
        let comm = self
            .users
            .iter()
            .zip(&decision.comm)
            .map(|(u, &est)| {
                if est {
                    u.estimated.clone()
                } else {
                    u.predicted.clone()
                }
            })
            .collect();
        let radar = self
            .targets
            .iter()
            .zip(&decision.radar)
            .zip(&scenario.targets)
            .map(|((t, &est), params)| {
                let pred = &t.prediction;
                let sensing_angle = if sys.true_angle_sensing {
                    t.x_true[0]
                } else {
                    pred.x_pred[0]
                };
                let terms = if est {
                    let crb = radar::crb_coefficients(
                        &pred.x_pred,
                        params.velocity_angle,
                        params.rcs,
                        sys,
                        data_symbols,
                    )?;
                    radar::eigen_error_terms(&pred.m_pred, &crb, &sys.omega)?
                } else {
                    ErrorTerms {
                        lambda: [0.0; 3],
                        psi: [0.0; 3],
                        psi_tilde: (0..3).map(|j| sys.omega[j] * pred.m_pred[(j, j)]).sum(),
                        c: Matrix3::zeros(),
                    }
                };
                Ok(RadarBranch {
                    estimate: est,
                    terms,
                    sensing_angle,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateState {
            comm,
            radar,
            training_symbols,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::mrt_beamformer;
    use crate::config::Preset;

    fn desk() -> Scenario {
        Scenario::from_preset(Preset::Desk).unwrap()
    }

    fn mrt_for(ctx: &FrameContext, s: &Scenario, d: &DecisionPair) -> CMatrix {
        let c = ctx.candidate_state(s, d).unwrap();
        let g: Vec<_> = c.comm.iter().map(|e| e.g_hat.clone()).collect();
        mrt_beamformer(&g, s.system().power).unwrap()
    }

    #[test]
    fn true_trajectories_ignore_decisions() {
        let s = desk();
        let mut a = World::new(&s, 5).unwrap();
        let mut b = World::new(&s, 5).unwrap();
        for n in 0..20 {
            let da = DecisionPair::all(3, 2, n % 2 == 0);
            let db = DecisionPair::all(3, 2, n % 3 == 0);
            let ca = a.begin_frame(&s).unwrap();
            let cb = b.begin_frame(&s).unwrap();
            let wa = mrt_for(&ca, &s, &da);
            let wb = mrt_for(&cb, &s, &db);
            a.commit(&s, ca, &da, &wa).unwrap();
            b.commit(&s, cb, &db, &wb).unwrap();
            assert_eq!(a.targets, b.targets);
            for (x, y) in a.users.iter().zip(&b.users) {
                assert_eq!(x.g_true, y.g_true);
            }
        }
    }

    #[test]
    fn begin_frame_is_pure() {
        let s = desk();
        let w = World::new(&s, 8).unwrap();
        let before = w.clone();
        let c1 = w.begin_frame(&s).unwrap();
        let c2 = w.begin_frame(&s).unwrap();
        assert_eq!(w, before);
        assert_eq!(c1.users[0].g_true, c2.users[0].g_true);
    }

    #[test]
    fn failed_commit_changes_nothing() {
        let s = desk();
        let mut w = World::new(&s, 9).unwrap();
        let before = w.clone();
        let ctx = w.begin_frame(&s).unwrap();
        let d = DecisionPair::new(vec![false; 3], vec![true, true]);
        let zero = CMatrix::zeros(8, 3);
        assert!(w.commit(&s, ctx, &d, &zero).is_err());
        assert_eq!(w, before);
    }

    #[test]
    fn committed_branches_match_candidate_state() {
        let s = desk();
        let mut w = World::new(&s, 10).unwrap();
        let ctx = w.begin_frame(&s).unwrap();
        let d = DecisionPair::new(vec![true, false, true], vec![true, false]);
        let c = ctx.candidate_state(&s, &d).unwrap();
        let bf = mrt_for(&ctx, &s, &d);
        let m_pred0 = ctx.targets[0].prediction.m_pred;
        let m_pred1 = ctx.targets[1].prediction.m_pred;
        w.commit(&s, ctx, &d, &bf).unwrap();
        for (u, e) in w.users.iter().zip(&c.comm) {
            assert_eq!(u.g_hat, e.g_hat);
            assert_eq!(u.varsigma, e.varsigma);
        }
        assert_eq!(w.tracks[1].pcrb, m_pred1);
        assert!(w.tracks[0].pcrb.trace() < m_pred0.trace());
        assert_eq!(w.frame, 1);
    }

    #[test]
    fn resync_copies_estimates_only() {
        let s = desk();
        let mut a = World::new(&s, 11).unwrap();
        let mut b = World::new(&s, 11).unwrap();
        let ctx = a.begin_frame(&s).unwrap();
        let d = DecisionPair::all(3, 2, true);
        let bf = mrt_for(&ctx, &s, &d);
        a.commit(&s, ctx, &d, &bf).unwrap();
        let ctx = b.begin_frame(&s).unwrap();
        let d0 = DecisionPair::all(3, 2, false);
        let bf = mrt_for(&ctx, &s, &d0);
        b.commit(&s, ctx, &d0, &bf).unwrap();
        assert!(!a.estimates_equal(&b));
        b.sync_estimates_from(&a);
        assert!(a.estimates_equal(&b));
        assert_eq!(a, b);
    }

    #[test]
    fn world_round_trips_through_json() {
        let s = desk();
        let mut w = World::new(&s, 12).unwrap();
        let ctx = w.begin_frame(&s).unwrap();
        let d = DecisionPair::all(3, 2, true);
        let bf = mrt_for(&ctx, &s, &d);
        w.commit(&s, ctx, &d, &bf).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        let back: World = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w);
        let c1 = w.begin_frame(&s).unwrap();
        let c2 = back.begin_frame(&s).unwrap();
        assert_eq!(c1.targets[0].x_true, c2.targets[0].x_true);
    }
}
