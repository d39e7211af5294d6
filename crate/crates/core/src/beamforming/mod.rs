//! Per-decision transmit beamforming.
//!
//! For a fixed decision pair the utility is maximised over the precoder by an
//! alternating fractional-programming / successive-convex-approximation
//! scheme (see [`solve_p2`]). [`mrt_beamformer`] is the matched-filter
//! baseline.

mod fp;

pub use fp::{
    a_term, b_term, comm_surrogate, gradient, inner_objective, linear_terms, mu_residual, mu_root,
    p5_objective, quadratic_form, sca_lower_bound, sensing_penalty, solve_p2, solve_p2_traced,
    update_alpha, update_beta, update_eta, update_mu, update_w, update_w_lagrangian,
    update_w_proxlinear, FpState, P2Solution, TracePoint,
};

use serde::{Deserialize, Serialize};

use crate::comm::{effective_rate, CommEstimate};
use crate::config::Scenario;
use crate::error::{IsacError, Result};
use crate::linalg::{inner, CMatrix, CVector, C64};
use crate::radar::{self, radar_performance, sensing_gain, ErrorTerms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WUpdateMode {
    LagrangianInverse,
    ProxLinear,
}

/// How the precoder is chosen once a decision is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamformerMode {
    /// The alternating FP/SCA solver.
    FpSca,
    /// Matched filter on the channel estimates.
    Mrt,
}

impl BeamformerMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::FpSca => "fp-sca",
            Self::Mrt => "mrt",
        }
    }
}

/// Precoder and utility achieved for one decision pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionOutcome {
    pub w: CMatrix,
    pub utility: UtilityBreakdown,
    pub iterations: usize,
    pub max_power_excess: f64,
    /// Per-iteration trace, empty unless requested.
    pub trace: Vec<TracePoint>,
}

/// Chooses the precoder for `state` in the given mode.
pub fn beamform(
    state: &CandidateState,
    scenario: &Scenario,
    mode: BeamformerMode,
    opts: &SolverOptions,
) -> Result<DecisionOutcome> {
    match mode {
        BeamformerMode::FpSca => {
            let p = P2Problem::new(state, scenario)?;
            let sol = if opts.record_trace {
                solve_p2_traced(&p, opts)?
            } else {
                solve_p2(&p, opts)?
            };
            Ok(DecisionOutcome {
                w: sol.w,
                utility: sol.utility,
                iterations: sol.iterations,
                max_power_excess: sol.max_power_excess,
                trace: sol.trace,
            })
        }
        BeamformerMode::Mrt => {
            let g: Vec<CVector> = state.comm.iter().map(|e| e.g_hat.clone()).collect();
            let w = mrt_beamformer(&g, scenario.system().power)?;
            let utility = evaluate_utility(state, &w, scenario)?;
            let max_power_excess = crate::linalg::frobenius_power(&w) - scenario.system().power;
            Ok(DecisionOutcome {
                w,
                utility,
                iterations: 0,
                max_power_excess,
                trace: Vec::new(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    /// Relative change of the outer objective that counts as converged.
    pub tolerance: f64,
    pub w_update: WUpdateMode,
    /// Absolute residual targeted by the `μ` root search.
    pub mu_tolerance: f64,
    /// Relative power residual targeted by the multiplier search.
    pub lambda_tolerance: f64,
    /// Initial dual price of every sensing constraint.
    pub initial_dual: f64,
    /// Record the objective and power after every outer iteration.
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            tolerance: 1e-5,
            w_update: WUpdateMode::LagrangianInverse,
            mu_tolerance: 1e-10,
            lambda_tolerance: 1e-10,
            initial_dual: 0.01,
            record_trace: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(IsacError::InvalidConfig(
                "max_outer_iters must be positive".into(),
            ));
        }
        for (name, v) in [
            ("tolerance", self.tolerance),
            ("mu_tolerance", self.mu_tolerance),
            ("lambda_tolerance", self.lambda_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IsacError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.initial_dual >= 0.0) {
            return Err(IsacError::InvalidConfig(
                "initial_dual must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Radar branch of one target under a candidate decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarBranch {
    pub estimate: bool,
    pub terms: ErrorTerms,
    /// Angle at which the sensing gain is evaluated.
    pub sensing_angle: f64,
}

/// All estimates as they would be after applying a candidate decision,
/// which is what the utility of that decision is evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateState {
    pub comm: Vec<CommEstimate>,
    pub radar: Vec<RadarBranch>,
    pub training_symbols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityBreakdown {
    /// `Σ_k w_k C_k`.
    pub comm: f64,
    /// `Σ_q w_q R_q`.
    pub radar: f64,
}

impl UtilityBreakdown {
    pub fn total(&self) -> f64 {
        self.comm - self.radar
    }
}

/// Straight-line evaluation of the system utility for precoder `w`.
pub fn evaluate_utility(
    state: &CandidateState,
    w: &CMatrix,
    scenario: &Scenario,
) -> Result<UtilityBreakdown> {
    let sys = scenario.system();
    let comm = state
        .comm
        .iter()
        .zip(&scenario.users)
        .enumerate()
        .map(|(k, (est, user))| {
            user.weight
                * effective_rate(
                    &est.g_hat,
                    est.varsigma,
                    w,
                    k,
                    sys.symbols_per_frame,
                    state.training_symbols,
                    user.noise_power,
                    sys.power,
                )
        })
        .sum();
    let mut radar = 0.0;
    for (q, (branch, target)) in state.radar.iter().zip(&scenario.targets).enumerate() {
        let gamma = sensing_gain(w, branch.sensing_angle);
        let r =
            radar_performance(branch.estimate, &branch.terms, gamma, sys).map_err(|e| match e {
                IsacError::NoIllumination { gain, .. } => {
                    IsacError::NoIllumination { target: q, gain }
                }
                other => other,
            })?;
        radar += target.weight * r;
    }
    Ok(UtilityBreakdown { comm, radar })
}

/// `w_k = √(P/K) ĝ_k / ‖ĝ_k‖`.
pub fn mrt_beamformer(channels: &[CVector], power: f64) -> Result<CMatrix> {
    let k = channels.len();
    if k == 0 {
        return Err(IsacError::InvalidArgument("no users".into()));
    }
    let scale = (power / k as f64).sqrt();
    let cols = channels
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let n = g.norm();
            if !(n > 0.0) {
                return Err(IsacError::ZeroChannel(i));
            }
            Ok(g * C64::from(scale / n))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CMatrix::from_columns(&cols))
}

/// One sensed target inside a beamforming problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedTarget {
    pub weight: f64,
    pub steering: CVector,
    pub terms: ErrorTerms,
}

/// The beamforming problem for one decision pair, with every
/// precoder-independent quantity precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct P2Problem {
    pub channels: Vec<CVector>,
    /// Effective noise `ς_k P + σ_k` per user.
    pub noise: Vec<f64>,
    /// Rate weights including the data-time fraction.
    pub rate_weights: Vec<f64>,
    /// Targets re-estimated under this decision.
    pub sensed: Vec<SensedTarget>,
    /// Precoder-independent part of `Σ_q w_q R_q`.
    pub radar_constant: f64,
    pub power: f64,
    pub omega_bar: f64,
    pub xi_b: f64,
    pub delta_s: f64,
    /// Upper bound on the sensing auxiliaries.
    pub mu_cap: f64,
}

impl P2Problem {
    pub fn new(state: &CandidateState, scenario: &Scenario) -> Result<Self> {
        let sys = scenario.system();
        if state.comm.len() != scenario.num_users() {
            return Err(IsacError::DimensionMismatch {
                expected: scenario.num_users(),
                got: state.comm.len(),
            });
        }
        if state.radar.len() != scenario.num_targets() {
            return Err(IsacError::DimensionMismatch {
                expected: scenario.num_targets(),
                got: state.radar.len(),
            });
        }
        if state.training_symbols > sys.symbols_per_frame {
            return Err(IsacError::StageOneInfeasible {
                users: state.training_symbols / sys.training_length,
                needed: state.training_symbols,
                available: sys.symbols_per_frame,
            });
        }
        let data_fraction =
            (sys.symbols_per_frame - state.training_symbols) as f64 / sys.symbols_per_frame as f64;
        let sic_reference = sys.xi_c * sys.power + sys.radar_noise();
        let mut sensed = Vec::new();
        let mut radar_constant = 0.0;
        for (branch, target) in state.radar.iter().zip(&scenario.targets) {
            if branch.estimate {
                radar_constant += target.weight
                    * (1.0 - sys.omega_bar)
                    * (sys.xi_a + sys.xi_b * sic_reference.log10());
                sensed.push(SensedTarget {
                    weight: target.weight,
                    steering: radar::steering_vector(branch.sensing_angle, sys.tx_antennas),
                    terms: branch.terms.clone(),
                });
            } else {
                radar_constant += target.weight * sys.omega_bar * branch.terms.psi_tilde;
            }
        }
        Ok(Self {
            channels: state.comm.iter().map(|e| e.g_hat.clone()).collect(),
            noise: state
                .comm
                .iter()
                .zip(&scenario.users)
                .map(|(e, u)| e.varsigma * sys.power + u.noise_power)
                .collect(),
            rate_weights: scenario
                .users
                .iter()
                .map(|u| u.weight * data_fraction)
                .collect(),
            sensed,
            radar_constant,
            power: sys.power,
            omega_bar: sys.omega_bar,
            xi_b: sys.xi_b,
            delta_s: sys.delta_s,
            mu_cap: 10.0 * sic_reference,
        })
    }

    pub fn num_users(&self) -> usize {
        self.channels.len()
    }

    pub fn antennas(&self) -> usize {
        self.channels[0].len()
    }

    pub fn sinr(&self, w: &CMatrix, k: usize) -> f64 {
        let g = &self.channels[k];
        let mut signal = 0.0;
        let mut total = 0.0;
        for (i, col) in w.column_iter().enumerate() {
            let p = inner(g, &col.into_owned()).norm_sqr();
            total += p;
            if i == k {
                signal = p;
            }
        }
        signal / (total - signal + self.noise[k])
    }

    /// `Σ_k w_k C_k(W)`.
    pub fn comm_utility(&self, w: &CMatrix) -> f64 {
        (0..self.num_users())
            .map(|k| self.rate_weights[k] * self.sinr(w, k).ln_1p())
            .sum()
    }

    pub fn sensing_gains(&self, w: &CMatrix) -> Vec<f64> {
        self.sensed
            .iter()
            .map(|t| {
                (t.steering.adjoint() * w)
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum()
            })
            .collect()
    }

    /// Precoder-dependent radar penalty of target `i` at gain (or auxiliary) `g`.
    pub fn sensing_term(&self, i: usize, g: f64) -> f64 {
        sensing_penalty(&self.sensed[i], g, self.omega_bar, self.xi_b)
    }

    /// Utility split for precoder `w`; fails if a sensed target is not illuminated.
    pub fn utility(&self, w: &CMatrix) -> Result<UtilityBreakdown> {
        let mut radar = self.radar_constant;
        for (i, g) in self.sensing_gains(w).into_iter().enumerate() {
            if !(g > 0.0) {
                return Err(IsacError::NoIllumination { target: i, gain: g });
            }
            radar += self.sensing_term(i, g);
        }
        Ok(UtilityBreakdown {
            comm: self.comm_utility(w),
            radar,
        })
    }
}

#[cfg(test)]
mod tests;
