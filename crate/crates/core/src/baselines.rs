//! Reference decision policies: exhaustive search, fair coin flips and
//! always re-estimating.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamformerMode, DecisionOutcome, SolverOptions};
use crate::config::Scenario;
use crate::decision::DecisionPair;
use crate::drol::{critic_select, CriticChoice};
use crate::error::{IsacError, Result};
use crate::rng::{RngStreams, Stream};
use crate::world::{FrameContext, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Drol,
    Exhaustive,
    Random,
    /// Re-estimate every user and target every frame.
    All,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Drol => "drol",
            Self::Exhaustive => "exhaustive",
            Self::Random => "random",
            Self::All => "all",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drol" => Ok(Self::Drol),
            "exhaustive" => Ok(Self::Exhaustive),
            "random" => Ok(Self::Random),
            "all" | "all-update" => Ok(Self::All),
            other => Err(IsacError::InvalidArgument(format!(
                "unknown policy '{other}'"
            ))),
        }
    }
}

/// Every bit vector of length `n`, first entry least significant.
pub fn all_bit_vectors(n: usize) -> Vec<Vec<bool>> {
    assert!(n < 31, "enumeration over {n} bits");
    (0u32..1 << n)
        .map(|code| (0..n).map(|i| code >> i & 1 == 1).collect())
        .collect()
}

/// Best feasible decision pair found by solving every one of them.
/// Ties go to the smallest user code, then the smallest target code.
pub fn exhaustive_decision(
    ctx: &FrameContext,
    scenario: &Scenario,
    mode: BeamformerMode,
    opts: &SolverOptions,
) -> Result<CriticChoice> {
    let comm = all_bit_vectors(scenario.num_users());
    let radar = all_bit_vectors(scenario.num_targets());
    critic_select(ctx, scenario, &comm, &radar, mode, opts)
}

/// Fair bits, redrawn until the pilots fit in the frame.
pub fn random_decision<R: Rng + ?Sized>(
    users: usize,
    targets: usize,
    max_reestimations: usize,
    rng: &mut R,
) -> DecisionPair {
    loop {
        let d = DecisionPair::new(
            (0..users).map(|_| rng.random_bool(0.5)).collect(),
            (0..targets).map(|_| rng.random_bool(0.5)).collect(),
        );
        if d.is_feasible(max_reestimations) {
            return d;
        }
    }
}

pub fn all_update_decision(
    users: usize,
    targets: usize,
    training_length: usize,
    symbols_per_frame: usize,
) -> Result<DecisionPair> {
    let d = DecisionPair::all(users, targets, true);
    d.check_feasible(training_length, symbols_per_frame)?;
    Ok(d)
}

/// Outcome of one baseline frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFrame {
    pub decision: DecisionPair,
    pub outcome: DecisionOutcome,
    /// 1-based index of the decision among those scored.
    pub index_comm: usize,
    pub index_radar: usize,
    pub count_comm: usize,
    pub count_radar: usize,
    /// Largest power-budget excess over every solve this frame.
    pub max_power_excess: f64,
}

/// A non-learning policy with its own random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub policy: Policy,
    rng: RngStreams,
}

impl BaselineState {
    pub fn new(policy: Policy, seed: u64) -> Result<Self> {
        if policy == Policy::Drol {
            return Err(IsacError::InvalidArgument("drol is not a baseline".into()));
        }
        Ok(Self {
            policy,
            rng: RngStreams::new(seed),
        })
    }

    pub fn decide(
        &mut self,
        ctx: &FrameContext,
        scenario: &Scenario,
        mode: BeamformerMode,
        opts: &SolverOptions,
    ) -> Result<BaselineFrame> {
        let sys = scenario.system();
        let (k, q) = (scenario.num_users(), scenario.num_targets());
        let decision = match self.policy {
            Policy::Exhaustive => {
                let c = exhaustive_decision(ctx, scenario, mode, opts)?;
                return Ok(BaselineFrame {
                    decision: c.decision,
                    outcome: c.outcome,
                    index_comm: c.comm_index + 1,
                    index_radar: c.radar_index + 1,
                    count_comm: 1 << k,
                    count_radar: 1 << q,
                    max_power_excess: c.max_power_excess,
                });
            }
            Policy::Random => random_decision(
                k,
                q,
                sys.max_reestimations(),
                self.rng.get(Stream::RandomBaseline),
            ),
            Policy::All => all_update_decision(k, q, sys.training_length, sys.symbols_per_frame)?,
            Policy::Drol => unreachable!("rejected at construction"),
        };
        let outcome = ctx.solve(scenario, &decision, mode, opts)?;
        Ok(BaselineFrame {
            decision,
            max_power_excess: outcome.max_power_excess,
            outcome,
            index_comm: 1,
            index_radar: 1,
            count_comm: 1,
            count_radar: 1,
        })
    }

    /// Decides, beamforms and commits one frame. On error neither the world
    /// nor the policy changes.
    pub fn run_frame(
        &mut self,
        world: &mut World,
        scenario: &Scenario,
        mode: BeamformerMode,
        opts: &SolverOptions,
    ) -> Result<BaselineFrame> {
        let saved = self.rng.clone();
        let ctx = world.begin_frame(scenario)?;
        let result = self.decide(&ctx, scenario, mode, opts).and_then(|f| {
            world
                .commit(scenario, ctx, &f.decision, &f.outcome.w)
                .map(|_| f)
        });
        if result.is_err() {
            self.rng = saved;
        }
        result
    }
}
