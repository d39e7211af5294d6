//! Online learning of the intermittent update policy: a network proposes a
//! relaxed decision, quantized candidates around it are scored by the
//! beamforming solver, and the best one is replayed as a training label.

pub mod actor;
pub mod critic;
pub mod features;
pub mod memory;
pub mod mlp;
pub mod quantize;

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use actor::{ActorParams, CandidateSet};
pub use critic::{critic_select, CriticChoice};
pub use features::{feature_dim, featurize, Normalizer};
pub use memory::{ReplayMemory, Sample};
pub use mlp::{AdamState, Mlp};
pub use quantize::order_preserving_quantize;

use crate::beamforming::{BeamformerMode, DecisionOutcome, SolverOptions};
use crate::config::Scenario;
use crate::decision::{bits_to_f64, popcount, DecisionPair};
use crate::error::{IsacError, Result};
use crate::linalg::CMatrix;
use crate::rng::{RngStreams, Stream};
use crate::world::World;

/// Which modulus turns a selected candidate index into a refinement vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModBasis {
    /// The block length.
    Dimension,
    /// The number of candidates realized in that frame.
    CandidateCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub refresh_interval_comm: usize,
    pub refresh_interval_radar: usize,
    /// Exploitation constant for the user block.
    pub exploration_comm: f64,
    /// Exploitation constant for the target block.
    pub exploration_radar: f64,
    pub refine_mod_basis: ModBasis,
    pub leaky_slope: f64,
}

impl LearnerConfig {
    pub fn paper() -> Self {
        Self {
            hidden_layers: vec![1024, 1024, 258, 64],
            learning_rate: 1e-3,
            batch_size: 100,
            memory_capacity: 500,
            refresh_interval_comm: 4,
            refresh_interval_radar: 4,
            exploration_comm: 1.9,
            exploration_radar: 1.0,
            refine_mod_basis: ModBasis::Dimension,
            leaky_slope: 0.3,
        }
    }

    pub fn desk() -> Self {
        Self {
            hidden_layers: vec![128, 64],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IsacError::InvalidConfig(format!("learner: {m}")));
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.memory_capacity == 0 {
            return bad("batch_size and memory_capacity must be positive");
        }
        if self.refresh_interval_comm == 0 || self.refresh_interval_radar == 0 {
            return bad("refresh intervals must be positive");
        }
        if !(self.exploration_comm >= 0.0 && self.exploration_radar >= 0.0) {
            return bad("exploration constants must be nonnegative");
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite");
        }
        Ok(())
    }
}

/// Per-frame options shared by every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptions {
    pub beamformer: BeamformerMode,
    pub solver: SolverOptions,
    /// Also score the union of the user candidates.
    pub practical: bool,
}

/// Everything the learner carries from frame to frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrolState {
    pub config: LearnerConfig,
    pub mlp: Mlp,
    pub adam: AdamState,
    pub memory: ReplayMemory,
    pub normalizer: Normalizer,
    pub actor_comm: ActorParams,
    pub actor_radar: ActorParams,
    /// Completed frames.
    pub frame: usize,
    rng: RngStreams,
}

/// What one learner frame decided and achieved.
#[derive(Debug, Clone, PartialEq)]
pub struct DrolFrame {
    pub decision: DecisionPair,
    pub w: CMatrix,
    pub genie: DecisionOutcome,
    pub practical_comm: Vec<bool>,
    pub practical: Option<DecisionOutcome>,
    pub count_comm: usize,
    pub count_radar: usize,
    /// 1-based selected candidate indices.
    pub index_comm: usize,
    pub index_radar: usize,
    /// Training loss, NaN while the memory warms up.
    pub loss: f64,
    /// Largest power-budget excess over every solve this frame.
    pub max_power_excess: f64,
    pub relaxed: Vec<f64>,
}

impl DrolState {
    pub fn new(scenario: &Scenario, config: LearnerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (k, q) = (scenario.num_users(), scenario.num_targets());
        let dim = feature_dim(k, scenario.system().tx_antennas, q);
        let mut sizes = vec![dim];
        sizes.extend(&config.hidden_layers);
        sizes.push(k + q);
        let mut rng = RngStreams::new(seed);
        let mlp = Mlp::new(&sizes, config.leaky_slope, rng.get(Stream::DnnInit))?;
        let adam = AdamState::new(&mlp, config.learning_rate);
        Ok(Self {
            adam,
            mlp,
            memory: ReplayMemory::new(config.memory_capacity),
            normalizer: Normalizer::new(dim),
            actor_comm: ActorParams::new(k, config.exploration_comm, config.refresh_interval_comm),
            actor_radar: ActorParams::new(
                q,
                config.exploration_radar,
                config.refresh_interval_radar,
            ),
            frame: 0,
            rng,
            config,
        })
    }

    /// One replay step; returns NaN while the memory is below warmup.
    pub fn train_step(&mut self) -> Result<f64> {
        train_on(
            &mut self.mlp,
            &mut self.adam,
            &self.memory,
            self.config.batch_size,
            &mut self.rng,
        )
    }

    /// Runs one frame: propose, explore, score, commit, learn. On error
    /// neither the world nor the learner changes.
    pub fn run_frame(
        &mut self,
        world: &mut World,
        scenario: &Scenario,
        opts: &FrameOptions,
    ) -> Result<DrolFrame> {
        let k = scenario.num_users();
        let mut rng = self.rng.clone();
        let mut normalizer = self.normalizer.clone();
        let raw = featurize(&world.users, &world.tracks)?;
        let features = normalizer.observe_and_apply(&raw)?;
        let relaxed = self.mlp.forward(&features)?;
        let (rel_c, rel_r) = relaxed.as_slice().split_at(k);
        let cand_c = self
            .actor_comm
            .generate(rel_c, rng.get(Stream::ExplorationNoise))?;
        let cand_r = self
            .actor_radar
            .generate(rel_r, rng.get(Stream::ExplorationNoise))?;

        let ctx = world.begin_frame(scenario)?;
        let choice = critic_select(
            &ctx,
            scenario,
            &cand_c.candidates,
            &cand_r.candidates,
            opts.beamformer,
            &opts.solver,
        )?;
        let practical_comm = practical_decision(
            &cand_c.candidates,
            rel_c,
            scenario.system().max_reestimations(),
        );
        let practical = if !opts.practical {
            None
        } else if practical_comm == choice.decision.comm {
            Some(choice.outcome.clone())
        } else {
            let d = DecisionPair::new(practical_comm.clone(), choice.decision.radar.clone());
            match ctx.solve(scenario, &d, opts.beamformer, &opts.solver) {
                Ok(o) => Some(o),
                Err(e) => {
                    log::warn!("frame {}: practical decision not solvable: {e}", ctx.frame);
                    None
                }
            }
        };
        world.commit(scenario, ctx, &choice.decision, &choice.outcome.w)?;
        let max_power_excess = practical.as_ref().map_or(choice.max_power_excess, |p| {
            p.max_power_excess.max(choice.max_power_excess)
        });

        let n = self.frame + 1;
        let basis = self.config.refine_mod_basis;
        self.actor_comm
            .record_and_refine(n, choice.comm_index + 1, cand_c.count(), basis);
        self.actor_radar
            .record_and_refine(n, choice.radar_index + 1, cand_r.count(), basis);
        let mut target = bits_to_f64(&choice.decision.comm);
        target.extend(bits_to_f64(&choice.decision.radar));
        self.memory.push(Sample {
            features,
            target: DVector::from_vec(target),
        });
        self.normalizer = normalizer;
        self.rng = rng;
        let loss = self.train_step()?;
        self.frame = n;
        Ok(DrolFrame {
            w: choice.outcome.w.clone(),
            decision: choice.decision,
            genie: choice.outcome,
            practical_comm,
            practical,
            count_comm: cand_c.count(),
            count_radar: cand_r.count(),
            index_comm: choice.comm_index + 1,
            index_radar: choice.radar_index + 1,
            loss,
            max_power_excess,
            relaxed: relaxed.iter().copied().collect(),
        })
    }
}

fn train_on(
    mlp: &mut Mlp,
    adam: &mut AdamState,
    memory: &ReplayMemory,
    batch: usize,
    rng: &mut RngStreams,
) -> Result<f64> {
    if memory.len() < memory.warmup_threshold() {
        return Ok(f64::NAN);
    }
    let idx = memory.sample_indices(batch, rng.get(Stream::ReplaySampling));
    let samples: Vec<&Sample> = idx
        .iter()
        .map(|&i| memory.get(i).expect("index in range"))
        .collect();
    let xs: Vec<&DVector<f64>> = samples.iter().map(|s| &s.features).collect();
    let ts: Vec<&DVector<f64>> = samples.iter().map(|s| &s.target).collect();
    let (loss, grads) = mlp.bce_loss_and_grad(&xs, &ts)?;
    adam.step(mlp, &grads)?;
    Ok(loss)
}

/// Union of the user candidates. If it exceeds the pilot budget the users
/// with the largest relaxed scores are kept.
pub fn practical_decision(
    candidates: &[Vec<bool>],
    relaxed: &[f64],
    max_reestimations: usize,
) -> Vec<bool> {
    let k = candidates.first().map_or(0, Vec::len);
    let mut out: Vec<bool> = (0..k).map(|i| candidates.iter().any(|c| c[i])).collect();
    if popcount(&out) > max_reestimations {
        let mut set: Vec<usize> = (0..k).filter(|&i| out[i]).collect();
        set.sort_by(|&a, &b| relaxed[b].total_cmp(&relaxed[a]).then(a.cmp(&b)));
        for &i in &set[max_reestimations..] {
            out[i] = false;
        }
    }
    out
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A resumable snapshot of a learner run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub world: World,
    pub learner: DrolState,
}

impl Checkpoint {
    pub fn new(world: &World, learner: &DrolState) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            world: world.clone(),
            learner: learner.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let c: Self = serde_json::from_reader(file)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(IsacError::Parse(format!(
                "checkpoint version {}",
                c.version
            )));
        }
        Ok(c)
    }
}
