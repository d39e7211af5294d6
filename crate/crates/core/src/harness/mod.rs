//! Experiment orchestration: several policies over the same true
//! trajectories, periodic resynchronization of their estimates, and CSV
//! output.

pub mod analysis;
pub mod record;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use analysis::{estimation_frequency, moving_average, relative_utility_ratio};
pub use record::{
    fmt_g9, read_records, write_records, FrameRecord, RecordWriter, CSV_SCHEMA_VERSION,
};

use crate::baselines::{BaselineState, Policy};
use crate::beamforming::{BeamformerMode, TracePoint};
use crate::config::{Scenario, ScenarioConfig};
use crate::decision::popcount;
use crate::drol::{DrolState, FrameOptions};
use crate::error::{IsacError, Result};
use crate::world::World;

/// Environment variable that sets the output directory when no explicit
/// directory is given.
pub const OUTPUT_DIR_ENV: &str = "ISAC_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "output";
/// Written to the output directory when a run aborts.
pub const PARTIAL_MARKER: &str = "PARTIAL";

/// Explicit directory, else the environment variable, else the default.
pub fn resolve_output_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// A decision policy paired with a beamformer, named e.g. `random-mrt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySpec {
    pub policy: Policy,
    pub beamformer: BeamformerMode,
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self.beamformer {
            BeamformerMode::FpSca => self.policy.name().to_string(),
            BeamformerMode::Mrt => format!("{}-mrt", self.policy.name()),
        }
    }

    /// Comma-separated list of policy names.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let specs: Vec<Self> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if specs.is_empty() {
            return Err(IsacError::InvalidArgument("no policies given".into()));
        }
        let mut names: Vec<String> = specs.iter().map(Self::name).collect();
        names.sort();
        names.dedup();
        if names.len() != specs.len() {
            return Err(IsacError::InvalidArgument("duplicate policy".into()));
        }
        Ok(specs)
    }
}

impl FromStr for PolicySpec {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        let (base, beamformer) = match s.strip_suffix("-mrt") {
            Some(base) => (base, BeamformerMode::Mrt),
            None => (s, BeamformerMode::FpSca),
        };
        Ok(Self {
            policy: base.parse()?,
            beamformer,
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub code_version: String,
    pub csv_schema: u32,
    pub preset: String,
    pub seed: u64,
    pub frames: usize,
    pub policies: Vec<PolicySpec>,
    pub practical: bool,
    pub solver_trace: bool,
    pub config: ScenarioConfig,
}

impl RunManifest {
    pub fn new(config: ScenarioConfig, seed: u64, policies: Vec<PolicySpec>) -> Self {
        Self {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            csv_schema: CSV_SCHEMA_VERSION,
            preset: config.preset.clone(),
            seed,
            frames: config.system.frames,
            policies,
            practical: config.experiment.practical_utility,
            solver_trace: false,
            config,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

enum Runner {
    Drol(Box<DrolState>),
    Baseline(BaselineState),
}

/// One policy's world and decision maker.
pub struct PolicyRun {
    pub spec: PolicySpec,
    pub world: World,
    runner: Runner,
}

impl PolicyRun {
    pub fn new(spec: PolicySpec, scenario: &Scenario, seed: u64) -> Result<Self> {
        let runner = match spec.policy {
            Policy::Drol => Runner::Drol(Box::new(DrolState::new(
                scenario,
                scenario.config.learner.clone(),
                seed,
            )?)),
            p => Runner::Baseline(BaselineState::new(p, seed)?),
        };
        Ok(Self {
            spec,
            world: World::new(scenario, seed)?,
            runner,
        })
    }

    /// Runs one frame and summarizes it.
    pub fn step(
        &mut self,
        scenario: &Scenario,
        opts: &FrameOptions,
    ) -> Result<(FrameRecord, Vec<TracePoint>)> {
        let started = Instant::now();
        let d = scenario.system().training_length;
        let opts = FrameOptions {
            beamformer: self.spec.beamformer,
            ..opts.clone()
        };
        let (record, trace) = match &mut self.runner {
            Runner::Drol(l) => {
                let f = l.run_frame(&mut self.world, scenario, &opts)?;
                let practical = f.practical.as_ref().map_or(f64::NAN, |p| p.utility.total());
                let rec = FrameRecord {
                    frame: self.world.frame,
                    u_genie: f.genie.utility.total(),
                    u_practical: practical,
                    comm_utility: f.genie.utility.comm,
                    radar_cost: f.genie.utility.radar,
                    m1: d * f.decision.estimating_users(),
                    m1_practical: d * popcount(&f.practical_comm),
                    comm_bits: f.decision.comm,
                    radar_bits: f.decision.radar,
                    count_comm: f.count_comm,
                    count_radar: f.count_radar,
                    index_comm: f.index_comm,
                    index_radar: f.index_radar,
                    loss: f.loss,
                    iterations: f.genie.iterations,
                    power_excess: f.max_power_excess,
                    wall_seconds: 0.0,
                };
                (rec, f.genie.trace)
            }
            Runner::Baseline(b) => {
                let f = b.run_frame(&mut self.world, scenario, opts.beamformer, &opts.solver)?;
                let m1 = d * f.decision.estimating_users();
                let u = f.outcome.utility;
                let rec = FrameRecord {
                    frame: self.world.frame,
                    u_genie: u.total(),
                    u_practical: u.total(),
                    comm_utility: u.comm,
                    radar_cost: u.radar,
                    comm_bits: f.decision.comm,
                    radar_bits: f.decision.radar,
                    count_comm: f.count_comm,
                    count_radar: f.count_radar,
                    index_comm: f.index_comm,
                    index_radar: f.index_radar,
                    loss: f64::NAN,
                    m1,
                    m1_practical: m1,
                    iterations: f.outcome.iterations,
                    power_excess: f.max_power_excess,
                    wall_seconds: 0.0,
                };
                (rec, f.outcome.trace)
            }
        };
        Ok((
            FrameRecord {
                wall_seconds: started.elapsed().as_secs_f64(),
                ..record
            },
            trace,
        ))
    }
}

/// Files of one policy.
struct Sink {
    records: RecordWriter<BufWriter<File>>,
    timing: BufWriter<File>,
    trace: Option<BufWriter<File>>,
}

impl Sink {
    fn create(dir: &Path, name: &str, scenario: &Scenario, trace: bool) -> Result<Self> {
        let records = RecordWriter::new(
            BufWriter::new(File::create(dir.join(format!("{name}.csv")))?),
            scenario.num_users(),
            scenario.num_targets(),
        )?;
        let mut timing = BufWriter::new(File::create(dir.join(format!("{name}.timing.csv")))?);
        writeln!(timing, "frame,wall_seconds")?;
        let trace = if trace {
            let mut t = BufWriter::new(File::create(dir.join(format!("{name}.trace.csv")))?);
            writeln!(t, "frame,iter,objective,power")?;
            Some(t)
        } else {
            None
        };
        Ok(Self {
            records,
            timing,
            trace,
        })
    }

    fn write(&mut self, r: &FrameRecord, trace: &[TracePoint]) -> Result<()> {
        self.records.write(r)?;
        writeln!(self.timing, "{},{}", r.frame, fmt_g9(r.wall_seconds))?;
        if let Some(t) = &mut self.trace {
            for p in trace {
                writeln!(
                    t,
                    "{},{},{},{}",
                    r.frame,
                    p.iter,
                    fmt_g9(p.objective),
                    fmt_g9(p.power)
                )?;
            }
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.records.flush()?;
        self.timing.flush()?;
        if let Some(t) = &mut self.trace {
            t.flush()?;
        }
        Ok(())
    }
}

/// Records of every policy, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub runs: Vec<(String, Vec<FrameRecord>)>,
}

impl ExperimentResult {
    pub fn records(&self, name: &str) -> Option<&[FrameRecord]> {
        self.runs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.as_slice())
    }
}

struct Lane {
    run: PolicyRun,
    sink: Option<Sink>,
    records: Vec<FrameRecord>,
}

impl Lane {
    fn advance(&mut self, scenario: &Scenario, opts: &FrameOptions, until: usize) -> Result<()> {
        while self.run.world.frame < until {
            let (rec, trace) = self.run.step(scenario, opts).map_err(|e| {
                IsacError::InvalidArgument(format!(
                    "{} failed at frame {}: {e}",
                    self.run.spec.name(),
                    self.run.world.frame + 1
                ))
            })?;
            if let Some(s) = &mut self.sink {
                s.write(&rec, &trace)?;
            }
            self.records.push(rec);
        }
        if let Some(s) = &mut self.sink {
            s.flush()?;
        }
        Ok(())
    }
}

fn advance_all(
    lanes: &mut [Lane],
    scenario: &Scenario,
    opts: &FrameOptions,
    until: usize,
) -> Result<()> {
    #[cfg(feature = "parallel")]
    let results: Vec<Result<()>> = {
        use rayon::prelude::*;
        lanes
            .par_iter_mut()
            .map(|l| l.advance(scenario, opts, until))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<()>> = lanes
        .iter_mut()
        .map(|l| l.advance(scenario, opts, until))
        .collect();
    results.into_iter().collect()
}

/// Runs every policy of `manifest` for `manifest.frames` frames. Policies
/// advance independently between resync barriers; at each barrier every
/// run adopts the estimates of the first learner run. With an output
/// directory, writes one CSV per policy plus the manifest.
pub fn run_experiment(manifest: &RunManifest, output: Option<&Path>) -> Result<ExperimentResult> {
    if let Some(dir) = output {
        fs::create_dir_all(dir)?;
        let marker = dir.join(PARTIAL_MARKER);
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
    }
    let result = run_inner(manifest, output);
    if let (Err(e), Some(dir)) = (&result, output) {
        let _ = fs::write(dir.join(PARTIAL_MARKER), format!("{e}\n"));
    }
    result
}

fn run_inner(manifest: &RunManifest, output: Option<&Path>) -> Result<ExperimentResult> {
    if let Some(dir) = output {
        manifest.save(&dir.join("manifest.json"))?;
        fs::write(dir.join("scenario.toml"), manifest.config.to_toml_string()?)?;
    }
    let scenario = manifest.config.clone().build()?;
    if manifest.policies.is_empty() {
        return Err(IsacError::InvalidArgument("no policies given".into()));
    }
    let mut solver = manifest.config.solver.clone();
    solver.record_trace = manifest.solver_trace;
    let opts = FrameOptions {
        beamformer: BeamformerMode::FpSca,
        solver,
        practical: manifest.practical,
    };
    let mut lanes = manifest
        .policies
        .iter()
        .map(|&spec| {
            let sink = output
                .map(|dir| Sink::create(dir, &spec.name(), &scenario, manifest.solver_trace))
                .transpose()?;
            Ok(Lane {
                run: PolicyRun::new(spec, &scenario, manifest.seed)?,
                sink,
                records: Vec::with_capacity(manifest.frames),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let source = lanes.iter().position(|l| l.run.spec.policy == Policy::Drol);
    let interval = manifest.config.experiment.resync_interval;
    let step = if interval == 0 {
        manifest.frames
    } else {
        interval
    };
    let mut done = 0;
    while done < manifest.frames {
        let until = (done + step.max(1)).min(manifest.frames);
        advance_all(&mut lanes, &scenario, &opts, until)?;
        if interval > 0 && until < manifest.frames {
            if let Some(s) = source {
                let reference = lanes[s].run.world.clone();
                for (i, l) in lanes.iter_mut().enumerate() {
                    if i != s {
                        l.run.world.sync_estimates_from(&reference);
                    }
                }
            }
        }
        done = until;
    }
    Ok(ExperimentResult {
        runs: lanes
            .into_iter()
            .map(|l| (l.run.spec.name(), l.records))
            .collect(),
    })
}
