//! System constants, scenario presets and config-file loading.
//!
//! A [`ScenarioConfig`] is the user-facing description (distances, noise
//! levels, weights). [`ScenarioConfig::build`] turns it into a [`Scenario`]
//! holding the derived per-user and per-target parameters used by the
//! simulation.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::beamforming::SolverOptions;
use crate::drol::LearnerConfig;
use crate::error::{IsacError, Result};
use crate::radar;

pub fn db_to_linear(x_db: f64) -> f64 {
    10f64.powf(x_db / 10.0)
}

pub fn dbm_to_watts(x_dbm: f64) -> f64 {
    db_to_linear(x_dbm - 30.0)
}

/// Large-scale path loss in dB at `distance` metres (1 m reference).
pub fn path_loss_db(distance: f64) -> f64 {
    74.2 + 16.11 * distance.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Speed of light, m/s.
    pub c0: f64,
    /// Carrier frequency, Hz.
    pub fc: f64,
    /// Number of OFDM subcarriers.
    pub subcarriers: usize,
    /// Subcarrier spacing, Hz.
    pub delta_f: f64,
    /// Elementary symbol duration, s.
    pub t_o: f64,
    /// Cyclic prefix duration, s.
    pub t_cp: f64,
    /// Transmitted symbol duration, s.
    pub t_symbol: f64,
    /// Symbols per frame.
    pub symbols_per_frame: usize,
    /// Frames per experiment.
    pub frames: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Downlink power budget, W.
    pub power: f64,
    /// Noise power spectral density at the base station, W/Hz.
    pub noise_psd_bs: f64,
    /// Noise power spectral density at the users, W/Hz.
    pub noise_psd_user: f64,
    /// Uplink training sequence length in symbols.
    pub training_length: usize,
    /// Weight between tracking error and SIC cost in the radar metric.
    pub omega_bar: f64,
    /// Weights of the (angle, distance, velocity) error components.
    pub omega: [f64; 3],
    pub xi_a: f64,
    pub xi_b: f64,
    pub xi_c: f64,
    /// Base step of the dual sub-gradient update.
    pub delta_s: f64,
    /// Evaluate the sensing gain at the true angle instead of the predicted one.
    #[serde(default)]
    pub true_angle_sensing: bool,
}

impl SystemConfig {
    pub fn bandwidth(&self) -> f64 {
        self.subcarriers as f64 * self.delta_f
    }

    pub fn user_noise_power(&self) -> f64 {
        self.noise_psd_user * self.bandwidth()
    }

    pub fn uplink_noise_power(&self) -> f64 {
        self.noise_psd_bs * self.bandwidth()
    }

    /// Per-subcarrier radar receiver noise.
    pub fn radar_noise(&self) -> f64 {
        self.delta_f * self.noise_psd_bs
    }

    pub fn frame_duration(&self) -> f64 {
        self.symbols_per_frame as f64 * self.t_symbol
    }

    /// Largest number of users that may re-estimate within one frame.
    pub fn max_reestimations(&self) -> usize {
        self.symbols_per_frame / self.training_length
    }

    /// Symbols spent on uplink training when `estimating` users re-estimate.
    pub fn training_symbols(&self, estimating: usize) -> usize {
        self.training_length * estimating
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c0", self.c0),
            ("fc", self.fc),
            ("delta_f", self.delta_f),
            ("t_o", self.t_o),
            ("t_cp", self.t_cp),
            ("t_symbol", self.t_symbol),
            ("power", self.power),
            ("noise_psd_bs", self.noise_psd_bs),
            ("noise_psd_user", self.noise_psd_user),
            ("xi_c", self.xi_c),
            ("delta_s", self.delta_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(IsacError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        let counts = [
            ("subcarriers", self.subcarriers, 2),
            ("symbols_per_frame", self.symbols_per_frame, 3),
            ("frames", self.frames, 1),
            ("tx_antennas", self.tx_antennas, 1),
            ("rx_antennas", self.rx_antennas, 2),
            ("training_length", self.training_length, 1),
        ];
        for (name, v, min) in counts {
            if v < min {
                return Err(IsacError::InvalidConfig(format!(
                    "{name} must be at least {min}, got {v}"
                )));
            }
        }
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
        if !rel(self.t_symbol, self.t_o + self.t_cp) {
            return Err(IsacError::InvalidConfig(format!(
                "t_symbol ({}) must equal t_o + t_cp ({})",
                self.t_symbol,
                self.t_o + self.t_cp
            )));
        }
        if !rel(self.delta_f, 1.0 / self.t_o) {
            return Err(IsacError::InvalidConfig(format!(
                "delta_f ({}) must equal 1 / t_o ({})",
                self.delta_f,
                1.0 / self.t_o
            )));
        }
        if !(0.0..=1.0).contains(&self.omega_bar) {
            return Err(IsacError::InvalidConfig(format!(
                "omega_bar must lie in [0, 1], got {}",
                self.omega_bar
            )));
        }
        if self.omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(IsacError::InvalidConfig("omega must be nonnegative".into()));
        }
        if !(self.xi_a.is_finite() && self.xi_b.is_finite() && self.xi_b >= 0.0) {
            return Err(IsacError::InvalidConfig(
                "xi_a, xi_b must be finite, xi_b >= 0".into(),
            ));
        }
        if self.max_reestimations() == 0 {
            return Err(IsacError::InvalidConfig(
                "training_length exceeds symbols_per_frame".into(),
            ));
        }
        Ok(())
    }
}

/// User layout entry of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    /// Temporal correlation coefficient.
    pub rho: f64,
    /// Distance to the base station, m.
    pub distance: f64,
    /// Uplink training power, dBm.
    pub uplink_power_dbm: f64,
    /// Utility weight of this user's rate.
    pub weight: f64,
}

/// Target layout entry of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Initial state `[angle rad, distance m, velocity m/s]`.
    pub initial_state: [f64; 3],
    /// Direction of motion, rad.
    pub velocity_angle: f64,
    /// Scale of the state evolution noise.
    pub noise_level: f64,
    pub rcs: f64,
    /// Utility weight of this target's radar metric.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Copy the learner's state estimates into the baseline runs every this
    /// many frames; 0 disables.
    pub resync_interval: usize,
    /// Also solve for the utility achieved under the union of explored
    /// communication decisions.
    pub practical_utility: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            resync_interval: 1000,
            practical_utility: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: String,
    pub system: SystemConfig,
    pub users: Vec<UserSpec>,
    pub targets: Vec<TargetSpec>,
    pub learner: LearnerConfig,
    pub solver: SolverOptions,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl Preset {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(IsacError::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }

    pub fn config(self) -> ScenarioConfig {
        match self {
            Preset::Paper => paper_preset(),
            Preset::Desk => desk_preset(),
        }
    }
}

fn base_system() -> SystemConfig {
    let delta_f = 156.25e3;
    let t_o = 1.0 / delta_f;
    let t_cp = 1.6e-6;
    SystemConfig {
        c0: 3e8,
        fc: 5.89e9,
        subcarriers: 64,
        delta_f,
        t_o,
        t_cp,
        t_symbol: t_o + t_cp,
        symbols_per_frame: 800,
        frames: 10_000,
        tx_antennas: 64,
        rx_antennas: 32,
        power: 1.0,
        noise_psd_bs: dbm_to_watts(-174.0),
        noise_psd_user: dbm_to_watts(-174.0),
        training_length: 10,
        omega_bar: 0.3,
        omega: [1.0, 1.0, 1.0],
        xi_a: 0.5,
        xi_b: 0.24,
        xi_c: 1.0,
        delta_s: 0.005,
        true_angle_sensing: false,
    }
}

/// Direction of motion for a target starting at angle `theta`: mostly
/// receding, with a small tangential component steering the target away
/// from broadside.
fn receding_velocity_angle(theta: f64) -> f64 {
    if theta < PI / 2.0 {
        theta + 11.0 * PI / 12.0
    } else {
        theta - 11.0 * PI / 12.0
    }
}

fn target(theta: f64, noise_level: f64, weight: f64) -> TargetSpec {
    TargetSpec {
        initial_state: [theta, 150.0, 30.0],
        velocity_angle: receding_velocity_angle(theta),
        noise_level,
        rcs: 1.0,
        weight,
    }
}

fn paper_preset() -> ScenarioConfig {
    let users = [0.99, 0.96, 0.93, 0.9, 0.85, 0.8]
        .iter()
        .map(|&rho| UserSpec {
            rho,
            distance: 4000.0,
            uplink_power_dbm: 30.0,
            weight: 0.3,
        })
        .collect();
    let w_r = 20.0 * (1.0 - 0.3);
    let targets = vec![
        target(PI / 4.0, 0.05, w_r),
        target(PI / 3.0, 1.0, w_r),
        target(3.0 * PI / 4.0, 5.0, w_r),
    ];
    ScenarioConfig {
        preset: "paper".into(),
        system: base_system(),
        users,
        targets,
        learner: LearnerConfig::paper(),
        solver: SolverOptions::default(),
        experiment: ExperimentConfig::default(),
    }
}

fn desk_preset() -> ScenarioConfig {
    let mut system = base_system();
    system.tx_antennas = 8;
    system.rx_antennas = 8;
    system.frames = 3000;
    let users = [0.99, 0.9, 0.8]
        .iter()
        .map(|&rho| UserSpec {
            rho,
            distance: 4000.0,
            uplink_power_dbm: 30.0,
            weight: 0.3,
        })
        .collect();
    let targets = vec![
        target(PI / 4.0, 0.05, 1.0),
        target(3.0 * PI / 4.0, 5.0, 1.0),
    ];
    ScenarioConfig {
        preset: "desk".into(),
        system,
        users,
        targets,
        learner: LearnerConfig::desk(),
        solver: SolverOptions::default(),
        experiment: ExperimentConfig::default(),
    }
}

/// Derived parameters of one communication user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommUserParams {
    pub rho: f64,
    /// Large-scale gain (linear power ratio).
    pub beta_bar: f64,
    /// Uplink training power, W.
    pub uplink_power: f64,
    /// Downlink receiver noise power, W.
    pub noise_power: f64,
    /// Uplink noise power at the base station, W.
    pub uplink_noise: f64,
    /// Initial estimation error variance.
    pub initial_error_variance: f64,
    pub weight: f64,
}

/// Derived parameters of one radar target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarTargetParams {
    pub velocity_angle: f64,
    /// Diagonal of the state evolution noise covariance.
    pub evolution_noise: [f64; 3],
    pub rcs: f64,
    pub initial_state: [f64; 3],
    /// Initial posterior bound, row-major.
    pub initial_pcrb: [[f64; 3]; 3],
    pub weight: f64,
}

impl RadarTargetParams {
    pub fn evolution_covariance(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.evolution_noise))
    }

    pub fn initial_pcrb_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.initial_pcrb[i][j])
    }
}

/// Evolution noise variances `(angle, distance, velocity)` for noise level
/// `noise_level` and frame duration `frame_duration`.
pub fn evolution_noise(noise_level: f64, frame_duration: f64) -> [f64; 3] {
    let eps_v = 0.5 * noise_level * frame_duration;
    let eps_d = 0.5 * noise_level * eps_v;
    let eps_theta = 1e-4 * noise_level * frame_duration;
    [eps_theta, eps_d, eps_v]
}

/// A validated, fully derived scenario. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub users: Vec<CommUserParams>,
    pub targets: Vec<RadarTargetParams>,
}

impl Scenario {
    pub fn from_preset(preset: Preset) -> Result<Self> {
        preset.config().build()
    }

    pub fn system(&self) -> &SystemConfig {
        &self.config.system
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_targets(&self) -> usize {
        self.targets.len()
    }
}

/// Builds the derived user and target parameters for `cfg` laid out as `preset`.
pub fn build_scenario(
    cfg: &SystemConfig,
    preset: Preset,
) -> Result<(Vec<CommUserParams>, Vec<RadarTargetParams>)> {
    let mut sc = preset.config();
    sc.system = cfg.clone();
    let s = sc.build()?;
    Ok((s.users, s.targets))
}

impl ScenarioConfig {
    pub fn build(self) -> Result<Scenario> {
        let sys = &self.system;
        sys.validate()?;
        if self.users.is_empty() {
            return Err(IsacError::InvalidConfig(
                "at least one user is required".into(),
            ));
        }
        if self.users.len() > sys.max_reestimations() {
            return Err(IsacError::StageOneInfeasible {
                users: self.users.len(),
                needed: sys.training_symbols(self.users.len()),
                available: sys.symbols_per_frame,
            });
        }
        self.learner.validate()?;
        self.solver.validate()?;

        let users = self
            .users
            .iter()
            .enumerate()
            .map(|(k, u)| {
                if !(0.0..=1.0).contains(&u.rho) {
                    return Err(IsacError::InvalidConfig(format!(
                        "user {k}: rho must lie in [0, 1], got {}",
                        u.rho
                    )));
                }
                if !(u.distance > 0.0 && u.weight >= 0.0) {
                    return Err(IsacError::InvalidConfig(format!(
                        "user {k}: distance must be positive and weight nonnegative"
                    )));
                }
                let beta_bar = db_to_linear(-path_loss_db(u.distance));
                Ok(CommUserParams {
                    rho: u.rho,
                    beta_bar,
                    uplink_power: dbm_to_watts(u.uplink_power_dbm),
                    noise_power: sys.user_noise_power(),
                    uplink_noise: sys.uplink_noise_power(),
                    initial_error_variance: 0.5 * beta_bar,
                    weight: u.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let frame_duration = sys.frame_duration();
        let n_targets = self.targets.len();
        let gamma0 = sys.power
            / (2.0 * (sys.tx_antennas + sys.rx_antennas) as f64 * (n_targets + sys.frames) as f64);
        let targets = self
            .targets
            .iter()
            .enumerate()
            .map(|(q, t)| {
                if !(t.noise_level >= 0.0 && t.rcs > 0.0 && t.weight >= 0.0) {
                    return Err(IsacError::InvalidConfig(format!(
                        "target {q}: noise_level, weight must be nonnegative and rcs positive"
                    )));
                }
                if !(t.initial_state[1] > 0.0) {
                    return Err(IsacError::DegenerateGeometry(t.initial_state[1]));
                }
                let x0 = Vector3::from(t.initial_state);
                let crb = radar::crb_coefficients(
                    &x0,
                    t.velocity_angle,
                    t.rcs,
                    sys,
                    sys.symbols_per_frame,
                )?;
                let m0 = crb.sigma_delta() / gamma0;
                let mut initial_pcrb = [[0.0; 3]; 3];
                for (i, row) in initial_pcrb.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = m0[(i, j)];
                    }
                }
                Ok(RadarTargetParams {
                    velocity_angle: t.velocity_angle,
                    evolution_noise: evolution_noise(t.noise_level, frame_duration),
                    rcs: t.rcs,
                    initial_state: t.initial_state,
                    initial_pcrb,
                    weight: t.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Scenario {
            config: self,
            users,
            targets,
        })
    }

    /// Parses a TOML scenario file. The file names a `base` preset (default
    /// `desk`) and overrides any subset of its fields; arrays such as
    /// `users` are replaced wholesale.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut overrides: toml::Table =
            toml::from_str(text).map_err(|e| IsacError::Parse(e.to_string()))?;
        let base = match overrides.remove("base") {
            Some(toml::Value::String(s)) => s,
            Some(other) => {
                return Err(IsacError::Parse(format!(
                    "`base` must be a preset name, got {other}"
                )))
            }
            None => "desk".to_string(),
        };
        let preset = Preset::from_name(&base)?;
        let mut merged =
            toml::Value::try_from(preset.config()).map_err(|e| IsacError::Parse(e.to_string()))?;
        merge(&mut merged, toml::Value::Table(overrides));
        if let toml::Value::Table(t) = &mut merged {
            if !t.contains_key("preset") {
                t.insert("preset".into(), toml::Value::String(base));
            }
        }
        merged
            .try_into()
            .map_err(|e: toml::de::Error| IsacError::Parse(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| IsacError::Parse(e.to_string()))
    }
}

fn merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
