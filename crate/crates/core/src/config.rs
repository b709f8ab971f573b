//! On-disk configuration formats: the vehicle/tire parameter file and the
//! scenario file, both TOML.
//!
//! Relative paths inside a scenario file resolve against the file's own
//! directory. The default output directory comes from the `LPVMPC_OUT_DIR`
//! environment variable when the scenario does not name one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backup::{ArbitrationConfig, PidConfig, PurePursuitConfig};
use crate::mpc::{MpcConfig, MpcWeights};
use crate::qp::SolverConfig;
use crate::tire::{PacejkaAxleParams, VehicleParams};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LPVMPC_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("toml error in {path}: {msg}")]
    Toml { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Validation(String),
}

/// Vehicle parameter file: rigid-body data plus per-axle Pacejka fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VehicleFile {
    pub vehicle: VehicleParams,
    pub pacejka: PacejkaPair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PacejkaPair {
    pub front: PacejkaAxleParams,
    pub rear: PacejkaAxleParams,
}

impl VehicleFile {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let file: VehicleFile = toml::from_str(&text)
            .map_err(|e| ConfigError::Toml { path: path.into(), msg: e.to_string() })?;
        file.vehicle
            .validate()
            .map_err(|e| ConfigError::Validation(format!("{}: {e}", path.display())))?;
        file.pacejka
            .front
            .validate()
            .map_err(|e| ConfigError::Validation(format!("{}: front tire: {e}", path.display())))?;
        file.pacejka
            .rear
            .validate()
            .map_err(|e| ConfigError::Validation(format!("{}: rear tire: {e}", path.display())))?;
        Ok(file)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ConfigError> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| ConfigError::Toml { path: path.into(), msg: e.to_string() })?;
        fs::write(path, text).map_err(|source| ConfigError::Io { path: path.into(), source })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerSection {
    pub q: [f64; 5],
    pub r: f64,
    pub q_beta: f64,
    pub horizon_t: f64,
    pub n_steps: usize,
    pub control_period: f64,
    pub terminal_weight: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let w = MpcWeights::default();
        let c = MpcConfig::default();
        Self {
            q: w.q,
            r: w.r,
            q_beta: w.q_beta,
            horizon_t: c.horizon_t,
            n_steps: c.n_steps,
            control_period: c.control_period,
            terminal_weight: c.terminal_weight,
        }
    }
}

impl ControllerSection {
    pub fn weights(&self) -> MpcWeights {
        MpcWeights { q: self.q, r: self.r, q_beta: self.q_beta }
    }

    /// Completes an [`MpcConfig`] with the steering bounds of the vehicle.
    pub fn mpc_config(&self, vp: &VehicleParams) -> MpcConfig {
        MpcConfig {
            horizon_t: self.horizon_t,
            n_steps: self.n_steps,
            delta_max: vp.delta_max,
            rate_max: vp.delta_rate_max,
            control_period: self.control_period,
            terminal_weight: self.terminal_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSection {
    /// Integrator step [s].
    pub dt: f64,
    /// Rear peak-force loss per m/s^2 of positive longitudinal command.
    pub rear_grip_throttle_loss: f64,
    /// Gaussian noise on the logged IMU channel [m/s^2]; zero disables it.
    pub imu_noise_std: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self { dt: 0.001, rear_grip_throttle_loss: 0.0, imu_noise_std: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSection {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
}

impl Default for QpSection {
    fn default() -> Self {
        let c = SolverConfig::default();
        Self { rho: c.rho, eps_abs: c.eps_abs, eps_rel: c.eps_rel, max_iter: c.max_iter }
    }
}

impl QpSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_iter: self.max_iter,
            ..SolverConfig::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioSection {
    raceline: PathBuf,
    vehicle: PathBuf,
    #[serde(default = "default_duration")]
    duration: f64,
    #[serde(default)]
    out_dir: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_initial_speed")]
    initial_speed: f64,
    #[serde(default = "default_launch_exclusion")]
    launch_exclusion: f64,
    #[serde(default = "default_true")]
    record_timing: bool,
}

fn default_duration() -> f64 {
    60.0
}
fn default_initial_speed() -> f64 {
    25.0
}
fn default_launch_exclusion() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioToml {
    scenario: ScenarioSection,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    arbitration: ArbitrationConfig,
    #[serde(default)]
    pure_pursuit: PurePursuitConfig,
    #[serde(default)]
    pid: PidConfig,
    #[serde(default)]
    plant: PlantSection,
    #[serde(default)]
    qp: QpSection,
}

/// A fully resolved scenario: absolute paths, all sections defaulted.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub raceline_path: PathBuf,
    pub vehicle_path: PathBuf,
    pub duration: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub initial_speed: f64,
    pub launch_exclusion: f64,
    pub record_timing: bool,
    pub controller: ControllerSection,
    pub arbitration: ArbitrationConfig,
    pub pure_pursuit: PurePursuitConfig,
    pub pid: PidConfig,
    pub plant: PlantSection,
    pub qp: QpSection,
}

/// Loads a scenario file and resolves its paths.
pub fn load_scenario<P: AsRef<Path>>(path: P) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    let raw: ScenarioToml = toml::from_str(&text)
        .map_err(|e| ConfigError::Toml { path: path.into(), msg: e.to_string() })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let out_dir = raw
        .scenario
        .out_dir
        .as_deref()
        .map(resolve)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let cfg = ScenarioConfig {
        raceline_path: resolve(&raw.scenario.raceline),
        vehicle_path: resolve(&raw.scenario.vehicle),
        duration: raw.scenario.duration,
        out_dir,
        seed: raw.scenario.seed,
        initial_speed: raw.scenario.initial_speed,
        launch_exclusion: raw.scenario.launch_exclusion,
        record_timing: raw.scenario.record_timing,
        controller: raw.controller,
        arbitration: raw.arbitration,
        pure_pursuit: raw.pure_pursuit,
        pid: raw.pid,
        plant: raw.plant,
        qp: raw.qp,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.duration > 0.0) {
            return Err(ConfigError::Validation("duration must be > 0".into()));
        }
        if !self.raceline_path.is_file() {
            return Err(ConfigError::Validation(format!(
                "raceline file {} does not exist",
                self.raceline_path.display()
            )));
        }
        if !self.vehicle_path.is_file() {
            return Err(ConfigError::Validation(format!(
                "vehicle file {} does not exist",
                self.vehicle_path.display()
            )));
        }
        if !(self.plant.dt > 0.0 && self.plant.dt <= 0.02) {
            return Err(ConfigError::Validation("plant dt must lie in (0, 0.02]".into()));
        }
        if self.controller.n_steps < 5 {
            return Err(ConfigError::Validation("controller needs at least 5 steps".into()));
        }
        Ok(())
    }
}
