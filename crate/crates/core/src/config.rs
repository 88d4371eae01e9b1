//! TOML configuration files. Angles are given in degrees (arcmin for
//! tolerances) and converted to radians on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backtrack::{AlignmentConfig, GnssNoise};
use crate::errmodel::{ModelKind, SensorBudget};
use crate::error::{Error, Result};
use crate::simkit::{ManeuverSegment, MonteCarloSpec, NamedAlgorithm, Scenario};
use crate::ukf::{Integrator, UtParams};

fn config_error(path: &Path, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads and parses a TOML file, returning the parsed value and the raw text.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value = toml::from_str(&text).map_err(|e| {
        let msg = match e.span() {
            Some(span) => {
                let line = text[..span.start].lines().count().max(1);
                format!("line {line}: {}", e.message())
            }
            None => e.message().to_string(),
        };
        config_error(path, msg)
    })?;
    Ok((value, text))
}

fn deg3(v: [f64; 3]) -> [f64; 3] {
    v.map(f64::to_radians)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SensorPreset {
    /// Low-cost MEMS: 1 deg/h, 0.1 deg/sqrt(h), 2 mg, 1 mg/sqrt(Hz).
    #[default]
    Mems,
    Stim300,
    Zero,
}

/// Sensor error budget in datasheet units; unset fields come from the preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(default)]
    pub preset: SensorPreset,
    pub gyro_bias_dph: Option<f64>,
    pub gyro_arw_dpsh: Option<f64>,
    pub accel_bias_mg: Option<f64>,
    pub accel_vrw_mg_rthz: Option<f64>,
}

impl SensorConfig {
    pub fn budget(&self) -> SensorBudget {
        let (b, arw, ab, vrw) = match self.preset {
            SensorPreset::Mems => (1.0, 0.1, 2.0, 1.0),
            SensorPreset::Stim300 => (0.5, 0.15, 1.0, 0.06),
            SensorPreset::Zero => (0.0, 0.0, 0.0, 0.0),
        };
        SensorBudget::from_units(
            self.gyro_bias_dph.unwrap_or(b),
            self.gyro_arw_dpsh.unwrap_or(arw),
            self.accel_bias_mg.unwrap_or(ab),
            self.accel_vrw_mg_rthz.unwrap_or(vrw),
        )
    }
}

/// Scenario file for `simulate`: trajectory, sensors and GNSS noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub imu_rate_hz: f64,
    #[serde(default = "one")]
    pub gnss_rate_hz: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub alt_m: f64,
    pub initial_speed: f64,
    #[serde(default)]
    pub initial_heading_deg: f64,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub gnss: GnssNoise,
    pub segments: Vec<ManeuverSegment>,
}

fn one() -> f64 {
    1.0
}

impl ScenarioFile {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            imu_rate_hz: self.imu_rate_hz,
            gnss_rate_hz: self.gnss_rate_hz,
            lat_deg: self.lat_deg,
            lon_deg: self.lon_deg,
            alt_m: self.alt_m,
            initial_speed: self.initial_speed,
            initial_heading_deg: self.initial_heading_deg,
            segments: self.segments.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (f, text): (ScenarioFile, String) = load(path)?;
        f.scenario()
            .validate()
            .map_err(|e| config_error(path, e.to_string()))?;
        if f.segments.is_empty() || !(f.scenario().duration() > 0.0) {
            return Err(config_error(path, "scenario has zero duration"));
        }
        f.gnss.validate().map_err(|e| config_error(path, e.to_string()))?;
        Ok((f, text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtConfig {
    #[serde(default = "UtConfig::default_alpha")]
    pub alpha: f64,
    #[serde(default = "UtConfig::default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub kappa: f64,
}

impl UtConfig {
    fn default_alpha() -> f64 {
        UtParams::default().alpha_ut
    }

    fn default_beta() -> f64 {
        UtParams::default().beta_ut
    }
}

impl Default for UtConfig {
    fn default() -> Self {
        let p = UtParams::default();
        UtConfig {
            alpha: p.alpha_ut,
            beta: p.beta_ut,
            kappa: p.kappa_ut,
        }
    }
}

/// One alignment algorithm. Sensor, GNSS and misalignment settings fall
/// back to the enclosing file's values when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: String,
    pub model: ModelKind,
    #[serde(default)]
    pub backtracking: bool,
    #[serde(default = "one_pass")]
    pub passes: usize,
    /// Prior one-sigma platform error angles, deg.
    pub misalignment_deg: Option<[f64; 3]>,
    #[serde(default)]
    pub reset_covariance: bool,
    pub reset_misalignment_deg: Option<[f64; 3]>,
    #[serde(default)]
    pub integrator: Integrator,
    pub early_stop_arcmin: Option<f64>,
    pub convergence_arcmin: Option<f64>,
    #[serde(default)]
    pub ut: UtConfig,
    pub sensors: Option<SensorConfig>,
    pub gnss: Option<GnssNoise>,
}

fn one_pass() -> usize {
    1
}

impl AlgorithmConfig {
    /// Resolves against the defaults of the enclosing file.
    pub fn resolve(
        &self,
        misalignment_deg: Option<[f64; 3]>,
        sensors: &SensorConfig,
        gnss: &GnssNoise,
    ) -> std::result::Result<NamedAlgorithm, String> {
        let mis = self
            .misalignment_deg
            .or(misalignment_deg)
            .ok_or_else(|| format!("algorithm {:?}: misalignment_deg is required", self.name))?;
        let mut c = AlignmentConfig::new(self.model, self.backtracking, self.passes);
        c.initial_misalignment = deg3(mis);
        c.reset_covariance = self.reset_covariance;
        c.reset_misalignment = self.reset_misalignment_deg.map(deg3);
        c.integrator = self.integrator;
        c.early_stop_arcmin = self.early_stop_arcmin;
        if let Some(v) = self.convergence_arcmin {
            c.convergence_arcmin = v;
        }
        c.ut = UtParams {
            alpha_ut: self.ut.alpha,
            beta_ut: self.ut.beta,
            kappa_ut: self.ut.kappa,
        };
        c.budget = self.sensors.as_ref().unwrap_or(sensors).budget();
        c.gnss_noise = self.gnss.unwrap_or(*gnss);
        c.validate().map_err(|e| format!("algorithm {:?}: {e}", self.name))?;
        Ok(NamedAlgorithm {
            name: self.name.clone(),
            config: c,
        })
    }
}

/// Configuration for `align`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignFile {
    #[serde(flatten)]
    pub algorithm: AlgorithmConfig,
    /// Initial attitude guess `[pitch, roll, yaw]`, deg. Without it the
    /// truth file's first attitude perturbed by `misalignment_deg` is used.
    pub initial_attitude_deg: Option<[f64; 3]>,
}

impl AlignFile {
    pub fn load(path: &Path) -> Result<(Self, NamedAlgorithm, String)> {
        let (f, text): (AlignFile, String) = load(path)?;
        let alg = f
            .algorithm
            .resolve(None, &SensorConfig::default(), &GnssNoise::default())
            .map_err(|m| config_error(path, m))?;
        Ok((f, alg, text))
    }
}

/// Configuration for `montecarlo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloFile {
    pub n_runs: usize,
    pub seed: u64,
    /// Platform error angles applied to the true initial attitude, deg.
    pub misalignment_deg: [f64; 3],
    /// Scenario file relative to this file; the built-in 600 s vehicle run
    /// when omitted.
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub sensors: SensorConfig,
    #[serde(default)]
    pub gnss: GnssNoise,
    pub algorithms: Vec<AlgorithmConfig>,
}

impl MonteCarloFile {
    /// Loads the file and builds the Monte-Carlo specification. `only`
    /// restricts the algorithms by name, in the file's order.
    pub fn load(path: &Path, only: Option<&[String]>) -> Result<(Self, MonteCarloSpec, String)> {
        let (f, text): (MonteCarloFile, String) = load(path)?;
        if f.n_runs == 0 {
            return Err(config_error(path, "n_runs must be at least 1"));
        }
        let scenario = match &f.scenario {
            Some(rel) => {
                let p = path.parent().unwrap_or(Path::new(".")).join(rel);
                ScenarioFile::load(&p)?.0.scenario()
            }
            None => Scenario::paper(),
        };
        let mut algorithms = Vec::new();
        for a in &f.algorithms {
            if algorithms.iter().any(|x: &NamedAlgorithm| x.name == a.name) {
                return Err(config_error(path, format!("duplicate algorithm {:?}", a.name)));
            }
            algorithms.push(
                a.resolve(Some(f.misalignment_deg), &f.sensors, &f.gnss)
                    .map_err(|m| config_error(path, m))?,
            );
        }
        if let Some(names) = only {
            for n in names {
                if !algorithms.iter().any(|a| &a.name == n) {
                    return Err(config_error(path, format!("no algorithm named {n:?}")));
                }
            }
            algorithms.retain(|a| names.contains(&a.name));
        }
        if algorithms.is_empty() {
            return Err(config_error(path, "no algorithms configured"));
        }
        f.gnss.validate().map_err(|e| config_error(path, e.to_string()))?;
        let spec = MonteCarloSpec {
            n_runs: f.n_runs,
            seed: f.seed,
            scenario,
            budget: f.sensors.budget(),
            gnss_noise: f.gnss,
            misalignment: deg3(f.misalignment_deg),
            algorithms,
            keep_traces: false,
        };
        Ok((f, spec, text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    PhiX,
    PhiY,
    PhiZ,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::PhiX, Axis::PhiY, Axis::PhiZ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::PhiX => "phi_x",
            Axis::PhiY => "phi_y",
            Axis::PhiZ => "phi_z",
        }
    }
}

/// Acceptance rule for result cells. When a rule sets any bound, only its
/// own bounds apply to the matched cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellRule {
    pub algorithm: String,
    /// All axes when omitted.
    pub axis: Option<Axis>,
    pub max_ratio: Option<f64>,
    pub max_arcmin: Option<f64>,
    pub min_arcmin: Option<f64>,
    #[serde(default)]
    pub skip: bool,
}

/// Requires `lower`'s value on `axis` to be strictly below `higher`'s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingRule {
    pub lower: String,
    pub higher: String,
    pub axis: Axis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceFile {
    /// Largest accepted got/expected ratio for cells without a rule.
    #[serde(default = "ToleranceFile::default_ratio")]
    pub max_ratio: f64,
    #[serde(default)]
    pub cells: Vec<CellRule>,
    #[serde(default)]
    pub orderings: Vec<OrderingRule>,
}

impl ToleranceFile {
    fn default_ratio() -> f64 {
        2.0
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (f, _): (ToleranceFile, String) = load(path)?;
        if !(f.max_ratio > 0.0) {
            return Err(config_error(path, "max_ratio must be positive"));
        }
        Ok(f)
    }

    /// Rule governing one cell; later rules take precedence.
    pub fn rule(&self, algorithm: &str, axis: Axis) -> Option<&CellRule> {
        self.cells
            .iter()
            .rev()
            .find(|r| r.algorithm == algorithm && r.axis.is_none_or(|a| a == axis))
    }
}
