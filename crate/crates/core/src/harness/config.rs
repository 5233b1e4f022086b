//! Declarative scenario files and `key=value` overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::{Controller, Gains, InteractionFn};
use crate::dynamics::DynamicsSpec;
use crate::geometry::SwarmParams;
use crate::identification::CalibrationSettings;
use crate::metrics::Thresholds;
use crate::stochastic::{LightProgram, PTWParams, PopulationSettings};

/// How the agents are placed at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initial {
    /// Uniform in a disk (ball in 3D) of the given radius centred at the origin.
    Disk { radius: f64 },
    /// Uniform in a disk of radius `√(N/25)`.
    ScaledDisk,
    /// Generated rigid lattice with `vacancies` holes, each agent then
    /// displaced uniformly within a ball of radius `delta`.
    Lattice {
        delta: f64,
        #[serde(default)]
        vacancies: usize,
    },
}

impl Initial {
    pub fn radius(&self, n: usize) -> Option<f64> {
        match self {
            Initial::Disk { radius } => Some(*radius),
            Initial::ScaledDisk => Some((n as f64 / 25.0).sqrt()),
            Initial::Lattice { .. } => None,
        }
    }
}

/// Something that happens at a given time during a trial. Events fire at
/// step `round(at/dt)`, before the controls of that step are computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    /// Removes `⌊fraction·N⌋` agents chosen uniformly without replacement.
    Remove { at: f64, fraction: f64 },
    /// Changes the target lattice; adaptive gains restart from zero.
    SwitchLattice { at: f64, l: u32 },
    /// Resets the adaptive normal gains to zero.
    ResetGains { at: f64 },
}

impl Event {
    pub fn at(&self) -> f64 {
        match self {
            Event::Remove { at, .. } | Event::SwitchLattice { at, .. } | Event::ResetGains { at } => *at,
        }
    }

    pub fn step(&self, dt: f64) -> usize {
        (self.at() / dt).round() as usize
    }
}

/// Pass conditions checked by `validate` after running the campaign.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub min_success_rate: Option<f64>,
    pub max_median_convergence: Option<f64>,
    pub min_recovery_rate: Option<f64>,
    pub max_e_final: Option<f64>,
    pub min_rigid_rate: Option<f64>,
    pub min_rho: Option<f64>,
    pub max_rho: Option<f64>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_trials() -> usize {
    1
}

fn default_t_max() -> f64 {
    200.0
}

fn default_stride() -> usize {
    1
}

fn default_lattice_tolerance() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

/// One swarm experiment: parameters, control law, initial condition,
/// events and run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Simulated time (s).
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Keep one sample every `output_stride` steps in the emitted series.
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    /// End a trial at steady state once no event is pending.
    #[serde(default = "default_true")]
    pub stop_at_steady_state: bool,
    #[serde(default)]
    pub params: SwarmParams,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    pub controller: Controller,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub initial: Initial,
    #[serde(default)]
    pub events: Vec<Event>,
    /// Largest link-length error of a configuration counted as a rigid
    /// lattice at the end of a radial-law trial (m).
    #[serde(default = "default_lattice_tolerance")]
    pub lattice_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectations>,
}

impl Scenario {
    /// Static-gain formation of an `L`-lattice from a disk of radius 2.
    pub fn formation(l: u32, gains: Gains) -> Self {
        Self {
            name: format!("formation_l{l}"),
            seed: 0,
            trials: 1,
            t_max: 200.0,
            output_stride: 1,
            stop_at_steady_state: true,
            params: SwarmParams { lattice_degree: l, ..SwarmParams::default() },
            dynamics: DynamicsSpec::default(),
            controller: Controller::displacement(gains),
            thresholds: Thresholds::default(),
            initial: Initial::Disk { radius: 2.0 },
            events: Vec::new(),
            lattice_tolerance: default_lattice_tolerance(),
            expect: None,
        }
    }

    /// Perturbed rigid lattice under a radial law, run for 20 s.
    pub fn rigid(n: usize, dim: usize, f: InteractionFn, delta: f64) -> Self {
        Self {
            name: format!("rigid_d{dim}"),
            seed: 0,
            trials: 1,
            t_max: 20.0,
            output_stride: 1,
            stop_at_steady_state: false,
            params: SwarmParams::rigid(n, dim),
            dynamics: DynamicsSpec::default(),
            controller: Controller::Radial { f },
            thresholds: Thresholds::default(),
            initial: Initial::Lattice { delta, vacancies: 0 },
            events: Vec::new(),
            lattice_tolerance: default_lattice_tolerance(),
            expect: None,
        }
    }

    /// Number of integration steps.
    pub fn steps(&self) -> usize {
        (self.t_max / self.params.dt).round() as usize
    }

    /// True for radial-law scenarios started from a rigid lattice, which
    /// track the link error, the Lyapunov function and the final rigidity.
    pub fn is_rigid(&self) -> bool {
        matches!(self.controller, Controller::Radial { .. })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |m: String| Err(HarnessError::Config(m));
        if self.is_rigid() {
            self.params.validate_rigid().map_err(|e| HarnessError::Config(e.to_string()))?;
        } else {
            self.params.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.dynamics.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.controller.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.trials == 0 {
            return cfg("trials must be at least 1".into());
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return cfg("t_max must be positive".into());
        }
        if !(self.lattice_tolerance >= 0.0) {
            return cfg("lattice_tolerance must be nonnegative".into());
        }
        if self.output_stride == 0 {
            return cfg("output_stride must be at least 1".into());
        }
        if !(self.thresholds.e_theta > 0.0 && self.thresholds.e_l > 0.0) {
            return cfg("thresholds must be positive".into());
        }
        let planar_law = matches!(self.controller, Controller::Displacement { .. } | Controller::Adaptive { .. });
        if planar_law && self.params.dim != 2 {
            return cfg("the displacement-based laws are planar; set params.dim = 2".into());
        }
        match &self.initial {
            Initial::Disk { radius } if !(*radius > 0.0) => return cfg("initial disk radius must be positive".into()),
            Initial::Lattice { delta, vacancies } => {
                if !(*delta >= 0.0 && delta.is_finite()) {
                    return cfg("initial delta must be nonnegative".into());
                }
                if *vacancies >= self.params.n {
                    return cfg("vacancies must be fewer than the agents".into());
                }
            }
            _ => {}
        }
        for e in &self.events {
            if !(e.at() >= 0.0 && e.at() <= self.t_max) {
                return cfg(format!("event time {} outside [0, t_max]", e.at()));
            }
            match e {
                Event::Remove { fraction, .. } if !(0.0..1.0).contains(fraction) => {
                    return cfg("removal fraction must lie in [0, 1)".into())
                }
                Event::SwitchLattice { l, .. } if *l != 4 && *l != 6 => {
                    return cfg("lattice switch needs l = 4 or 6".into())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn default_agents() -> usize {
    100
}

fn default_light() -> LightProgram {
    LightProgram::switching(10.0)
}

/// Synthetic population run followed by the calibration pipeline. With
/// `trajectories` set, the recorded CSV is calibrated instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationScenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_agents")]
    pub agents: usize,
    #[serde(default)]
    pub truth: PTWParams,
    #[serde(default = "default_light")]
    pub light: LightProgram,
    #[serde(default)]
    pub population: PopulationSettings,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<String>,
}

impl Default for PopulationScenario {
    fn default() -> Self {
        Self {
            name: default_name(),
            seed: 0,
            agents: default_agents(),
            truth: PTWParams::default(),
            light: default_light(),
            population: PopulationSettings::default(),
            calibration: CalibrationSettings::default(),
            trajectories: None,
        }
    }
}

impl PopulationScenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: crate::stochastic::StochasticError| HarnessError::Config(e.to_string());
        if self.trajectories.is_none() {
            if self.agents == 0 {
                return Err(HarnessError::Config("agents must be at least 1".into()));
            }
            self.truth.validate().map_err(cfg)?;
            self.population.validate().map_err(cfg)?;
        }
        self.light.validate().map_err(cfg)
    }
}

fn default_count() -> usize {
    10
}

fn default_f2() -> InteractionFn {
    InteractionFn::lennard_jones(0.5, 0.5, 12)
}

/// Batch of generated rigid lattices whose rank and spectrum are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidityScenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub dim: usize,
    pub n: usize,
    #[serde(default)]
    pub vacancies: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_link")]
    pub link_length: f64,
    #[serde(default = "default_f2")]
    pub f: InteractionFn,
    /// State CSV analysed instead of generated lattices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
}

fn default_link() -> f64 {
    1.0
}

impl RigidityScenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.f.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.link_length > 0.0) {
            return Err(HarnessError::Config("link_length must be positive".into()));
        }
        if self.state.is_none() {
            if self.dim != 2 && self.dim != 3 {
                return Err(HarnessError::Config(format!("dim must be 2 or 3, got {}", self.dim)));
            }
            if self.count == 0 || self.vacancies >= self.n {
                return Err(HarnessError::Config("need count ≥ 1 and fewer vacancies than sites".into()));
            }
        }
        Ok(())
    }
}

/// Parses `value` as a TOML scalar, array or inline table, falling back to
/// a bare string.
pub fn parse_override_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets the dotted `path` in `doc`, creating intermediate tables. Numeric
/// segments index into existing arrays (`events.0.at`). Whether the key
/// exists in the schema is checked when the document is parsed.
pub fn set_path(doc: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), HarnessError> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Config(format!("malformed key path {path:?}")));
    }
    let bad = |depth: usize, what: &str| HarnessError::Config(format!("{} {what}", keys[..=depth].join(".")));
    let (last, parents) = keys.split_last().unwrap();
    let mut slot: &mut toml::Value = doc
        .entry(parents.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if parents.is_empty() {
        *slot = value;
        return Ok(());
    }
    for (depth, key) in keys.iter().enumerate().take(keys.len() - 1).skip(1) {
        slot = match slot {
            toml::Value::Table(t) => t.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = key.parse().map_err(|_| bad(depth, "is not an array index"))?;
                let len = a.len();
                a.get_mut(i).ok_or_else(|| bad(depth, &format!("is out of range (length {len})")))?
            }
            _ => return Err(bad(depth - 1, "is not a table")),
        };
    }
    let depth = keys.len() - 1;
    match slot {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| bad(depth, "is not an array index"))?;
            let len = a.len();
            *a.get_mut(i).ok_or_else(|| bad(depth, &format!("is out of range (length {len})")))? = value;
        }
        _ => return Err(bad(depth - 1, "is not a table")),
    }
    Ok(())
}

/// Applies `key=value` overrides in order.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<(), HarnessError> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override {o:?} is not key=value")))?;
        set_path(doc, k.trim(), parse_override_value(v.trim()))?;
    }
    Ok(())
}

pub fn parse_document(text: &str) -> Result<toml::Table, HarnessError> {
    toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn from_document<T: DeserializeOwned>(doc: &toml::Table) -> Result<T, HarnessError> {
    toml::Value::Table(doc.clone()).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
}

pub fn to_document<T: Serialize>(value: &T) -> Result<toml::Table, HarnessError> {
    toml::Table::try_from(value).map_err(|e| HarnessError::Config(e.to_string()))
}

/// Parses a scenario file and its overrides, then validates it.
pub fn load_scenario(text: &str, overrides: &[String]) -> Result<Scenario, HarnessError> {
    let mut doc = parse_document(text)?;
    apply_overrides(&mut doc, overrides)?;
    let s: Scenario = from_document(&doc)?;
    s.validate()?;
    Ok(s)
}
