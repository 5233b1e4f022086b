//! Stochastic motion of light-responsive micro-agents: the persistent
//! turning walker with light inputs, the exact Ornstein-Uhlenbeck transition,
//! the Lévy walker and the light programs projected on the arena.

use std::f64::consts::PI;

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::fmt_f64;
use crate::rng::stream;

#[derive(Debug, Error, PartialEq)]
pub enum StochasticError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid light program: {0}")]
    InvalidProgram(String),
}

/// Parameters of the speed and angular-velocity SDEs of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PTWParams {
    pub theta_v: f64,
    /// Mean speed (px/s).
    pub mu_v: f64,
    pub sigma_v: f64,
    pub alpha_v: f64,
    pub beta_v: f64,
    pub theta_w: f64,
    pub sigma_w: f64,
    pub alpha_w: f64,
    pub beta_w: f64,
    /// Step-down gains on `min(u̇, 0)`; zero unless configured.
    #[serde(default)]
    pub gamma_v: f64,
    #[serde(default)]
    pub gamma_w: f64,
}

impl Default for PTWParams {
    /// Values of the order of the recorded Euglena statistics: mean speed
    /// around 50 px/s, slowing and turning more under light.
    fn default() -> Self {
        Self {
            theta_v: 0.5,
            mu_v: 50.0,
            sigma_v: 10.0,
            alpha_v: -6.0,
            beta_v: -20.0,
            theta_w: 1.0,
            sigma_w: 0.4,
            alpha_w: 0.2,
            beta_w: 1.0,
            gamma_v: 0.0,
            gamma_w: 0.0,
        }
    }
}

impl PTWParams {
    pub const NAMES: [&'static str; 9] =
        ["theta_v", "mu_v", "sigma_v", "alpha_v", "beta_v", "theta_w", "sigma_w", "alpha_w", "beta_w"];

    pub fn validate(&self) -> Result<(), StochasticError> {
        let all = [self.values().to_vec(), vec![self.gamma_v, self.gamma_w]].concat();
        if all.iter().any(|x| !x.is_finite()) {
            return Err(StochasticError::InvalidParams("non-finite value".into()));
        }
        if !(self.theta_v > 0.0 && self.theta_w > 0.0) {
            return Err(StochasticError::InvalidParams("rates must be positive".into()));
        }
        if self.sigma_v < 0.0 || self.sigma_w < 0.0 {
            return Err(StochasticError::InvalidParams("volatilities must be nonnegative".into()));
        }
        Ok(())
    }

    /// The nine identified parameters in [`Self::NAMES`] order.
    pub fn values(&self) -> [f64; 9] {
        [
            self.theta_v,
            self.mu_v,
            self.sigma_v,
            self.alpha_v,
            self.beta_v,
            self.theta_w,
            self.sigma_w,
            self.alpha_w,
            self.beta_w,
        ]
    }
}

/// Run durations of a Lévy walker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RunDistribution {
    Exponential { rate: f64 },
    /// Pareto tail `t_min · U^{−1/(exponent−1)}`, density ∝ `t^{−exponent}`.
    PowerLaw { exponent: f64, t_min: f64 },
}

/// Reorientation at a tumble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TurnDistribution {
    /// New heading uniform on `[−π, π)`.
    Uniform,
    /// Heading changes by a normal angle of standard deviation `kappa`, wrapped.
    WrappedGaussian { kappa: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyParams {
    /// Constant speed (px/s).
    pub speed: f64,
    pub run: RunDistribution,
    pub turn: TurnDistribution,
}

impl LevyParams {
    pub fn validate(&self) -> Result<(), StochasticError> {
        let bad = |m: &str| Err(StochasticError::InvalidParams(m.into()));
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return bad("speed must be positive");
        }
        match self.run {
            RunDistribution::Exponential { rate } if !(rate > 0.0) => return bad("rate must be positive"),
            RunDistribution::PowerLaw { exponent, t_min } if !(exponent > 1.0 && t_min > 0.0) => {
                return bad("power law needs exponent > 1 and t_min > 0")
            }
            _ => {}
        }
        if let TurnDistribution::WrappedGaussian { kappa } = self.turn {
            if !(kappa > 0.0) {
                return bad("kappa must be positive");
            }
        }
        Ok(())
    }

    pub fn sample_run<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = 1.0 - rng.random::<f64>();
        match self.run {
            RunDistribution::Exponential { rate } => -u.ln() / rate,
            RunDistribution::PowerLaw { exponent, t_min } => t_min * u.powf(-1.0 / (exponent - 1.0)),
        }
    }

    pub fn sample_heading<R: Rng + ?Sized>(&self, heading: f64, rng: &mut R) -> f64 {
        match self.turn {
            TurnDistribution::Uniform => rng.random_range(-PI..PI),
            TurnDistribution::WrappedGaussian { kappa } => {
                wrap_pi(heading + kappa * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Time profile of the projected light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Temporal {
    Off,
    Constant { intensity: f64 },
    /// On during `[on_at, off_at)`.
    Step { on_at: f64, off_at: f64, intensity: f64 },
    /// Linear rise from 0 at `t0` to `i_max` at `t1`, then held.
    Ramp { t0: f64, t1: f64, i_max: f64 },
    /// Off before `t0`, then on for the first `duty` fraction of each period.
    Switch { t0: f64, period: f64, duty: f64, intensity: f64 },
}

impl Temporal {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Temporal::Off => 0.0,
            Temporal::Constant { intensity } => intensity,
            Temporal::Step { on_at, off_at, intensity } => {
                if t >= on_at && t < off_at {
                    intensity
                } else {
                    0.0
                }
            }
            Temporal::Ramp { t0, t1, i_max } => {
                if t <= t0 {
                    0.0
                } else if t >= t1 {
                    i_max
                } else {
                    i_max * (t - t0) / (t1 - t0)
                }
            }
            Temporal::Switch { t0, period, duty, intensity } => {
                if t >= t0 && (t - t0).rem_euclid(period) < duty * period {
                    intensity
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<(), StochasticError> {
        let bad = |m: &str| Err(StochasticError::InvalidProgram(m.into()));
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        match *self {
            Temporal::Off => Ok(()),
            Temporal::Constant { intensity } if unit(intensity) => Ok(()),
            Temporal::Step { on_at, off_at, intensity } if unit(intensity) && on_at >= 0.0 && off_at >= on_at => Ok(()),
            Temporal::Ramp { t0, t1, i_max } if unit(i_max) && t0 >= 0.0 && t1 > t0 => Ok(()),
            Temporal::Switch { t0, period, duty, intensity }
                if unit(intensity) && t0 >= 0.0 && period > 0.0 && unit(duty) =>
            {
                Ok(())
            }
            _ => bad("intensities must lie in [0, 1] and times be nonnegative and ordered"),
        }
    }
}

/// Spatial mask over the arena, valued in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Spatial {
    Uniform,
    /// Left half dark, right half lit.
    HalfHalf,
    /// Linear from dark at `x = 0` to lit at `x = width`.
    GradientLateral,
    /// Brightest on the vertical centre line, dark at the sides.
    GradientCenterLight,
    /// Dark on the vertical centre line, brightest at the sides.
    GradientCenterDark,
    CircleLight { center: [f64; 2], radius: f64 },
    CircleDark { center: [f64; 2], radius: f64 },
}

impl Spatial {
    pub fn mask(&self, x: &Vector2<f64>, arena: [f64; 2]) -> f64 {
        let w = arena[0];
        let inside = |c: [f64; 2], r: f64| (x - Vector2::new(c[0], c[1])).norm() <= r;
        let lateral = (x.x / w).clamp(0.0, 1.0);
        let from_center = ((x.x - w / 2.0).abs() / (w / 2.0)).clamp(0.0, 1.0);
        match *self {
            Spatial::Uniform => 1.0,
            Spatial::HalfHalf => {
                if x.x >= w / 2.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Spatial::GradientLateral => lateral,
            Spatial::GradientCenterLight => 1.0 - from_center,
            Spatial::GradientCenterDark => from_center,
            Spatial::CircleLight { center, radius } => f64::from(u8::from(inside(center, radius))),
            Spatial::CircleDark { center, radius } => f64::from(u8::from(!inside(center, radius))),
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Spatial::Uniform)
    }
}

fn default_arena() -> [f64; 2] {
    [1920.0, 1080.0]
}

fn default_scale() -> f64 {
    1.0
}

/// Light delivered to the agents: temporal envelope times spatial mask,
/// scaled and quantized to the projector's 8-bit levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightProgram {
    pub temporal: Temporal,
    #[serde(default = "uniform_mask")]
    pub spatial: Spatial,
    /// Fraction of full brightness.
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Arena width and height (px).
    #[serde(default = "default_arena")]
    pub arena: [f64; 2],
}

fn uniform_mask() -> Spatial {
    Spatial::Uniform
}

impl Default for LightProgram {
    fn default() -> Self {
        Self::uniform(Temporal::Off)
    }
}

impl LightProgram {
    pub fn uniform(temporal: Temporal) -> Self {
        Self { temporal, spatial: Spatial::Uniform, scale: 1.0, arena: default_arena() }
    }

    /// 10 s off, then on/off with the given half period.
    pub fn switching(half_period: f64) -> Self {
        Self::uniform(Temporal::Switch { t0: 10.0, period: 2.0 * half_period, duty: 0.5, intensity: 1.0 })
    }

    pub fn validate(&self) -> Result<(), StochasticError> {
        self.temporal.validate()?;
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(StochasticError::InvalidProgram("scale must lie in [0, 1]".into()));
        }
        if !(self.arena[0] > 0.0 && self.arena[1] > 0.0) {
            return Err(StochasticError::InvalidProgram("arena must have positive size".into()));
        }
        if let Spatial::CircleLight { radius, .. } | Spatial::CircleDark { radius, .. } = self.spatial {
            if !(radius >= 0.0) {
                return Err(StochasticError::InvalidProgram("radius must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// Rounds an intensity to the nearest of 256 levels.
pub fn quantize(i: f64) -> f64 {
    (i.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

pub fn light_at(program: &LightProgram, x: &Vector2<f64>, t: f64) -> f64 {
    quantize(program.scale * program.temporal.value(t) * program.spatial.mask(x, program.arena))
}

/// Backward differences `(u_k − u_{k−1})/ΔT`, zero at the first sample.
pub fn backward_difference(u: &[f64], dt: f64) -> Vec<f64> {
    (0..u.len()).map(|k| if k == 0 { 0.0 } else { (u[k] - u[k - 1]) / dt }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicAgent {
    /// Position (px).
    pub position: Vector2<f64>,
    /// Heading (rad).
    pub heading: f64,
    /// Speed (px/s).
    pub v: f64,
    /// Angular velocity (rad/s).
    pub w: f64,
}

impl KinematicAgent {
    pub fn new(x: f64, y: f64, heading: f64, v: f64, w: f64) -> Self {
        Self { position: Vector2::new(x, y), heading, v, w }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite()) && self.heading.is_finite() && self.v.is_finite() && self.w.is_finite()
    }
}

/// One Euler–Maruyama step of the speed and angular-velocity SDEs followed
/// by the unicycle update; the speed is clamped at zero.
pub fn ptw_step<R: Rng + ?Sized>(agent: &KinematicAgent, p: &PTWParams, u: f64, u_dot: f64, dt: f64, rng: &mut R) -> KinematicAgent {
    let up = u_dot.max(0.0);
    let down = u_dot.min(0.0);
    let sq = dt.sqrt();
    let drift_v = p.theta_v * (p.mu_v - agent.v) + p.alpha_v * u + p.beta_v * up + p.gamma_v * down;
    let nv: f64 = rng.sample(StandardNormal);
    let v = (agent.v + drift_v * dt + p.sigma_v * sq * nv).max(0.0);

    let push = p.alpha_w * u + p.beta_w * up + p.gamma_w * down;
    let sign = if push == 0.0 {
        0.0
    } else if agent.w.abs() < 1e-9 {
        if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    } else {
        agent.w.signum()
    };
    let nw: f64 = rng.sample(StandardNormal);
    let w = agent.w + (-p.theta_w * agent.w + sign * push) * dt + p.sigma_w * sq * nw;

    let heading = agent.heading + w * dt;
    let position = agent.position + v * dt * Vector2::new(heading.cos(), heading.sin());
    KinematicAgent { position, heading, v, w }
}

/// Linear SDE `dx = [θ(μ − x) + αu] dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub theta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub sigma: f64,
}

/// Exact transition over `dt` with `u` held constant.
pub fn exact_ou_step<R: Rng + ?Sized>(x: f64, u: f64, p: &OuParams, dt: f64, rng: &mut R) -> f64 {
    let a = (-p.theta * dt).exp();
    let sd = p.sigma * ((1.0 - (-2.0 * p.theta * dt).exp()) / (2.0 * p.theta)).sqrt();
    let n: f64 = rng.sample(StandardNormal);
    a * x + (p.mu + p.alpha * u / p.theta) * (1.0 - a) + sd * n
}

/// Lévy walker: an agent plus the time left in its current run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevyWalker {
    pub agent: KinematicAgent,
    pub remaining: f64,
}

impl LevyWalker {
    pub fn new<R: Rng + ?Sized>(x: f64, y: f64, params: &LevyParams, rng: &mut R) -> Self {
        let heading = rng.random_range(-PI..PI);
        Self { agent: KinematicAgent::new(x, y, heading, params.speed, 0.0), remaining: params.sample_run(rng) }
    }
}

/// Advances the run-and-tumble automaton by `dt`; an expired run triggers a
/// tumble (new heading and run duration) before moving.
pub fn levy_step<R: Rng + ?Sized>(walker: &LevyWalker, params: &LevyParams, dt: f64, rng: &mut R) -> LevyWalker {
    let mut w = *walker;
    if w.remaining <= 0.0 {
        w.agent.heading = params.sample_heading(w.agent.heading, rng);
        w.remaining = params.sample_run(rng);
    }
    let h = w.agent.heading;
    w.agent.v = params.speed;
    w.agent.position += params.speed * dt * Vector2::new(h.cos(), h.sin());
    w.remaining -= dt;
    w
}

/// Sampled trajectory of one simulated agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub times: Vec<f64>,
    pub positions: Vec<Vector2<f64>>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// Light sampled by the agent at each observation.
    pub u: Vec<f64>,
}

/// Settings of a population run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSettings {
    /// Simulated time (s).
    pub duration: f64,
    /// Integration step (s).
    pub dt: f64,
    /// Sampling interval (s).
    pub sample_dt: f64,
}

impl Default for PopulationSettings {
    fn default() -> Self {
        Self { duration: 180.0, dt: 0.01, sample_dt: 0.5 }
    }
}

impl PopulationSettings {
    pub fn validate(&self) -> Result<(), StochasticError> {
        if !(self.duration > 0.0 && self.dt > 0.0 && self.sample_dt >= self.dt) {
            return Err(StochasticError::InvalidParams("need duration > 0 and sample_dt ≥ dt > 0".into()));
        }
        let ratio = self.sample_dt / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(StochasticError::InvalidParams("sample_dt must be a multiple of dt".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration / self.sample_dt + 1e-9).floor() as usize + 1
    }

    pub fn substeps(&self) -> usize {
        (self.sample_dt / self.dt).round() as usize
    }
}

/// Simulates one agent with its own random stream. Speed and angular
/// velocity start from their stationary laws, position uniformly in the
/// arena. The light is sampled at each observation and held, together with
/// its backward difference, until the next one.
pub fn simulate_agent(id: usize, p: &PTWParams, program: &LightProgram, settings: &PopulationSettings, seed: u64) -> Track {
    let mut rng = stream(seed, id as u64);
    let arena = program.arena;
    let v0 = (p.mu_v + p.sigma_v / (2.0 * p.theta_v).sqrt() * rng.sample::<f64, _>(StandardNormal)).max(0.0);
    let w0 = p.sigma_w / (2.0 * p.theta_w).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let mut agent = KinematicAgent::new(
        rng.random_range(0.0..arena[0]),
        rng.random_range(0.0..arena[1]),
        rng.random_range(-PI..PI),
        v0,
        w0,
    );
    let k_max = settings.samples();
    let sub = settings.substeps();
    let mut track = Track {
        id,
        times: Vec::with_capacity(k_max),
        positions: Vec::with_capacity(k_max),
        v: Vec::with_capacity(k_max),
        w: Vec::with_capacity(k_max),
        u: Vec::with_capacity(k_max),
    };
    let mut prev_u = None;
    for k in 0..k_max {
        let t = k as f64 * settings.sample_dt;
        let u = light_at(program, &agent.position, t);
        track.times.push(t);
        track.positions.push(agent.position);
        track.v.push(agent.v);
        track.w.push(agent.w);
        track.u.push(u);
        if k + 1 == k_max {
            break;
        }
        let u_dot = prev_u.map_or(0.0, |q| (u - q) / settings.sample_dt);
        prev_u = Some(u);
        for _ in 0..sub {
            agent = ptw_step(&agent, p, u, u_dot, settings.dt, &mut rng);
        }
    }
    track
}

/// One independent agent per parameter set, simulated in parallel.
pub fn simulate_population(
    params: &[PTWParams],
    program: &LightProgram,
    settings: &PopulationSettings,
    seed: u64,
) -> Result<Vec<Track>, StochasticError> {
    program.validate()?;
    settings.validate()?;
    for p in params {
        p.validate()?;
    }
    Ok(params.par_iter().enumerate().map(|(i, p)| simulate_agent(i, p, program, settings, seed)).collect())
}

/// Long-format CSV `t,agent_id,x,y,v,w,u`.
pub fn write_tracks_csv<W: std::io::Write>(tracks: &[Track], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    w.write_record(["t", "agent_id", "x", "y", "v", "w", "u"]).map_err(io)?;
    for tr in tracks {
        for k in 0..tr.times.len() {
            w.write_record([
                fmt_f64(tr.times[k]),
                tr.id.to_string(),
                fmt_f64(tr.positions[k].x),
                fmt_f64(tr.positions[k].y),
                fmt_f64(tr.v[k]),
                fmt_f64(tr.w[k]),
                fmt_f64(tr.u[k]),
            ])
            .map_err(io)?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn no_noise() -> PTWParams {
        PTWParams { sigma_v: 0.0, sigma_w: 0.0, ..PTWParams::default() }
    }

    #[test]
    fn light_examples() {
        let c = Vector2::new(960.0, 540.0);
        let sw = LightProgram::uniform(Temporal::Switch { t0: 10.0, period: 20.0, duty: 0.5, intensity: 1.0 });
        assert_eq!(light_at(&sw, &c, 15.0), 1.0);
        assert_eq!(light_at(&sw, &c, 5.0), 0.0);
        assert_eq!(light_at(&sw, &c, 25.0), 0.0);
        assert_eq!(light_at(&sw, &c, 30.0), 1.0);
        let ramp = LightProgram::uniform(Temporal::Ramp { t0: 10.0, t1: 20.0, i_max: 1.0 });
        assert_eq!(light_at(&ramp, &c, 10.0), 0.0);
        assert_eq!(light_at(&ramp, &c, 15.0), 128.0 / 255.0);
        assert_eq!(light_at(&ramp, &c, 25.0), 1.0);
        let dark = LightProgram {
            spatial: Spatial::CircleDark { center: [960.0, 540.0], radius: 100.0 },
            ..LightProgram::uniform(Temporal::Constant { intensity: 1.0 })
        };
        assert_eq!(light_at(&dark, &c, 50.0), 0.0);
        assert_eq!(light_at(&dark, &Vector2::new(0.0, 0.0), 50.0), 1.0);
        let third = LightProgram::uniform(Temporal::Step { on_at: 60.0, off_at: 120.0, intensity: 0.3 });
        assert_eq!(light_at(&third, &c, 90.0), 77.0 / 255.0);
        assert_eq!(light_at(&third, &c, 120.0), 0.0);
        let half = LightProgram { spatial: Spatial::HalfHalf, ..LightProgram::uniform(Temporal::Constant { intensity: 1.0 }) };
        assert_eq!(light_at(&half, &Vector2::new(100.0, 0.0), 1.0), 0.0);
        assert_eq!(light_at(&half, &Vector2::new(1500.0, 0.0), 1.0), 1.0);
        let g = Spatial::GradientCenterLight;
        assert_eq!(g.mask(&c, default_arena()), 1.0);
        assert_eq!(Spatial::GradientCenterDark.mask(&c, default_arena()), 0.0);
        assert!(LightProgram::uniform(Temporal::Constant { intensity: 1.5 }).validate().is_err());
    }

    #[test]
    fn light_is_piecewise_constant_between_breakpoints() {
        let sw = LightProgram::switching(10.0);
        let c = Vector2::new(1.0, 1.0);
        let mut t = 10.0;
        while t < 200.0 {
            let v0 = light_at(&sw, &c, t + 1e-6);
            for k in 1..100 {
                assert_eq!(light_at(&sw, &c, t + k as f64 * 0.0999), v0);
            }
            t += 10.0;
        }
        assert_eq!(backward_difference(&[0.0, 1.0, 1.0, 0.0], 0.5), vec![0.0, 2.0, 0.0, -2.0]);
    }

    #[test]
    fn ptw_fixed_point_and_signs() {
        let mut rng = rng_from_seed(1);
        let p = no_noise();
        let a = KinematicAgent::new(10.0, 10.0, 0.3, p.mu_v, 0.0);
        let b = ptw_step(&a, &p, 0.0, 0.0, 0.01, &mut rng);
        assert_eq!(b.v, a.v);
        assert_eq!(b.w, 0.0);
        assert_eq!(b.heading, a.heading);

        let neg = ptw_step(&a, &p, 0.0, -3.0, 0.01, &mut rng);
        assert_eq!(neg.v, a.v);
        let on = ptw_step(&a, &p, 1.0, 0.0, 0.01, &mut rng);
        assert!(on.v < a.v);
        assert_abs_diff_eq!(on.w.abs(), p.alpha_w * 0.01, epsilon = 1e-15);
        let turning = KinematicAgent { w: -0.5, ..a };
        let next = ptw_step(&turning, &p, 1.0, 0.0, 0.01, &mut rng);
        assert_abs_diff_eq!(next.w, -0.5 + (0.5 * p.theta_w - p.alpha_w) * 0.01, epsilon = 1e-15);
    }

    #[test]
    fn zero_sign_draws_are_symmetric() {
        let mut rng = rng_from_seed(2);
        let p = no_noise();
        let a = KinematicAgent::new(0.0, 0.0, 0.0, 50.0, 0.0);
        let pos = (0..10_000).filter(|_| ptw_step(&a, &p, 1.0, 0.0, 0.01, &mut rng).w > 0.0).count();
        assert!((pos as f64 / 10_000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn stationary_speed_moments() {
        let mut rng = rng_from_seed(3);
        let p = PTWParams { theta_v: 2.0, mu_v: 50.0, sigma_v: 8.0, ..PTWParams::default() };
        let mut a = KinematicAgent::new(0.0, 0.0, 0.0, 50.0, 0.0);
        let dt = 0.01;
        for _ in 0..1000 {
            a = ptw_step(&a, &p, 0.0, 0.0, dt, &mut rng);
        }
        let (mut s, mut s2, n) = (0.0, 0.0, 1_000_000);
        for _ in 0..n {
            a = ptw_step(&a, &p, 0.0, 0.0, dt, &mut rng);
            s += a.v;
            s2 += a.v * a.v;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean / 50.0 - 1.0).abs() < 0.03);
        assert!((var / (64.0 / 4.0) - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn exact_ou_examples() {
        let mut rng = rng_from_seed(4);
        let p = OuParams { theta: 1.5, mu: 40.0, alpha: 0.0, sigma: 0.0 };
        let a = (-0.75f64).exp();
        assert_abs_diff_eq!(exact_ou_step(10.0, 0.0, &p, 0.5, &mut rng), a * 10.0 + 40.0 * (1.0 - a), epsilon = 1e-12);
        let far = exact_ou_step(10.0, 2.0, &OuParams { alpha: 3.0, ..p }, 100.0, &mut rng);
        assert_abs_diff_eq!(far, 44.0, epsilon = 1e-9);

        let p = OuParams { sigma: 8.0, ..p };
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| exact_ou_step(0.0, 0.0, &p, 0.5, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = 64.0 * (1.0 - (-1.5f64).exp()) / 3.0;
        assert!((var / want - 1.0).abs() < 0.02);
    }

    #[test]
    fn exact_step_matches_fine_euler() {
        let mut rng = rng_from_seed(5);
        let p = PTWParams { theta_v: 1.5, mu_v: 40.0, sigma_v: 8.0, alpha_v: -5.0, ..PTWParams::default() };
        let ou = OuParams { theta: 1.5, mu: 40.0, alpha: -5.0, sigma: 8.0 };
        let paths = 100_000;
        let (dt_big, sub) = (0.5, 1000);
        let (mut e1, mut e2, mut x1, mut x2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..paths {
            let mut a = KinematicAgent::new(0.0, 0.0, 0.0, 30.0, 0.0);
            for _ in 0..sub {
                a = ptw_step(&a, &p, 1.0, 0.0, dt_big / sub as f64, &mut rng);
            }
            e1 += a.v;
            e2 += a.v * a.v;
            let x = exact_ou_step(30.0, 1.0, &ou, dt_big, &mut rng);
            x1 += x;
            x2 += x * x;
        }
        let (m_e, m_x) = (e1 / paths as f64, x1 / paths as f64);
        assert!((m_e / m_x - 1.0).abs() < 0.01);
        assert!(((e2 / paths as f64) / (x2 / paths as f64) - 1.0).abs() < 0.01);
    }

    #[test]
    fn levy_examples() {
        let mut rng = rng_from_seed(6);
        let p = LevyParams { speed: 3.0, run: RunDistribution::Exponential { rate: 2.0 }, turn: TurnDistribution::Uniform };
        let n = 100_000;
        let mean = (0..n).map(|_| p.sample_run(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean * 2.0 - 1.0).abs() < 0.02);

        let mut w = LevyWalker::new(0.0, 0.0, &p, &mut rng);
        w.remaining = 10.0;
        let next = levy_step(&w, &p, 0.01, &mut rng);
        assert_abs_diff_eq!((next.agent.position - w.agent.position).norm(), 0.03, epsilon = 1e-15);
        assert_eq!(next.agent.heading, w.agent.heading);

        let mut headings: Vec<f64> = (0..20_000)
            .map(|_| {
                let mut t = w;
                t.remaining = 0.0;
                levy_step(&t, &p, 0.01, &mut rng).agent.heading
            })
            .collect();
        headings.sort_by(f64::total_cmp);
        let d = headings
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let f = (h + PI) / (2.0 * PI);
                (f - k as f64 / headings.len() as f64).abs().max((f - (k + 1) as f64 / headings.len() as f64).abs())
            })
            .fold(0.0, f64::max);
        // KS critical value at the 0.01 level
        assert!(d < 1.628 / (headings.len() as f64).sqrt());

        let pl = LevyParams { run: RunDistribution::PowerLaw { exponent: 2.5, t_min: 0.1 }, ..p };
        assert!((0..1000).all(|_| pl.sample_run(&mut rng) >= 0.1));
    }

    #[test]
    fn population_is_deterministic_and_clamped() {
        let ps = vec![PTWParams::default(); 8];
        let prog = LightProgram::switching(10.0);
        let st = PopulationSettings { duration: 30.0, ..PopulationSettings::default() };
        let a = simulate_population(&ps, &prog, &st, 9).unwrap();
        let b = simulate_population(&ps, &prog, &st, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].times.len(), 61);
        assert!(a.iter().all(|t| t.v.iter().all(|&v| v >= 0.0)));
        let mut buf = Vec::new();
        write_tracks_csv(&a, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,agent_id,x,y,v,w,u\n"));
    }

    proptest! {
        #[test]
        fn speed_never_negative(seed in 0u64..500, v in 0.0..5.0f64, u in 0.0..1.0f64, ud in -2.0..2.0f64) {
            let mut rng = rng_from_seed(seed);
            let p = PTWParams { sigma_v: 30.0, beta_v: -200.0, ..PTWParams::default() };
            let mut a = KinematicAgent::new(0.0, 0.0, 0.0, v, 0.1);
            for _ in 0..50 {
                a = ptw_step(&a, &p, u, ud, 0.01, &mut rng);
                prop_assert!(a.v >= 0.0);
            }
        }

        #[test]
        fn wrap_stays_in_range(a in -100.0..100.0f64) {
            let w = wrap_pi(a);
            prop_assert!((-PI..PI).contains(&w));
            prop_assert!(((a - w) / (2.0 * PI) - ((a - w) / (2.0 * PI)).round()).abs() < 1e-9);
        }
    }
}
