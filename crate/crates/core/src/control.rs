//! Virtual-force control laws.
//!
//! Sign convention: `r_ij = x_i - x_j`, so a positive interaction value
//! pushes agent `i` away from agent `j`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, SwarmParams, SwarmState};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("angular error {err} outside ]-pi/{l}, pi/{l}]")]
    AngleOutOfRange { err: f64, l: u32 },
    #[error("agents {0} and {1} coincide and the interaction function diverges")]
    Coincident(usize, usize),
    #[error("the normal input is planar, got dimension {0}")]
    NotPlanar(usize),
    #[error("invalid controller: {0}")]
    Invalid(String),
}

/// Radial and normal gains of the displacement-based law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub radial: f64,
    pub normal: f64,
}

impl Gains {
    pub const fn new(radial: f64, normal: f64) -> Self {
        Self { radial, normal }
    }

    /// Tuned pair for the square lattice.
    pub const SQUARE: Gains = Gains::new(15.0, 8.0);
    /// Tuned pair for the triangular lattice.
    pub const TRIANGULAR: Gains = Gains::new(22.0, 1.0);

    pub fn for_lattice(l: u32) -> Self {
        if l == 6 {
            Self::TRIANGULAR
        } else {
            Self::SQUARE
        }
    }
}

/// `min(a/z^{2c} - b/z^c, 1)`; `z = 0` gives the saturated value 1.
pub fn f_radial_lj(z: f64, a: f64, b: f64, c: u32) -> Result<f64, ControlError> {
    if z < 0.0 {
        return Err(ControlError::NegativeDistance(z));
    }
    Ok(lj(z, a, b, c))
}

#[inline]
fn lj(z: f64, a: f64, b: f64, c: u32) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    let y = z.powi(-(c as i32));
    (a * y * y - b * y).min(1.0)
}

/// Distance below which the Lennard-Jones law is saturated at 1.
pub fn lj_saturation_knee(a: f64, b: f64, c: u32) -> f64 {
    let w = (b + (b * b + 4.0 * a).sqrt()) / (2.0 * a);
    w.powf(-1.0 / c as f64)
}

/// Power-law interaction: diverges at 0, vanishes at `r` and beyond `ra`.
pub fn f1_power_law(z: f64, g: f64, r: f64, ra: f64) -> f64 {
    if z <= r {
        g * (1.0 / z - 1.0 / r) * PI * r * r / (ra - r)
    } else if z <= ra {
        -g * ((z - r) * PI / (ra - r)).sin()
    } else {
        0.0
    }
}

pub fn f2_lj(z: f64, a: f64, b: f64, c: u32) -> f64 {
    lj(z.max(0.0), a, b, c)
}

/// `θ` minus the nearest multiple of `2π/L`, in `]-π/L, π/L]`.
pub fn angular_error(theta: f64, l: u32) -> f64 {
    let step = 2.0 * PI / l as f64;
    let half = PI / l as f64;
    let mut e = theta - step * (theta / step).round();
    if e <= -half {
        e += step;
    } else if e > half {
        e -= step;
    }
    e
}

/// Normal interaction `-(L/π)·θ_err`.
pub fn f_normal(theta_err: f64, l: u32) -> Result<f64, ControlError> {
    let half = PI / l as f64;
    if !(theta_err > -half && theta_err <= half) {
        return Err(ControlError::AngleOutOfRange { err: theta_err, l });
    }
    Ok(-(l as f64) / PI * theta_err)
}

/// Counterclockwise quarter turn in the plane.
#[inline]
pub fn perp(v: &Point) -> Point {
    Point::new(-v.y, v.x, 0.0)
}

/// Interaction function of a radial law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionFn {
    LennardJones { a: f64, b: f64, c: u32 },
    PowerLaw { g: f64, r: f64, ra: f64 },
    Gravitational { g: f64, f_max: f64, mass: f64, r_eff: f64 },
    /// Piecewise-linear table, zero beyond the last abscissa.
    Table { z: Vec<f64>, f: Vec<f64> },
}

impl InteractionFn {
    pub fn lennard_jones(a: f64, b: f64, c: u32) -> Self {
        Self::LennardJones { a, b, c }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Invalid(m.to_string()));
        match self {
            Self::LennardJones { a, b, c } if *a <= 0.0 || *b <= 0.0 || *c == 0 => {
                bad("lennard_jones needs a, b, c > 0")
            }
            Self::PowerLaw { g, r, ra } if *g <= 0.0 || *r <= 0.0 || *ra <= *r => {
                bad("power_law needs g > 0 and 0 < r < ra")
            }
            Self::Gravitational { mass, r_eff, .. } if *mass <= 0.0 || *r_eff <= 0.0 => {
                bad("gravitational needs mass > 0 and r_eff > 0")
            }
            Self::Table { z, f } if z.len() != f.len() || z.len() < 2 || z.windows(2).any(|w| w[0] >= w[1]) => {
                bad("table needs at least two strictly increasing abscissae matching the values")
            }
            _ => Ok(()),
        }
    }

    /// Distance beyond which the function is identically zero.
    pub fn support(&self) -> f64 {
        match self {
            Self::LennardJones { .. } => f64::INFINITY,
            Self::PowerLaw { ra, .. } => *ra,
            Self::Gravitational { r_eff, .. } => 1.5 * r_eff,
            Self::Table { z, .. } => *z.last().unwrap(),
        }
    }

    /// True when the function is unbounded at zero distance.
    pub fn diverges_at_zero(&self) -> bool {
        matches!(self, Self::PowerLaw { .. })
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            Self::LennardJones { a, b, c } => lj(z, *a, *b, *c),
            Self::PowerLaw { g, r, ra } => f1_power_law(z, *g, *r, *ra),
            Self::Gravitational { g, f_max, mass, r_eff } => gravitational(z, *g, *f_max, *mass, *r_eff),
            Self::Table { z: zs, f } => {
                if z > *zs.last().unwrap() {
                    return 0.0;
                }
                if z <= zs[0] {
                    return f[0];
                }
                let k = zs.partition_point(|&x| x < z);
                let t = (z - zs[k - 1]) / (zs[k] - zs[k - 1]);
                f[k - 1] + t * (f[k] - f[k - 1])
            }
        }
    }

    /// Derivative in `z`; zero where the function is saturated.
    pub fn derivative(&self, z: f64) -> f64 {
        match self {
            Self::LennardJones { a, b, c } => {
                if z < lj_saturation_knee(*a, *b, *c) {
                    return 0.0;
                }
                let c = *c as i32;
                let cf = c as f64;
                -2.0 * cf * a * z.powi(-2 * c - 1) + cf * b * z.powi(-c - 1)
            }
            Self::PowerLaw { g, r, ra } => {
                if z <= *r {
                    -g * PI * r * r / (ra - r) / (z * z)
                } else if z <= *ra {
                    -g * PI / (ra - r) * ((z - r) * PI / (ra - r)).cos()
                } else {
                    0.0
                }
            }
            _ => {
                let h = 1e-6 * z.max(1e-3);
                (self.value(z + h) - self.value(z - h)) / (2.0 * h)
            }
        }
    }
}

/// Gravitational-like force: `+[G m²/z²]` clipped to `[0, F_max]` up to
/// `r_eff`, its negative up to `1.5 r_eff`, zero beyond.
pub fn gravitational(z: f64, g: f64, f_max: f64, mass: f64, r_eff: f64) -> f64 {
    let mag = if z == 0.0 { f_max } else { (g * mass * mass / (z * z)).clamp(0.0, f_max) };
    if z <= r_eff {
        mag
    } else if z <= 1.5 * r_eff {
        -mag
    } else {
        0.0
    }
}

/// Equilibrium distance of the gravitational law for a given spin pair.
pub fn spears_distance(r: f64, l: u32, spin_i: bool, spin_j: bool) -> f64 {
    if l == 4 && spin_i == spin_j {
        r * 2f64.sqrt()
    } else {
        r
    }
}

/// Alternating spins by index parity.
pub fn checkerboard_spins(n: usize) -> Vec<bool> {
    (0..n).map(|i| i % 2 == 1).collect()
}

/// Measurement noise on the displacement-based law.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingNoise {
    /// Std of distance noise (m); angle noise has std `sigma_m·π/L`.
    pub sigma_m: f64,
    /// Std of the per-agent compass offset (rad), redrawn each step.
    pub compass: f64,
}

impl SensingNoise {
    pub fn is_zero(&self) -> bool {
        self.sigma_m == 0.0 && self.compass == 0.0
    }
}

/// Control law selected by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Controller {
    /// Radial plus normal law with static gains.
    Displacement {
        gains: Gains,
        #[serde(default = "default_lj")]
        radial: InteractionFn,
        #[serde(default)]
        noise: SensingNoise,
    },
    /// Static radial gain, per-agent normal gains adapted online.
    Adaptive {
        radial_gain: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_lj")]
        radial: InteractionFn,
        #[serde(default)]
        noise: SensingNoise,
    },
    /// Gravitational baseline with spins for square lattices.
    Spears {
        g: f64,
        f_max: f64,
        #[serde(default = "default_mass")]
        mass: f64,
    },
    /// Radial law without gains, as used for rigid lattices.
    Radial { f: InteractionFn },
}

fn default_lj() -> InteractionFn {
    InteractionFn::lennard_jones(0.15, 0.15, 5)
}

fn default_alpha() -> f64 {
    3.0
}

fn default_mass() -> f64 {
    1.0
}

impl Controller {
    pub fn displacement(gains: Gains) -> Self {
        Self::Displacement { gains, radial: default_lj(), noise: SensingNoise::default() }
    }

    pub fn adaptive(radial_gain: f64) -> Self {
        Self::Adaptive { radial_gain, alpha: default_alpha(), radial: default_lj(), noise: SensingNoise::default() }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let nonneg = |x: f64, what: &str| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(ControlError::Invalid(format!("{what} must be nonnegative and finite")))
            }
        };
        match self {
            Self::Displacement { gains, radial, noise } => {
                nonneg(gains.radial, "radial gain")?;
                nonneg(gains.normal, "normal gain")?;
                nonneg(noise.sigma_m, "sigma_m")?;
                nonneg(noise.compass, "compass noise")?;
                radial.validate()
            }
            Self::Adaptive { radial_gain, alpha, radial, noise } => {
                nonneg(*radial_gain, "radial gain")?;
                if !(*alpha > 0.0) {
                    return Err(ControlError::Invalid("alpha must be positive".into()));
                }
                nonneg(noise.sigma_m, "sigma_m")?;
                nonneg(noise.compass, "compass noise")?;
                radial.validate()
            }
            Self::Spears { g, f_max, mass } => {
                nonneg(*g, "G")?;
                nonneg(*f_max, "F_max")?;
                if !(*mass > 0.0) {
                    return Err(ControlError::Invalid("mass must be positive".into()));
                }
                Ok(())
            }
            Self::Radial { f } => f.validate(),
        }
    }

    /// True when every pairwise contribution is reciprocal and noise free.
    pub fn is_reciprocal(&self) -> bool {
        match self {
            Self::Displacement { noise, .. } => noise.is_zero(),
            Self::Adaptive { .. } => false,
            Self::Spears { .. } | Self::Radial { .. } => true,
        }
    }
}

/// Per-agent mutable controller state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub normal_gains: Vec<f64>,
    pub alpha: f64,
    pub e_theta_star: f64,
}

impl AdaptiveState {
    pub fn new(n: usize, alpha: f64, e_theta_star: f64) -> Self {
        Self { normal_gains: vec![0.0; n], alpha, e_theta_star }
    }

    pub fn reset(&mut self) {
        self.normal_gains.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn mean(&self) -> f64 {
        if self.normal_gains.is_empty() {
            return 0.0;
        }
        self.normal_gains.iter().sum::<f64>() / self.normal_gains.len() as f64
    }
}

/// Average angular error `(L/π)·mean|θ_err|` over the adjacency set of
/// agent `i`, or 0 when the set is empty.
pub fn local_angular_error(state: &SwarmState, i: usize, params: &SwarmParams) -> f64 {
    let l = params.lattice_degree;
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..state.len() {
        if j == i {
            continue;
        }
        let r = state.rel(i, j);
        let z = r.norm();
        if params.min_link <= z && z <= params.max_link && z > 0.0 {
            sum += angular_error(r.y.atan2(r.x), l).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        l as f64 / PI * sum / count as f64
    }
}

/// One Euler step of the adaptation law given each agent's local error.
pub fn adapt_with_errors(adaptive: &mut AdaptiveState, local_errors: &[f64], dt: f64) {
    for (g, &e) in adaptive.normal_gains.iter_mut().zip(local_errors) {
        if e > adaptive.e_theta_star {
            *g += adaptive.alpha * (e - adaptive.e_theta_star) * dt;
        }
    }
}

pub fn adapt_gains(adaptive: &AdaptiveState, state: &SwarmState, params: &SwarmParams, dt: f64) -> AdaptiveState {
    let errors: Vec<f64> = (0..state.len()).map(|i| local_angular_error(state, i, params)).collect();
    let mut next = adaptive.clone();
    adapt_with_errors(&mut next, &errors, dt);
    next
}

/// Displacement-based input of agent `i` evaluated directly from its
/// neighbourhoods. Reference implementation; simulations use [`FieldScan`].
pub fn control_displacement<R: Rng + ?Sized>(
    state: &SwarmState,
    i: usize,
    params: &SwarmParams,
    gains: Gains,
    radial: &InteractionFn,
    noise: SensingNoise,
    rng: &mut R,
) -> Result<Point, ControlError> {
    if state.dim != 2 {
        return Err(ControlError::NotPlanar(state.dim));
    }
    let l = params.lattice_degree;
    let offset = if noise.compass > 0.0 { noise.compass * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
    let mut u = Point::zeros();
    for j in 0..state.len() {
        if j == i {
            continue;
        }
        let r = state.rel(i, j);
        let z = r.norm();
        if z > params.sensing_radius || z == 0.0 {
            continue;
        }
        let rhat = r / z;
        let zm = if noise.sigma_m > 0.0 { (z + noise.sigma_m * rng.sample::<f64, _>(StandardNormal)).max(0.0) } else { z };
        u += gains.radial * radial.value(zm) * rhat;
        if params.min_link <= z && z <= params.max_link {
            let mut theta = r.y.atan2(r.x) + offset;
            if noise.sigma_m > 0.0 {
                theta += noise.sigma_m * PI / l as f64 * rng.sample::<f64, _>(StandardNormal);
            }
            let fe = f_normal(angular_error(theta, l), l)?;
            u += gains.normal * fe * perp(&rhat);
        }
    }
    Ok(u)
}

/// Gravitational input of agent `i`.
pub fn spears_control(
    state: &SwarmState,
    i: usize,
    params: &SwarmParams,
    g: f64,
    f_max: f64,
    mass: f64,
    spins: &[bool],
) -> Point {
    let mut u = Point::zeros();
    for j in 0..state.len() {
        if j == i {
            continue;
        }
        let r = state.rel(i, j);
        let z = r.norm();
        if z > params.sensing_radius || z == 0.0 {
            continue;
        }
        let r_eff = spears_distance(params.link_length, params.lattice_degree, spins[i], spins[j]);
        u += gravitational(z, g, f_max, mass, r_eff) * r / z;
    }
    u
}

/// `Σ_{j∈I_i} f(‖r_ij‖) r̂_ij`.
pub fn control_radial_only(
    state: &SwarmState,
    i: usize,
    f: &InteractionFn,
    sensing_radius: f64,
) -> Result<Point, ControlError> {
    let mut u = Point::zeros();
    for j in 0..state.len() {
        if j == i {
            continue;
        }
        let r = state.rel(i, j);
        let z = r.norm();
        if z > sensing_radius {
            continue;
        }
        if z == 0.0 {
            if f.diverges_at_zero() {
                return Err(ControlError::Coincident(i, j));
            }
            continue;
        }
        u += f.value(z) * r / z;
    }
    Ok(u)
}

/// Everything one pass over agent pairs produces: the control inputs and
/// the link statistics needed by the metrics and the adaptation law.
#[derive(Debug, Clone, Default)]
pub struct FieldScan {
    pub controls: Vec<Point>,
    /// `|A_i|` per agent.
    pub degrees: Vec<usize>,
    /// Sum of `|θ_err|` over `A_i`, per agent.
    pub abs_err_sum: Vec<f64>,
    /// Direction angle of every directed link.
    pub link_angles: Vec<f64>,
    /// Largest `| ‖r_k‖ - R |` over links, if any link exists.
    pub max_link_error: Option<f64>,
}

impl FieldScan {
    fn reset(&mut self, n: usize) {
        self.controls.clear();
        self.controls.resize(n, Point::zeros());
        self.degrees.clear();
        self.degrees.resize(n, 0);
        self.abs_err_sum.clear();
        self.abs_err_sum.resize(n, 0.0);
        self.link_angles.clear();
        self.max_link_error = None;
    }

    /// Per-agent `e_θ,i`.
    pub fn local_errors(&self, l: u32) -> Vec<f64> {
        self.abs_err_sum
            .iter()
            .zip(&self.degrees)
            .map(|(&s, &d)| if d == 0 { 0.0 } else { l as f64 / PI * s / d as f64 })
            .collect()
    }

    fn note_link(&mut self, z: f64, r: f64) {
        let e = (z - r).abs();
        self.max_link_error = Some(self.max_link_error.map_or(e, |m: f64| m.max(e)));
    }
}

/// Per-agent gain view used by the field evaluation.
#[derive(Debug, Clone, Copy)]
pub enum GainView<'a> {
    Uniform(Gains),
    PerAgent { radial: f64, normal: &'a [f64] },
}

impl GainView<'_> {
    #[inline]
    fn radial(&self) -> f64 {
        match self {
            Self::Uniform(g) => g.radial,
            Self::PerAgent { radial, .. } => *radial,
        }
    }

    #[inline]
    fn normal(&self, i: usize) -> f64 {
        match self {
            Self::Uniform(g) => g.normal,
            Self::PerAgent { normal, .. } => normal[i],
        }
    }
}

/// Link statistics without controls (metrics only).
pub fn scan_links(state: &SwarmState, params: &SwarmParams, scan: &mut FieldScan) {
    let n = state.len();
    scan.reset(n);
    let planar = state.dim == 2;
    let l = params.lattice_degree;
    for i in 0..n {
        for j in i + 1..n {
            let r = state.rel(i, j);
            let z = r.norm();
            if params.min_link <= z && z <= params.max_link {
                record_link(scan, i, j, &r, z, planar, l, params.link_length);
            }
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn record_link(scan: &mut FieldScan, i: usize, j: usize, r: &Point, z: f64, planar: bool, l: u32, link_length: f64) {
    scan.degrees[i] += 1;
    scan.degrees[j] += 1;
    scan.note_link(z, link_length);
    if planar && z > 0.0 {
        let a_ij = r.y.atan2(r.x);
        let a_ji = (-r.y).atan2(-r.x);
        scan.abs_err_sum[i] += angular_error(a_ij, l).abs();
        scan.abs_err_sum[j] += angular_error(a_ji, l).abs();
        scan.link_angles.push(a_ij);
        scan.link_angles.push(a_ji);
    }
}

/// Evaluates the displacement-based law for all agents in one pass.
///
/// Without sensing noise each unordered pair is visited once; with noise
/// each agent draws its own measurements of every neighbour, in agent order.
#[allow(clippy::too_many_arguments)]
pub fn displacement_field<R: Rng + ?Sized>(
    state: &SwarmState,
    params: &SwarmParams,
    gains: GainView<'_>,
    radial: &InteractionFn,
    noise: SensingNoise,
    rng: &mut R,
    scan: &mut FieldScan,
) -> Result<(), ControlError> {
    if state.dim != 2 {
        return Err(ControlError::NotPlanar(state.dim));
    }
    let n = state.len();
    scan.reset(n);
    let l = params.lattice_degree;
    let gr = gains.radial();
    if noise.is_zero() {
        for i in 0..n {
            for j in i + 1..n {
                let r = state.rel(i, j);
                let z = r.norm();
                if z > params.sensing_radius {
                    continue;
                }
                let in_band = params.min_link <= z && z <= params.max_link;
                if in_band {
                    record_link(scan, i, j, &r, z, true, l, params.link_length);
                }
                if z == 0.0 {
                    continue;
                }
                let rhat = r / z;
                let fr = gr * radial.value(z);
                scan.controls[i] += fr * rhat;
                scan.controls[j] -= fr * rhat;
                if in_band {
                    let p = perp(&rhat);
                    let e_ij = angular_error(r.y.atan2(r.x), l);
                    let e_ji = angular_error((-r.y).atan2(-r.x), l);
                    scan.controls[i] += gains.normal(i) * f_normal(e_ij, l)? * p;
                    scan.controls[j] -= gains.normal(j) * f_normal(e_ji, l)? * p;
                }
            }
        }
        return Ok(());
    }
    scan_links(state, params, scan);
    let angle_std = noise.sigma_m * PI / l as f64;
    for i in 0..n {
        let offset = if noise.compass > 0.0 { noise.compass * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
        let mut u = Point::zeros();
        for j in 0..n {
            if j == i {
                continue;
            }
            let r = state.rel(i, j);
            let z = r.norm();
            if z > params.sensing_radius || z == 0.0 {
                continue;
            }
            let rhat = r / z;
            let zm = if noise.sigma_m > 0.0 { (z + noise.sigma_m * rng.sample::<f64, _>(StandardNormal)).max(0.0) } else { z };
            u += gr * radial.value(zm) * rhat;
            if params.min_link <= z && z <= params.max_link {
                let mut theta = r.y.atan2(r.x) + offset;
                if angle_std > 0.0 {
                    theta += angle_std * rng.sample::<f64, _>(StandardNormal);
                }
                u += gains.normal(i) * f_normal(angular_error(theta, l), l)? * perp(&rhat);
            }
        }
        scan.controls[i] = u;
    }
    Ok(())
}

/// Evaluates a reciprocal radial law (gravitational or interaction
/// function) for all agents, one visit per unordered pair.
pub fn radial_field(
    state: &SwarmState,
    params: &SwarmParams,
    force: impl Fn(usize, usize, f64) -> f64,
    diverges_at_zero: bool,
    scan: &mut FieldScan,
) -> Result<(), ControlError> {
    let n = state.len();
    scan.reset(n);
    let planar = state.dim == 2;
    let l = params.lattice_degree;
    for i in 0..n {
        for j in i + 1..n {
            let r = state.rel(i, j);
            let z = r.norm();
            if z > params.sensing_radius {
                continue;
            }
            if params.min_link <= z && z <= params.max_link {
                record_link(scan, i, j, &r, z, planar, l, params.link_length);
            }
            if z == 0.0 {
                if diverges_at_zero {
                    return Err(ControlError::Coincident(i, j));
                }
                continue;
            }
            let f = force(i, j, z) / z;
            scan.controls[i] += f * r;
            scan.controls[j] -= f * r;
        }
    }
    Ok(())
}
