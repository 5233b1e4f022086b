//! Forward-Euler agent dynamics with speed saturation and actuation noise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, SwarmParams, SwarmState};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite control for agent {0}")]
    NonFiniteControl(usize),
    #[error("expected {expected} controls, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("second-order dynamics needs velocities in the state")]
    MissingVelocities,
    #[error("invalid dynamics: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    FirstOrder,
    SecondOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    /// Mass (kg), second order only.
    pub mass: f64,
    /// Viscous friction (kg/s), second order only.
    pub friction: f64,
    /// Actuation noise intensity: each step adds `sigma_a·√dt·N(0, I)` to
    /// the displacement.
    pub sigma_a: f64,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self { kind: DynamicsKind::FirstOrder, mass: 1.0, friction: 1.0, sigma_a: 0.0 }
    }
}

impl DynamicsSpec {
    pub fn second_order(mass: f64, friction: f64) -> Self {
        Self { kind: DynamicsKind::SecondOrder, mass, friction, sigma_a: 0.0 }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.sigma_a >= 0.0 && self.sigma_a.is_finite()) {
            return Err(DynamicsError::Invalid("sigma_a must be nonnegative".into()));
        }
        if self.kind == DynamicsKind::SecondOrder && !(self.mass > 0.0 && self.friction > 0.0) {
            return Err(DynamicsError::Invalid("mass and friction must be positive".into()));
        }
        Ok(())
    }
}

/// Rescales `v` so its norm does not exceed `cap`.
#[inline]
pub fn saturate(v: Point, cap: f64) -> Point {
    let s = v.norm();
    if s > cap {
        v * (cap / s)
    } else {
        v
    }
}

fn check_controls(state: &SwarmState, controls: &[Point]) -> Result<(), DynamicsError> {
    if controls.len() != state.len() {
        return Err(DynamicsError::LengthMismatch { expected: state.len(), got: controls.len() });
    }
    if let Some(i) = controls.iter().position(|u| !u.iter().all(|c| c.is_finite())) {
        return Err(DynamicsError::NonFiniteControl(i));
    }
    Ok(())
}

/// `x ← x + dt·sat(u + noise)` at step `step + 1`.
pub fn step_first_order<R: Rng + ?Sized>(
    state: &SwarmState,
    controls: &[Point],
    spec: &DynamicsSpec,
    params: &SwarmParams,
    rng: &mut R,
) -> Result<SwarmState, DynamicsError> {
    let mut next = state.clone();
    advance_first_order(&mut next, controls, spec, params, rng)?;
    next.t = state.t + params.dt;
    Ok(next)
}

/// In-place variant of [`step_first_order`]; leaves `t` untouched.
pub fn advance_first_order<R: Rng + ?Sized>(
    state: &mut SwarmState,
    controls: &[Point],
    spec: &DynamicsSpec,
    params: &SwarmParams,
    rng: &mut R,
) -> Result<(), DynamicsError> {
    check_controls(state, controls)?;
    let dt = params.dt;
    let noise_scale = if spec.sigma_a > 0.0 { spec.sigma_a / dt.sqrt() } else { 0.0 };
    let dim = state.dim;
    for (x, u) in state.positions.iter_mut().zip(controls) {
        let mut v = *u;
        if noise_scale > 0.0 {
            for k in 0..dim {
                v[k] += noise_scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        *x += dt * saturate(v, params.max_speed);
    }
    Ok(())
}

/// Semi-implicit Euler: `v ← v + dt·(u − μv)/m`, then `x ← x + dt·v`.
pub fn step_second_order(
    state: &SwarmState,
    forces: &[Point],
    spec: &DynamicsSpec,
    params: &SwarmParams,
) -> Result<SwarmState, DynamicsError> {
    let mut next = state.clone();
    advance_second_order(&mut next, forces, spec, params)?;
    next.t = state.t + params.dt;
    Ok(next)
}

pub fn advance_second_order(
    state: &mut SwarmState,
    forces: &[Point],
    spec: &DynamicsSpec,
    params: &SwarmParams,
) -> Result<(), DynamicsError> {
    check_controls(state, forces)?;
    let dt = params.dt;
    let velocities = state.velocities.as_mut().ok_or(DynamicsError::MissingVelocities)?;
    for ((x, v), u) in state.positions.iter_mut().zip(velocities.iter_mut()).zip(forces) {
        *v = saturate(*v + dt * (u - spec.friction * *v) / spec.mass, params.max_speed);
        *x += dt * *v;
    }
    Ok(())
}
