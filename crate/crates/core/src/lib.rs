//! Simulation and analysis toolkit for large-scale multi-agent systems.
//!
//! Two families of models live here:
//!
//! * planar and spatial swarms steered into square, triangular and rigid
//!   lattices by distributed virtual forces ([`control`], [`dynamics`]),
//!   scored by [`metrics`] and analysed through graph rigidity ([`rigidity`]);
//! * stochastic light-responsive micro-agents ([`stochastic`]) together with
//!   the trajectory-to-parameters calibration pipeline ([`identification`]).
//!
//! [`harness`] ties both together into seeded, reproducible experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod geometry;
pub mod harness;
pub mod identification;
pub mod metrics;
pub mod rigidity;
pub mod rng;
pub mod stochastic;

pub use control::{Controller, Gains, InteractionFn};
pub use dynamics::{DynamicsKind, DynamicsSpec};
pub use geometry::{Framework, Link, LinkSet, SwarmParams, SwarmState};
pub use harness::{CampaignResult, HarnessError, Scenario};
pub use metrics::{MetricSeries, Thresholds};
pub use rigidity::{RigidityReport, SpectrumReport};
pub use stochastic::{KinematicAgent, LevyParams, LightProgram, PTWParams};
