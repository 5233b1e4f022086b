//! Population calibration runs and rigidity batches.

use serde::{Deserialize, Serialize};

use super::config::{PopulationScenario, RigidityScenario};
use super::HarnessError;
use crate::geometry::SwarmState;
use crate::identification::{calibrate_population, PopulationCalibration, RawTrajectory};
use crate::rigidity::{generate_with_vacancies, lattice_framework, lattice_spectrum, rigidity_report, RANK_TOL};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stochastic::{simulate_population, PTWParams, Track};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationOutcome {
    pub calibration: PopulationCalibration,
    pub medians: Option<[f64; 9]>,
    /// `median / truth − 1` per parameter, for synthetic populations.
    pub relative_errors: Option<[f64; 9]>,
    pub rejection_rate: f64,
    #[serde(skip)]
    pub tracks: Vec<Track>,
}

/// Simulates `agents` copies of the ground-truth walker under the light
/// program, or takes `recorded` trajectories, and calibrates them.
pub fn run_population(sc: &PopulationScenario, recorded: Option<Vec<RawTrajectory>>) -> Result<PopulationOutcome, HarnessError> {
    let synthetic = recorded.is_none();
    let (tracks, trajectories) = match recorded {
        Some(t) => (Vec::new(), t),
        None => {
            let params = vec![sc.truth; sc.agents];
            let tracks = simulate_population(&params, &sc.light, &sc.population, sc.seed)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let raw = tracks.iter().map(RawTrajectory::from).collect();
            (tracks, raw)
        }
    };
    let calibration = calibrate_population(&trajectories, &sc.light, &sc.calibration)
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let medians = calibration.medians();
    let relative_errors = match (synthetic, medians) {
        (true, Some(m)) => Some(relative_errors(&m, &sc.truth)),
        _ => None,
    };
    Ok(PopulationOutcome { rejection_rate: calibration.rejection_rate(), calibration, medians, relative_errors, tracks })
}

pub fn relative_errors(medians: &[f64; 9], truth: &PTWParams) -> [f64; 9] {
    let t = truth.values();
    std::array::from_fn(|k| medians[k] / t[k] - 1.0)
}

/// Rank and spectrum of one lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeCheck {
    pub index: usize,
    pub seed: Option<u64>,
    pub n: usize,
    pub dim: usize,
    pub edges: usize,
    pub rank: usize,
    pub required_rank: usize,
    pub rigid: bool,
    pub near_zero: usize,
    pub negative: usize,
    pub positive: usize,
    pub max_kernel_residual: f64,
    pub lattice_like: bool,
    pub warning: Option<String>,
}

pub fn check_lattice(
    index: usize,
    seed: Option<u64>,
    state: &SwarmState,
    sc: &RigidityScenario,
) -> Result<LatticeCheck, HarnessError> {
    let d = state.dim;
    let fw = lattice_framework(d, state.positions.clone(), sc.link_length);
    let rt = |e: crate::rigidity::RigidityError| HarnessError::Runtime(e.to_string());
    let rep = rigidity_report(&fw, Some(sc.link_length), RANK_TOL, f64::INFINITY).map_err(rt)?;
    let spec = lattice_spectrum(&fw, &sc.f, 1e-6).map_err(rt)?;
    Ok(LatticeCheck {
        index,
        seed,
        n: fw.n(),
        dim: d,
        edges: fw.m(),
        rank: rep.rank,
        required_rank: rep.required_rank,
        rigid: rep.infinitesimally_rigid,
        near_zero: spec.near_zero,
        negative: spec.negative,
        positive: spec.positive,
        max_kernel_residual: spec.kernel_residuals.iter().copied().fold(0.0, f64::max),
        lattice_like: spec.is_lattice_like(d),
        warning: spec.warning.clone(),
    })
}

/// Checks `count` generated lattices, or the given state when present.
pub fn run_rigidity(sc: &RigidityScenario, state: Option<SwarmState>) -> Result<Vec<LatticeCheck>, HarnessError> {
    use rayon::prelude::*;
    sc.f.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(s) = state {
        return Ok(vec![check_lattice(0, None, &s, sc)?]);
    }
    if sc.dim != 2 && sc.dim != 3 {
        return Err(HarnessError::Config(format!("dim must be 2 or 3, got {}", sc.dim)));
    }
    (0..sc.count)
        .into_par_iter()
        .map(|k| {
            let seed = derive_seed(sc.seed, k as u64);
            let mut rng = rng_from_seed(seed);
            let x = generate_with_vacancies(sc.n, sc.dim, sc.link_length, sc.vacancies, &mut rng)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            check_lattice(k, Some(seed), &SwarmState::new(sc.dim, x), sc)
        })
        .collect()
}
