//! One seeded trial of a [`Scenario`].

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::config::{Event, Initial, Scenario};
use super::HarnessError;
use crate::control::{
    adapt_with_errors, checkerboard_spins, displacement_field, gravitational, radial_field, spears_distance,
    AdaptiveState, Controller, FieldScan, GainView,
};
use crate::dynamics::{advance_first_order, advance_second_order, DynamicsKind};
use crate::geometry::{centroid_of, sample_disk_initial, Point, SwarmParams, SwarmState};
use crate::metrics::{
    compactness_from_degrees, convergence_times, evaluate_trial, regularity_from_angles, settle_time,
    ConvergenceTimes, MetricSeries, SteadyStateDetector, TrialOutcome,
};
use crate::rigidity::{generate_with_vacancies, lattice_framework, perturb, potential, rigidity_report, RANK_TOL};
use crate::rng::{derive_seed, stream};

const INIT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const EVENT_STREAM: u64 = 2;

/// Time the swarm needed to settle again after an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub at: f64,
    pub kind: String,
    /// Time from the event until both metrics stay below their thresholds
    /// up to the next event (or the end of the run).
    pub settle: Option<f64>,
}

/// End-of-run analysis of a radial-law trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidSummary {
    /// Largest `| ‖r_k‖ − R |` over the links of the final configuration.
    pub e_final: f64,
    pub rank: usize,
    pub required_rank: usize,
    pub rigid: bool,
    /// Rigid and every link within the scenario's `lattice_tolerance` of `R`.
    pub rigid_lattice: bool,
    /// Smallest pairwise distance seen at any step.
    pub min_distance: f64,
    /// Largest `V(t+dt) − V(t)` over steps with an unchanged interaction set.
    pub max_lyapunov_increase: f64,
    pub lyapunov_steps_checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    /// Metrics at every integration step.
    pub series: MetricSeries,
    /// Lyapunov function per step (radial laws only).
    pub lyapunov: Vec<f64>,
    /// Smallest pairwise distance per step (radial laws only).
    pub min_distance: Vec<f64>,
    pub outcome: TrialOutcome,
    pub convergence: ConvergenceTimes,
    pub recoveries: Vec<Recovery>,
    pub rigid: Option<RigidSummary>,
    /// Largest `‖Σ_i u_i‖` over the run.
    pub max_control_sum: f64,
    pub initial: SwarmState,
    pub final_state: SwarmState,
    pub final_params: SwarmParams,
}

/// Seed of trial `index` of a campaign with base seed `seed`.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

/// Initial positions and, for lattice starts, the unperturbed centroid.
pub fn initial_state(scenario: &Scenario, trial_seed: u64) -> Result<(SwarmState, Point), HarnessError> {
    let p = &scenario.params;
    let mut rng = stream(trial_seed, INIT_STREAM);
    let (positions, centre) = match &scenario.initial {
        Initial::Lattice { delta, vacancies } => {
            let lattice = generate_with_vacancies(p.n, p.dim, p.link_length, *vacancies, &mut rng)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?;
            let c = centroid_of(&lattice);
            (perturb(&lattice, p.dim, *delta, &mut rng), c)
        }
        other => {
            let r = other.radius(p.n).expect("disk initial conditions have a radius");
            let x = sample_disk_initial(p.n, p.dim, r, &mut rng);
            let c = centroid_of(&x);
            (x, c)
        }
    };
    let mut state = SwarmState::new(p.dim, positions);
    if scenario.dynamics.kind == DynamicsKind::SecondOrder {
        state = state.with_zero_velocities();
    }
    Ok((state, centre))
}

enum Law {
    Static,
    Adaptive(AdaptiveState),
    Spears(Vec<bool>),
    Radial,
}

fn event_kind(e: &Event) -> &'static str {
    match e {
        Event::Remove { .. } => "remove",
        Event::SwitchLattice { .. } => "switch_lattice",
        Event::ResetGains { .. } => "reset_gains",
    }
}

struct PairTracker {
    within: Vec<bool>,
    primed: bool,
}

impl PairTracker {
    /// Returns `(V, min distance, interaction set unchanged)`.
    fn observe(
        &mut self,
        state: &SwarmState,
        centre: &Point,
        f: &crate::control::InteractionFn,
        params: &SwarmParams,
    ) -> Result<(f64, f64, bool), HarnessError> {
        let n = state.len();
        let pairs = n * n.saturating_sub(1) / 2;
        let resized = self.within.len() != pairs;
        if resized {
            self.within = vec![false; pairs];
        }
        let mut v = (centre - centroid_of(&state.positions)).norm_squared();
        let mut dmin = f64::INFINITY;
        let mut same = self.primed && !resized;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let z = state.dist(i, j);
                dmin = dmin.min(z);
                let inside = z <= params.sensing_radius;
                if inside {
                    v += potential(z, f, params.link_length).map_err(|e| HarnessError::Runtime(e.to_string()))?;
                }
                if self.within[k] != inside {
                    same = false;
                    self.within[k] = inside;
                }
                k += 1;
            }
        }
        self.primed = true;
        Ok((v, dmin, same))
    }
}

/// Runs trial `index` of `scenario`.
pub fn simulate(scenario: &Scenario, index: usize) -> Result<TrialResult, HarnessError> {
    let seed = trial_seed(scenario.seed, index);
    let (initial, centre) = initial_state(scenario, seed)?;
    let mut state = initial.clone();
    let mut params = scenario.params.clone();
    params.n = state.len();
    let dt = params.dt;
    let steps = scenario.steps();
    let th = scenario.thresholds;
    let mut noise_rng = stream(seed, NOISE_STREAM);
    let mut event_rng = stream(seed, EVENT_STREAM);

    let mut law = match &scenario.controller {
        Controller::Displacement { .. } => Law::Static,
        Controller::Adaptive { alpha, .. } => Law::Adaptive(AdaptiveState::new(state.len(), *alpha, th.e_theta)),
        Controller::Spears { .. } => Law::Spears(checkerboard_spins(state.len())),
        Controller::Radial { .. } => Law::Radial,
    };

    let mut events: Vec<(usize, &Event)> = scenario.events.iter().map(|e| (e.step(dt), e)).collect();
    events.sort_by_key(|&(k, _)| k);
    let last_event = events.last().map(|&(k, _)| k);
    let mut next_event = 0;

    let mut scan = FieldScan::default();
    let mut series = MetricSeries::default();
    let mut detector = SteadyStateDetector::new(&th, params.window_samples());
    let mut tracker = PairTracker { within: Vec::new(), primed: false };
    let mut lyapunov = Vec::new();
    let mut min_distance = Vec::new();
    let mut max_increase = f64::NEG_INFINITY;
    let mut checked = 0usize;
    let mut max_control_sum: f64 = 0.0;
    let mut event_steps = Vec::new();

    for k in 0..=steps {
        let t = k as f64 * dt;
        while next_event < events.len() && events[next_event].0 == k {
            let e = events[next_event].1;
            apply_event(e, &mut state, &mut params, &mut law, &mut event_rng);
            event_steps.push((series.len(), e));
            next_event += 1;
        }

        let field = match (&scenario.controller, &law) {
            (Controller::Displacement { gains, radial, noise }, _) => displacement_field(
                &state,
                &params,
                GainView::Uniform(*gains),
                radial,
                *noise,
                &mut noise_rng,
                &mut scan,
            ),
            (Controller::Adaptive { radial_gain, radial, noise, .. }, Law::Adaptive(a)) => displacement_field(
                &state,
                &params,
                GainView::PerAgent { radial: *radial_gain, normal: &a.normal_gains },
                radial,
                *noise,
                &mut noise_rng,
                &mut scan,
            ),
            (Controller::Spears { g, f_max, mass }, Law::Spears(spins)) => {
                let (r, l) = (params.link_length, params.lattice_degree);
                radial_field(
                    &state,
                    &params,
                    |i, j, z| gravitational(z, *g, *f_max, *mass, spears_distance(r, l, spins[i], spins[j])),
                    false,
                    &mut scan,
                )
            }
            (Controller::Radial { f }, _) => {
                radial_field(&state, &params, |_, _, z| f.value(z), f.diverges_at_zero(), &mut scan)
            }
            _ => unreachable!("controller state matches the law"),
        };
        field.map_err(|e| HarnessError::Runtime(format!("t = {t}: {e}")))?;

        let l = params.lattice_degree;
        let e_theta = regularity_from_angles(&scan.link_angles, l);
        let e_l = compactness_from_degrees(&scan.degrees, l);
        let gn = match &law {
            Law::Adaptive(a) => Some(a.mean()),
            _ => None,
        };
        let link_err = if scenario.is_rigid() { Some(scan.max_link_error.unwrap_or(0.0)) } else { None };
        series.push(t, e_theta, e_l, state.len(), link_err, gn);
        let sum: Point = scan.controls.iter().sum();
        max_control_sum = max_control_sum.max(sum.norm());

        if let Controller::Radial { f } = &scenario.controller {
            let (v, dmin, same) = tracker.observe(&state, &centre, f, &params)?;
            if same {
                let dv = v - lyapunov.last().copied().unwrap_or(v);
                max_increase = max_increase.max(dv);
                checked += 1;
            }
            lyapunov.push(v);
            min_distance.push(dmin);
        }

        let steady = detector.push(e_theta, e_l);
        if scenario.stop_at_steady_state && steady && last_event.is_none_or(|le| k >= le) {
            break;
        }
        if k == steps {
            break;
        }

        if let Law::Adaptive(a) = &mut law {
            adapt_with_errors(a, &scan.local_errors(l), dt);
        }
        let res = match scenario.dynamics.kind {
            DynamicsKind::FirstOrder => {
                advance_first_order(&mut state, &scan.controls, &scenario.dynamics, &params, &mut noise_rng)
            }
            DynamicsKind::SecondOrder => advance_second_order(&mut state, &scan.controls, &scenario.dynamics, &params),
        };
        res.map_err(|e| HarnessError::Runtime(format!("t = {t}: {e}")))?;
        if !state.is_finite() {
            return Err(HarnessError::Runtime(format!("t = {t}: non-finite state")));
        }
        state.t = (k + 1) as f64 * dt;
    }

    let outcome = evaluate_trial(&series, &th, params.window_samples()).expect("series has at least one sample");
    let convergence = convergence_times(&series, &th);
    let recoveries = recoveries(&series, &event_steps, &th);

    let rigid = if scenario.is_rigid() {
        let fw = lattice_framework(params.dim, state.positions.clone(), params.link_length);
        let rep = rigidity_report(&fw, Some(params.link_length), RANK_TOL, f64::INFINITY)
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        Some(RigidSummary {
            e_final: rep.link_error.unwrap_or(0.0),
            rank: rep.rank,
            required_rank: rep.required_rank,
            rigid: rep.infinitesimally_rigid,
            rigid_lattice: rep.infinitesimally_rigid && rep.link_error.unwrap_or(0.0) < scenario.lattice_tolerance,
            min_distance: min_distance.iter().copied().fold(f64::INFINITY, f64::min),
            max_lyapunov_increase: if checked > 0 { max_increase } else { 0.0 },
            lyapunov_steps_checked: checked,
        })
    } else {
        None
    };

    Ok(TrialResult {
        index,
        seed,
        series,
        lyapunov,
        min_distance,
        outcome,
        convergence,
        recoveries,
        rigid,
        max_control_sum,
        initial,
        final_state: state,
        final_params: params,
    })
}

fn apply_event(
    e: &Event,
    state: &mut SwarmState,
    params: &mut SwarmParams,
    law: &mut Law,
    rng: &mut crate::rng::SimRng,
) {
    match e {
        Event::Remove { fraction, .. } => {
            let n = state.len();
            let count = (fraction * n as f64).floor() as usize;
            let mut gone = sample(rng, n, count).into_vec();
            gone.sort_unstable();
            state.remove_agents(&gone);
            params.n = state.len();
            match law {
                Law::Adaptive(a) => drop_sorted(&mut a.normal_gains, &gone),
                Law::Spears(s) => drop_sorted(s, &gone),
                _ => {}
            }
        }
        Event::SwitchLattice { l, .. } => {
            params.lattice_degree = *l;
            if let Law::Adaptive(a) = law {
                a.reset();
            }
        }
        Event::ResetGains { .. } => {
            if let Law::Adaptive(a) = law {
                a.reset();
            }
        }
    }
}

fn drop_sorted<T>(v: &mut Vec<T>, gone: &[usize]) {
    let mut k = 0;
    v.retain(|_| {
        k += 1;
        gone.binary_search(&(k - 1)).is_err()
    });
}

fn recoveries(series: &MetricSeries, event_steps: &[(usize, &Event)], th: &crate::metrics::Thresholds) -> Vec<Recovery> {
    event_steps
        .iter()
        .enumerate()
        .map(|(m, &(start, e))| {
            let end = event_steps[m + 1..].iter().map(|&(s, _)| s).find(|&s| s > start).unwrap_or(series.len());
            let times = &series.times[start..end];
            let a = settle_time(times, &series.e_theta[start..end], th.e_theta);
            let b = settle_time(times, &series.e_l[start..end], th.e_l);
            let t0 = series.times[start];
            let settle = match (a, b) {
                (Some(a), Some(b)) => Some(a.max(b) - t0),
                _ => None,
            };
            Recovery { at: t0, kind: event_kind(e).to_string(), settle }
        })
        .collect()
}
