//! Seeded multi-trial campaigns, gain grids and parameter sweeps.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{from_document, set_path, Expectations, Scenario};
use super::simulate::{simulate, trial_seed, TrialResult};
use super::HarnessError;
use crate::control::{Controller, Gains};

/// One row of the per-trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    pub t_ss: Option<f64>,
    pub e_theta_ss: f64,
    pub e_l_ss: f64,
    /// Convergence time `T = max(T_θ, T_L)`.
    pub convergence: Option<f64>,
    pub success: bool,
    pub cost: f64,
    pub e_final: Option<f64>,
    pub rigid: Option<bool>,
    pub rigid_lattice: Option<bool>,
    /// Settling time after each event, `None` when the metrics never settled.
    pub recoveries: Vec<Option<f64>>,
    pub n_final: usize,
    pub t_end: f64,
}

impl TrialSummary {
    pub fn of(r: &TrialResult) -> Self {
        Self {
            index: r.index,
            seed: r.seed,
            t_ss: r.outcome.t_ss,
            e_theta_ss: r.outcome.e_theta_ss,
            e_l_ss: r.outcome.e_l_ss,
            convergence: r.convergence.t,
            success: r.outcome.success,
            cost: r.outcome.cost,
            e_final: r.rigid.as_ref().map(|s| s.e_final),
            rigid: r.rigid.as_ref().map(|s| s.rigid),
            rigid_lattice: r.rigid.as_ref().map(|s| s.rigid_lattice),
            recoveries: r.recoveries.iter().map(|x| x.settle).collect(),
            n_final: r.final_state.len(),
            t_end: *r.series.times.last().unwrap_or(&0.0),
        }
    }

    /// True when the metrics settled after every event.
    pub fn recovered(&self) -> bool {
        self.recoveries.iter().all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    /// Mean, min and max in input order; `None` for an empty input.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0usize;
        let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        (n > 0).then(|| Stat { mean: sum / n as f64, min, max })
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials: usize,
    pub success_rate: f64,
    pub cost: Stat,
    pub e_theta_ss: Stat,
    pub e_l_ss: Stat,
    /// Fraction of trials with a defined convergence time.
    pub converged_rate: f64,
    pub convergence: Option<Stat>,
    pub convergence_median: Option<f64>,
    pub e_final: Option<Stat>,
    /// Fraction of trials ending infinitesimally rigid.
    pub rigid_rate: Option<f64>,
    /// Fraction of trials ending at a rigid lattice.
    pub rho: Option<f64>,
    /// Fraction of trials that settled after every event.
    pub recovery_rate: Option<f64>,
}

impl Aggregate {
    pub fn of(rows: &[TrialSummary]) -> Self {
        let m = rows.len() as f64;
        let frac = |k: usize| k as f64 / m;
        let conv: Vec<f64> = rows.iter().filter_map(|r| r.convergence).collect();
        let has_rigid = rows.iter().any(|r| r.rigid.is_some());
        let has_events = rows.iter().any(|r| !r.recoveries.is_empty());
        Self {
            trials: rows.len(),
            success_rate: frac(rows.iter().filter(|r| r.success).count()),
            cost: Stat::of(rows.iter().map(|r| r.cost)).expect("at least one trial"),
            e_theta_ss: Stat::of(rows.iter().map(|r| r.e_theta_ss)).expect("at least one trial"),
            e_l_ss: Stat::of(rows.iter().map(|r| r.e_l_ss)).expect("at least one trial"),
            converged_rate: frac(conv.len()),
            convergence: Stat::of(conv.iter().copied()),
            convergence_median: median(&conv),
            e_final: Stat::of(rows.iter().filter_map(|r| r.e_final)),
            rigid_rate: has_rigid.then(|| frac(rows.iter().filter(|r| r.rigid == Some(true)).count())),
            rho: has_rigid.then(|| frac(rows.iter().filter(|r| r.rigid_lattice == Some(true)).count())),
            recovery_rate: has_events.then(|| frac(rows.iter().filter(|r| r.recovered()).count())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub name: String,
    pub seed: u64,
    pub trials: Vec<TrialSummary>,
    pub aggregate: Aggregate,
}

impl CampaignResult {
    pub fn from_rows(name: &str, seed: u64, trials: Vec<TrialSummary>) -> Self {
        let aggregate = Aggregate::of(&trials);
        Self { name: name.to_string(), seed, trials, aggregate }
    }
}

impl Expectations {
    /// Human-readable list of the unmet expectations.
    pub fn failures(&self, a: &Aggregate) -> Vec<String> {
        let mut out = Vec::new();
        let mut at_least = |what: &str, want: Option<f64>, got: Option<f64>| {
            if let Some(w) = want {
                match got {
                    Some(g) if g >= w => {}
                    g => out.push(format!("{what} {} < {w}", g.map_or("n/a".into(), |g| g.to_string()))),
                }
            }
        };
        at_least("success rate", self.min_success_rate, Some(a.success_rate));
        at_least("recovery rate", self.min_recovery_rate, a.recovery_rate);
        at_least("rigid rate", self.min_rigid_rate, a.rigid_rate);
        at_least("rho", self.min_rho, a.rho);
        let mut at_most = |what: &str, want: Option<f64>, got: Option<f64>| {
            if let Some(w) = want {
                match got {
                    Some(g) if g <= w => {}
                    g => out.push(format!("{what} {} > {w}", g.map_or("n/a".into(), |g| g.to_string()))),
                }
            }
        };
        at_most("median convergence time", self.max_median_convergence, a.convergence_median);
        at_most("max e_final", self.max_e_final, a.e_final.map(|s| s.max));
        at_most("rho", self.max_rho, a.rho);
        out
    }
}

/// A campaign together with the full trajectories of its trials.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub result: CampaignResult,
    pub runs: Vec<TrialResult>,
}

fn guarded(scenario: &Scenario, index: usize) -> Result<TrialResult, HarnessError> {
    match catch_unwind(AssertUnwindSafe(|| simulate(scenario, index))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(HarnessError::Trial { index, seed: trial_seed(scenario.seed, index), message: e.to_string() }),
        Err(p) => {
            let message = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(HarnessError::Trial { index, seed: trial_seed(scenario.seed, index), message })
        }
    }
}

/// Runs trials `0..m` on the current rayon pool, keeping every trajectory.
pub fn run_trials(scenario: &Scenario, m: usize) -> Result<Campaign, HarnessError> {
    if m == 0 {
        return Err(HarnessError::Config("trial count must be at least 1".into()));
    }
    scenario.validate()?;
    let runs: Vec<TrialResult> = (0..m).into_par_iter().map(|k| guarded(scenario, k)).collect::<Result<_, _>>()?;
    let rows = runs.iter().map(TrialSummary::of).collect();
    Ok(Campaign { result: CampaignResult::from_rows(&scenario.name, scenario.seed, rows), runs })
}

/// As [`run_trials`], dropping the trajectories as soon as each trial is
/// summarised.
pub fn run_summaries(scenario: &Scenario, m: usize) -> Result<CampaignResult, HarnessError> {
    if m == 0 {
        return Err(HarnessError::Config("trial count must be at least 1".into()));
    }
    scenario.validate()?;
    let rows: Vec<TrialSummary> =
        (0..m).into_par_iter().map(|k| guarded(scenario, k).map(|r| TrialSummary::of(&r))).collect::<Result<_, _>>()?;
    Ok(CampaignResult::from_rows(&scenario.name, scenario.seed, rows))
}

/// Mean cost per cell of a two-axis grid with its argmin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub radial: Vec<f64>,
    pub normal: Vec<f64>,
    /// `cost[i][j]` for `radial[i]`, `normal[j]`.
    pub cost: Vec<Vec<f64>>,
    pub success_rate: Vec<Vec<f64>>,
    pub argmin: (usize, usize),
    pub min_cost: f64,
}

impl GridResult {
    /// Cells with mean cost at most 1.
    pub fn feasible(&self) -> Vec<Vec<bool>> {
        self.cost.iter().map(|row| row.iter().map(|&c| c <= 1.0).collect()).collect()
    }

    pub fn best_gains(&self) -> Gains {
        Gains::new(self.radial[self.argmin.0], self.normal[self.argmin.1])
    }
}

/// Row-major argmin, first cell on ties, NaN ranked last.
pub fn argmin(grid: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for (i, row) in grid.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let c = if c.is_nan() { f64::INFINITY } else { c };
            if best.is_none_or(|(_, b)| c < b) {
                best = Some(((i, j), c));
            }
        }
    }
    best.map(|(ij, _)| ij)
}

/// Evaluates `f` on every cell of a `rows × cols` grid in parallel.
pub fn evaluate_grid<T, F>(rows: usize, cols: usize, f: F) -> Result<Vec<Vec<T>>, HarnessError>
where
    T: Send,
    F: Fn(usize, usize) -> Result<T, HarnessError> + Sync,
{
    let flat: Vec<T> = (0..rows * cols).into_par_iter().map(|c| f(c / cols, c % cols)).collect::<Result<_, _>>()?;
    let mut it = flat.into_iter();
    Ok((0..rows).map(|_| it.by_ref().take(cols).collect()).collect())
}

/// Mean tuning cost over `m` trials for every gain pair of the grid. All
/// cells share the same trial seeds.
pub fn grid_search(template: &Scenario, radial: &[f64], normal: &[f64], m: usize) -> Result<GridResult, HarnessError> {
    if radial.is_empty() || normal.is_empty() {
        return Err(HarnessError::Config("gain grid must be nonempty".into()));
    }
    let Controller::Displacement { radial: f, noise, .. } = &template.controller else {
        return Err(HarnessError::Config("grid search needs the static displacement law".into()));
    };
    let cells = evaluate_grid(radial.len(), normal.len(), |i, j| {
        let mut s = template.clone();
        s.controller = Controller::Displacement { gains: Gains::new(radial[i], normal[j]), radial: f.clone(), noise: *noise };
        let c = run_summaries(&s, m)?;
        Ok((c.aggregate.cost.mean, c.aggregate.success_rate))
    })?;
    let cost: Vec<Vec<f64>> = cells.iter().map(|r| r.iter().map(|c| c.0).collect()).collect();
    let success_rate = cells.iter().map(|r| r.iter().map(|c| c.1).collect()).collect();
    let am = argmin(&cost).expect("nonempty grid");
    Ok(GridResult {
        radial: radial.to_vec(),
        normal: normal.to_vec(),
        min_cost: cost[am.0][am.1],
        cost,
        success_rate,
        argmin: am,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: toml::Value,
    pub campaign: CampaignResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub path: String,
    pub points: Vec<SweepPoint>,
}

/// Builds the scenario obtained by setting `path` to each value.
pub fn sweep_scenarios(template: &toml::Table, path: &str, values: &[toml::Value]) -> Result<Vec<Scenario>, HarnessError> {
    values
        .iter()
        .map(|v| {
            let mut doc = template.clone();
            set_path(&mut doc, path, v.clone())?;
            let s: Scenario = from_document(&doc).map_err(|e| HarnessError::Config(format!("{path} = {v}: {e}")))?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// One campaign of `m` trials per value of the parameter at `path`.
pub fn sweep(template: &toml::Table, path: &str, values: &[toml::Value], m: usize) -> Result<SweepResult, HarnessError> {
    let scenarios = sweep_scenarios(template, path, values)?;
    let points = scenarios
        .iter()
        .zip(values)
        .map(|(s, v)| Ok(SweepPoint { value: v.clone(), campaign: run_summaries(s, m)? }))
        .collect::<Result<_, HarnessError>>()?;
    Ok(SweepResult { path: path.to_string(), points })
}
