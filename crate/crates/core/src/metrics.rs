//! Regularity and compactness metrics, steady-state detection, convergence
//! times and the tuning cost.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::control::{scan_links, FieldScan};
use crate::geometry::{links_in_band, SwarmParams, SwarmState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub e_theta: f64,
    pub e_l: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { e_theta: 0.2, e_l: 0.3 }
    }
}

/// `e_θ` from the direction angles of all directed links.
///
/// Each pair term only depends on the angle difference modulo `2π/L`, so the
/// double sum equals `1/L` times the sum of pairwise circular distances of
/// `L·φ` on the unit circle, which a sort and prefix sums give in
/// `O(|E| log |E|)`. Self pairs and reciprocal pairs contribute zero.
pub fn regularity_from_angles(angles: &[f64], l: u32) -> f64 {
    let m = angles.len();
    if m <= 2 {
        return 0.0;
    }
    let lf = l as f64;
    let mut psi: Vec<f64> = angles
        .iter()
        .map(|&phi| {
            let w = (lf * phi).rem_euclid(TAU);
            if w >= TAU {
                0.0
            } else {
                w
            }
        })
        .collect();
    psi.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(0.0);
    for &p in &psi {
        prefix.push(prefix.last().unwrap() + p);
    }
    let mut total = 0.0;
    let mut k = 0;
    for i in 0..m {
        if k < i {
            k = i;
        }
        while k + 1 < m && psi[k + 1] - psi[i] <= PI {
            k += 1;
        }
        let near = (k - i) as f64;
        let far = (m - 1 - k) as f64;
        total += (prefix[k + 1] - prefix[i + 1]) - near * psi[i];
        total += far * (TAU + psi[i]) - (prefix[m] - prefix[k + 1]);
    }
    // ordered pairs count each unordered pair twice; the per-pair term is
    // the circular distance divided by L, and e_θ rescales by L/π
    let mf = m as f64;
    2.0 * total / (PI * (mf * mf - 2.0 * mf))
}

/// Regularity metric `e_θ ∈ [0, 1]` of a planar swarm (0 when `|E| ≤ 2`).
pub fn regularity(state: &SwarmState, params: &SwarmParams) -> f64 {
    let mut scan = FieldScan::default();
    scan_links(state, params, &mut scan);
    regularity_from_angles(&scan.link_angles, params.lattice_degree)
}

pub fn compactness_from_degrees(degrees: &[usize], l: u32) -> f64 {
    if degrees.is_empty() {
        return 0.0;
    }
    let lf = l as f64;
    degrees.iter().map(|&d| (d as f64 - lf).abs() / lf).sum::<f64>() / degrees.len() as f64
}

/// Compactness metric `e_L`.
pub fn compactness(state: &SwarmState, params: &SwarmParams) -> f64 {
    let links = links_in_band(state, params.min_link, params.max_link);
    compactness_from_degrees(&links.degrees(state.len()), params.lattice_degree)
}

/// `max_k | ‖r_k‖ − R |` over links, `None` when there are none.
pub fn link_length_error(state: &SwarmState, r: f64, min_link: f64, max_link: f64) -> Option<f64> {
    let links = links_in_band(state, min_link, max_link);
    links.links.iter().map(|l| (l.length - r).abs()).reduce(f64::max)
}

pub fn tuning_cost(e_theta_ss: f64, e_l_ss: f64, thresholds: &Thresholds) -> f64 {
    (e_theta_ss / thresholds.e_theta).powi(2) + (e_l_ss / thresholds.e_l).powi(2)
}

/// Time-indexed metrics of one trajectory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    pub e_theta: Vec<f64>,
    pub e_l: Vec<f64>,
    pub n: Vec<usize>,
    pub e: Vec<Option<f64>>,
    pub gn_mean: Vec<Option<f64>>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, e_theta: f64, e_l: f64, n: usize, e: Option<f64>, gn_mean: Option<f64>) {
        self.times.push(t);
        self.e_theta.push(e_theta);
        self.e_l.push(e_l);
        self.n.push(n);
        self.e.push(e);
        self.gn_mean.push(gn_mean);
    }

    /// Builds a series from `e_θ`, `e_L` samples at spacing `dt`.
    pub fn from_values(dt: f64, e_theta: &[f64], e_l: &[f64]) -> Self {
        let mut s = Self::default();
        for (k, (&a, &b)) in e_theta.iter().zip(e_l).enumerate() {
            s.push(k as f64 * dt, a, b, 0, None, None);
        }
        s
    }

    /// Writes `t,e_theta,e_L,N,e,Gn_mean`; absent values are empty cells.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| std::io::Error::other(e.to_string());
        w.write_record(["t", "e_theta", "e_L", "N", "e", "Gn_mean"]).map_err(io)?;
        let opt = |v: Option<f64>| v.map(crate::geometry::fmt_f64).unwrap_or_default();
        for k in 0..self.len() {
            w.write_record([
                crate::geometry::fmt_f64(self.times[k]),
                crate::geometry::fmt_f64(self.e_theta[k]),
                crate::geometry::fmt_f64(self.e_l[k]),
                self.n[k].to_string(),
                opt(self.e[k]),
                opt(self.gn_mean[k]),
            ])
            .map_err(io)?;
        }
        w.flush()
    }
}

/// Causal check that the newest sample differs from each of the previous
/// `window` samples by at most `tol`, in amortized O(1) per sample.
#[derive(Debug, Clone)]
pub struct WindowFlatness {
    window: usize,
    tol: f64,
    count: usize,
    // indices and values of the last `window` samples with monotone values
    maxq: VecDeque<(usize, f64)>,
    minq: VecDeque<(usize, f64)>,
}

impl WindowFlatness {
    pub fn new(window: usize, tol: f64) -> Self {
        Self { window, tol, count: 0, maxq: VecDeque::new(), minq: VecDeque::new() }
    }

    /// Feeds the next sample and reports whether it is at steady state.
    pub fn push(&mut self, x: f64) -> bool {
        let k = self.count;
        self.count += 1;
        while self.maxq.front().is_some_and(|&(i, _)| i + self.window < k) {
            self.maxq.pop_front();
        }
        while self.minq.front().is_some_and(|&(i, _)| i + self.window < k) {
            self.minq.pop_front();
        }
        let flat = k >= self.window
            && self.maxq.front().is_none_or(|&(_, m)| m - x <= self.tol)
            && self.minq.front().is_none_or(|&(_, m)| x - m <= self.tol);
        while self.maxq.back().is_some_and(|&(_, v)| v <= x) {
            self.maxq.pop_back();
        }
        self.maxq.push_back((k, x));
        while self.minq.back().is_some_and(|&(_, v)| v >= x) {
            self.minq.pop_back();
        }
        self.minq.push_back((k, x));
        flat
    }

    pub fn reset(&mut self) {
        self.count = 0;
        self.maxq.clear();
        self.minq.clear();
    }
}

/// Online detector for the joint steady state of `e_θ` and `e_L`.
#[derive(Debug, Clone)]
pub struct SteadyStateDetector {
    theta: WindowFlatness,
    l: WindowFlatness,
}

impl SteadyStateDetector {
    pub fn new(thresholds: &Thresholds, window: usize) -> Self {
        Self {
            theta: WindowFlatness::new(window, 0.1 * thresholds.e_theta),
            l: WindowFlatness::new(window, 0.1 * thresholds.e_l),
        }
    }

    pub fn push(&mut self, e_theta: f64, e_l: f64) -> bool {
        let a = self.theta.push(e_theta);
        let b = self.l.push(e_l);
        a && b
    }
}

/// Index of the first sample at which both metrics are at steady state.
pub fn steady_state_index(series: &MetricSeries, thresholds: &Thresholds, window: usize) -> Option<usize> {
    let mut det = SteadyStateDetector::new(thresholds, window);
    (0..series.len()).find(|&k| det.push(series.e_theta[k], series.e_l[k]))
}

/// Steady-state time `t_ss` for a series sampled every `dt`.
pub fn steady_state(series: &MetricSeries, thresholds: &Thresholds, t_w: f64, dt: f64) -> Option<f64> {
    let window = crate::geometry::window_samples(t_w, dt);
    steady_state_index(series, thresholds, window).map(|k| series.times[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTimes {
    pub t_theta: Option<f64>,
    pub t_l: Option<f64>,
    pub t: Option<f64>,
}

/// First time from which the series stays at or below `threshold`.
pub fn settle_time(times: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    match values.iter().rposition(|&v| v > threshold) {
        None => times.first().copied(),
        Some(k) => times.get(k + 1).copied(),
    }
}

pub fn convergence_times(series: &MetricSeries, thresholds: &Thresholds) -> ConvergenceTimes {
    let t_theta = settle_time(&series.times, &series.e_theta, thresholds.e_theta);
    let t_l = settle_time(&series.times, &series.e_l, thresholds.e_l);
    let t = match (t_theta, t_l) {
        (Some(a), Some(b)) => Some(a.max(b)),
        _ => None,
    };
    ConvergenceTimes { t_theta, t_l, t }
}

/// Steady-state values, success flag and cost of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub t_ss: Option<f64>,
    pub e_theta_ss: f64,
    pub e_l_ss: f64,
    pub success: bool,
    pub cost: f64,
}

/// Evaluates a trial. Without a steady state the last sample is used and
/// the trial is unsuccessful.
pub fn evaluate_trial(series: &MetricSeries, thresholds: &Thresholds, window: usize) -> Option<TrialOutcome> {
    if series.is_empty() {
        return None;
    }
    let k_ss = steady_state_index(series, thresholds, window);
    let k = k_ss.unwrap_or(series.len() - 1);
    let (a, b) = (series.e_theta[k], series.e_l[k]);
    Some(TrialOutcome {
        t_ss: k_ss.map(|k| series.times[k]),
        e_theta_ss: a,
        e_l_ss: b,
        success: k_ss.is_some() && a < thresholds.e_theta && b < thresholds.e_l,
        cost: tuning_cost(a, b, thresholds),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pairwise_link_angle, sample_disk_initial, Point};
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn brute_regularity(state: &SwarmState, params: &SwarmParams) -> f64 {
        let links = links_in_band(state, params.min_link, params.max_link);
        let m = links.len();
        if m <= 2 {
            return 0.0;
        }
        let step = 2.0 * PI / params.lattice_degree as f64;
        let mut sum = 0.0;
        for a in &links.links {
            for b in &links.links {
                let th = pairwise_link_angle(state, (a.i, a.j), (b.i, b.j)).unwrap();
                let best = (-(params.lattice_degree as i32)..=params.lattice_degree as i32)
                    .map(|q| (th - q as f64 * step).abs())
                    .fold(f64::INFINITY, f64::min);
                sum += best;
            }
        }
        let mf = m as f64;
        params.lattice_degree as f64 / PI * sum / (mf * mf - 2.0 * mf)
    }

    fn square_lattice(k: usize) -> SwarmState {
        let mut pts = Vec::new();
        for i in 0..k {
            for j in 0..k {
                pts.push([i as f64, j as f64]);
            }
        }
        SwarmState::from_xy(&pts)
    }

    fn triangular_lattice(k: usize) -> SwarmState {
        let h = 3f64.sqrt() / 2.0;
        let mut pts = Vec::new();
        for j in 0..k {
            for i in 0..k {
                pts.push([i as f64 + 0.5 * (j % 2) as f64, j as f64 * h]);
            }
        }
        SwarmState::from_xy(&pts)
    }

    #[test]
    fn regularity_examples() {
        let p4 = SwarmParams { lattice_degree: 4, ..SwarmParams::default() };
        assert!(regularity(&square_lattice(6), &p4) < 1e-12);
        let s = SwarmState::from_xy(&[[0.0, 0.0], [1.0, 0.0], [(PI / 4.0).cos(), (PI / 4.0).sin()]]);
        assert_abs_diff_eq!(regularity(&s, &p4), brute_regularity(&s, &p4), epsilon = 1e-12);

        let mut acc = 0.0;
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let scatter = SwarmState::new(2, sample_disk_initial(100, 2, 5.0, &mut rng));
            acc += regularity(&scatter, &p4);
        }
        let mean = acc / 20.0;
        assert!((mean - 0.5).abs() < 0.1, "random scatter gives {mean}");
    }

    #[test]
    fn regularity_matches_brute_force() {
        for seed in 0..100 {
            let mut rng = rng_from_seed(seed);
            let n = 4 + (seed % 5) as usize;
            let s = SwarmState::new(2, sample_disk_initial(n, 2, 1.0, &mut rng));
            for l in [4, 6] {
                let p = SwarmParams { lattice_degree: l, ..SwarmParams::default() };
                assert_abs_diff_eq!(regularity(&s, &p), brute_regularity(&s, &p), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn compactness_examples() {
        let p6 = SwarmParams { lattice_degree: 6, ..SwarmParams::default() };
        let sparse = SwarmState::from_xy(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]);
        assert_eq!(compactness(&sparse, &p6), 1.0);
        let n = 12;
        let clique: Vec<[f64; 2]> =
            (0..n).map(|k| [0.3 * (k as f64 * TAU / n as f64).cos(), 0.3 * (k as f64 * TAU / n as f64).sin()]).collect();
        let p = SwarmParams { lattice_degree: 4, min_link: 0.0, ..SwarmParams::default() };
        assert_abs_diff_eq!(compactness(&SwarmState::from_xy(&clique), &p), (n as f64 - 1.0 - 4.0) / 4.0, epsilon = 1e-12);
        let tri = triangular_lattice(7);
        let links = links_in_band(&tri, 0.6, 1.1);
        assert_eq!(links.degrees(tri.len())[3 * 7 + 3], 6);
    }

    #[test]
    fn steady_state_examples() {
        let dt = 0.01;
        let th = Thresholds::default();
        let n = 3000;
        let flat = MetricSeries::from_values(dt, &vec![0.1; n], &vec![0.1; n]);
        assert_abs_diff_eq!(steady_state(&flat, &th, 10.0, dt).unwrap(), 10.0, epsilon = 1e-9);

        let n2 = 8000;
        let stepped: Vec<f64> = (0..n2).map(|k| if k < 5000 { 0.6 - k as f64 * 1e-4 } else { 0.1 }).collect();
        let s = MetricSeries::from_values(dt, &stepped, &vec![0.0; n2]);
        // oracle: the first index whose trailing window lies entirely after the step
        let w = 1000;
        let oracle = (w..n2).find(|&k| (1..=w).all(|j| (stepped[k] - stepped[k - j]).abs() <= 0.02)).unwrap();
        assert!(oracle > 5000 && oracle <= 6000);
        assert_abs_diff_eq!(steady_state(&s, &th, 10.0, dt).unwrap(), oracle as f64 * dt, epsilon = 1e-9);

        let osc: Vec<f64> = (0..n).map(|k| 0.1 + 0.1 * (k as f64 * 0.05).sin()).collect();
        let s = MetricSeries::from_values(dt, &osc, &vec![0.0; n]);
        assert!(steady_state(&s, &th, 10.0, dt).is_none());
        let short = MetricSeries::from_values(dt, &[0.1; 10], &[0.1; 10]);
        assert!(steady_state(&short, &th, 10.0, dt).is_none());
    }

    #[test]
    fn convergence_examples() {
        let th = Thresholds::default();
        let s = MetricSeries::from_values(1.0, &[0.1; 20], &[0.1; 20]);
        assert_eq!(convergence_times(&s, &th).t, Some(0.0));
        let mut e = vec![0.5; 20];
        for v in e.iter_mut().take(10).skip(5) {
            *v = 0.1;
        }
        e[10] = 0.3;
        e[11] = 0.3;
        for v in e.iter_mut().skip(12) {
            *v = 0.1;
        }
        let s = MetricSeries::from_values(1.0, &e, &[0.0; 20]);
        let ct = convergence_times(&s, &th);
        assert_eq!(ct.t_theta, Some(12.0));
        assert_eq!(ct.t_l, Some(0.0));
        assert_eq!(ct.t, Some(12.0));
        let never = MetricSeries::from_values(1.0, &[0.9; 5], &[0.1; 5]);
        assert_eq!(convergence_times(&never, &th).t, None);
    }

    #[test]
    fn cost_and_link_error_examples() {
        let th = Thresholds::default();
        assert_abs_diff_eq!(tuning_cost(0.2, 0.3, &th), 2.0, epsilon = 1e-15);
        assert_eq!(tuning_cost(0.0, 0.0, &th), 0.0);
        assert_abs_diff_eq!(tuning_cost(0.1, 0.15, &th), 0.5, epsilon = 1e-15);

        let tri = triangular_lattice(4);
        assert!(link_length_error(&tri, 1.0, 0.0, 1.366).unwrap() < 1e-12);
        let pair = SwarmState::from_xy(&[[0.0, 0.0], [1.3, 0.0]]);
        assert_abs_diff_eq!(link_length_error(&pair, 1.0, 0.0, 1.366).unwrap(), 0.3, epsilon = 1e-12);
        let none = SwarmState::from_xy(&[[0.0, 0.0], [3.0, 0.0]]);
        assert_eq!(link_length_error(&none, 1.0, 0.0, 1.366), None);
    }

    #[test]
    fn outcome_uses_final_sample_without_steady_state() {
        let th = Thresholds::default();
        let osc: Vec<f64> = (0..3000).map(|k| 0.3 + 0.1 * (k as f64 * 0.05).sin()).collect();
        let s = MetricSeries::from_values(0.01, &osc, &vec![0.05; 3000]);
        let out = evaluate_trial(&s, &th, 1000).unwrap();
        assert!(!out.success);
        assert_eq!(out.e_theta_ss, *osc.last().unwrap());
    }

    proptest! {
        #[test]
        fn regularity_invariant_under_lattice_rotations(seed in 0u64..500, k in 0i32..6, dx in -3.0..3.0f64) {
            let mut rng = rng_from_seed(seed);
            let s = SwarmState::new(2, sample_disk_initial(15, 2, 1.5, &mut rng));
            let p = SwarmParams { lattice_degree: 6, ..SwarmParams::default() };
            let rot = k as f64 * PI / 3.0;
            let moved = SwarmState::new(2, s.positions.iter()
                .map(|x| crate::geometry::rotate_planar(x, rot) + Point::new(dx, -dx, 0.0)).collect());
            prop_assert!((regularity(&s, &p) - regularity(&moved, &p)).abs() < 1e-9);
            prop_assert!((compactness(&s, &p) - compactness(&moved, &p)).abs() < 1e-12);
        }

        #[test]
        fn flatness_matches_naive_window(values in prop::collection::vec(0.0..1.0f64, 1..60), w in 1usize..8) {
            let tol = 0.3;
            let mut f = WindowFlatness::new(w, tol);
            for k in 0..values.len() {
                let naive = k >= w && (1..=w).all(|j| (values[k] - values[k - j]).abs() <= tol);
                prop_assert_eq!(f.push(values[k]), naive);
            }
        }

        #[test]
        fn metric_ranges(seed in 0u64..500) {
            let mut rng = rng_from_seed(seed);
            let s = SwarmState::new(2, sample_disk_initial(20, 2, 2.0, &mut rng));
            let p = SwarmParams { lattice_degree: 4, ..SwarmParams::default() };
            let e = regularity(&s, &p);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&e));
            let c = compactness(&s, &p);
            prop_assert!((0.0..=(20.0 - 1.0 - 4.0) / 4.0 + 1e-12).contains(&c));
        }
    }
}
