//! Swarm state, neighbourhoods, links and frameworks.
//!
//! Positions are stored as [`Point`] (a 3-vector); planar swarms keep the
//! third coordinate at exactly zero so every formula works for `dim == 2`
//! and `dim == 3` without branching.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid swarm parameters: {0}")]
    InvalidParams(String),
    #[error("agents {0} and {1} coincide")]
    CoincidentAgents(usize, usize),
    #[error("operation requires a planar swarm, got dimension {0}")]
    NotPlanar(usize),
    #[error("dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("malformed configuration file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serde adapter writing infinite values as the string `"inf"`, since JSON
/// has no literal for them.
pub mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "+inf" => Ok(f64::INFINITY),
                "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
            },
        }
    }
}

/// Geometric and dynamic constants shared by a swarm experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmParams {
    pub n: usize,
    pub dim: usize,
    /// Desired link length (m).
    pub link_length: f64,
    /// Lower edge of the adjacency band (m).
    pub min_link: f64,
    /// Upper edge of the adjacency band (m).
    pub max_link: f64,
    #[serde(with = "unbounded")]
    pub sensing_radius: f64,
    /// Maximum link length of rigid-lattice scenarios (m).
    pub rigid_link_max: f64,
    #[serde(with = "unbounded")]
    pub max_speed: f64,
    pub dt: f64,
    /// Number of neighbours of a lattice site: 4 (square) or 6 (triangular).
    pub lattice_degree: u32,
    /// Steady-state window (s).
    pub steady_window: f64,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            n: 100,
            dim: 2,
            link_length: 1.0,
            min_link: 0.6,
            max_link: 1.1,
            sensing_radius: f64::INFINITY,
            rigid_link_max: (1.0 + 3f64.sqrt()) / 2.0,
            max_speed: 5.0,
            dt: 0.01,
            lattice_degree: 4,
            steady_window: 10.0,
        }
    }
}

impl SwarmParams {
    /// Distance between the closest non-adjacent sites of a rigid lattice.
    pub fn next_distance(&self) -> f64 {
        match self.dim {
            2 => self.link_length * 3f64.sqrt(),
            _ => self.link_length * 2f64.sqrt(),
        }
    }

    /// Parameters of the rigid-lattice experiments: adjacency band `[0, R_a]`
    /// with `R_a` halfway between `R` and the next-neighbour distance.
    pub fn rigid(n: usize, dim: usize) -> Self {
        let mut p = Self { n, dim, min_link: 0.0, sensing_radius: 3.0, max_speed: f64::INFINITY, ..Self::default() };
        p.rigid_link_max = (p.link_length + p.next_distance()) / 2.0;
        p.max_link = p.rigid_link_max;
        p
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidParams(m.to_string()));
        if self.dim != 2 && self.dim != 3 {
            return Err(GeometryError::BadDimension(self.dim));
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive and finite");
        }
        if !(0.0 <= self.min_link && self.min_link <= self.link_length && self.link_length <= self.max_link) {
            return bad("expected 0 <= min_link <= link_length <= max_link");
        }
        if self.max_link > self.sensing_radius {
            return bad("max_link must not exceed sensing_radius");
        }
        if self.lattice_degree != 4 && self.lattice_degree != 6 {
            return bad("lattice_degree must be 4 or 6");
        }
        if !(self.max_speed > 0.0) {
            return bad("max_speed must be positive");
        }
        if !(self.steady_window > 0.0) {
            return bad("steady_window must be positive");
        }
        Ok(())
    }

    /// Extra checks for rigid-lattice scenarios: `R < R_a < R_next`.
    pub fn validate_rigid(&self) -> Result<(), GeometryError> {
        self.validate()?;
        let ra = self.rigid_link_max;
        if !(self.link_length < ra && ra < self.next_distance()) {
            return Err(GeometryError::InvalidParams(format!(
                "rigid_link_max {ra} must lie strictly between {} and {}",
                self.link_length,
                self.next_distance()
            )));
        }
        Ok(())
    }

    /// Number of samples in the steady-state window.
    pub fn window_samples(&self) -> usize {
        window_samples(self.steady_window, self.dt)
    }
}

/// `⌊T_w / dt⌋`, tolerant to the representation error of decimal steps.
pub fn window_samples(window: f64, dt: f64) -> usize {
    (window / dt + 1e-9).floor() as usize
}

/// Positions (and, for second-order dynamics, velocities) at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmState {
    pub t: f64,
    pub dim: usize,
    pub positions: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<Point>>,
}

impl SwarmState {
    pub fn new(dim: usize, positions: Vec<Point>) -> Self {
        Self { t: 0.0, dim, positions, velocities: None }
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Self {
        Self::new(2, points.iter().map(|p| Point::new(p[0], p[1], 0.0)).collect())
    }

    pub fn from_xyz(points: &[[f64; 3]]) -> Self {
        Self::new(3, points.iter().map(|p| Point::new(p[0], p[1], p[2])).collect())
    }

    pub fn with_zero_velocities(mut self) -> Self {
        self.velocities = Some(vec![Point::zeros(); self.positions.len()]);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `r_ij = x_i - x_j`.
    #[inline]
    pub fn rel(&self, i: usize, j: usize) -> Point {
        self.positions[i] - self.positions[j]
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        self.rel(i, j).norm()
    }

    pub fn is_finite(&self) -> bool {
        let ok = |v: &Point| v.iter().all(|c| c.is_finite());
        self.positions.iter().all(ok) && self.velocities.as_ref().is_none_or(|vs| vs.iter().all(ok))
    }

    /// Stacked configuration vector of length `dim * N`.
    pub fn configuration(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| p.iter().take(self.dim).copied().collect::<Vec<_>>()).collect()
    }

    pub fn translated(&self, v: &Point) -> Self {
        let mut s = self.clone();
        s.positions.iter_mut().for_each(|p| *p += v);
        s
    }

    /// Drops the agents whose indices are listed, keeping the others in order.
    pub fn remove_agents(&mut self, indices: &[usize]) {
        let mut keep = vec![true; self.len()];
        indices.iter().for_each(|&i| keep[i] = false);
        let filter = |v: &mut Vec<Point>| {
            let mut k = keep.iter();
            v.retain(|_| *k.next().unwrap());
        };
        filter(&mut self.positions);
        if let Some(v) = self.velocities.as_mut() {
            filter(v);
        }
    }
}

/// All `j != i` within the sensing radius.
pub fn interaction_set(state: &SwarmState, i: usize, sensing_radius: f64) -> Vec<usize> {
    (0..state.len()).filter(|&j| j != i && state.dist(i, j) <= sensing_radius).collect()
}

/// All `j != i` whose distance lies in the closed band `[min_link, max_link]`.
pub fn adjacency_set(state: &SwarmState, i: usize, min_link: f64, max_link: f64) -> Vec<usize> {
    (0..state.len())
        .filter(|&j| {
            if j == i {
                return false;
            }
            let d = state.dist(i, j);
            min_link <= d && d <= max_link
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

/// Directed links; `(i, j)` is present exactly when `(j, i)` is.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkSet {
    pub links: Vec<Link>,
}

impl LinkSet {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// One entry per unordered pair, `i < j`.
    pub fn undirected(&self) -> Vec<(usize, usize)> {
        self.links.iter().filter(|l| l.i < l.j).map(|l| (l.i, l.j)).collect()
    }

    /// Neighbour count of each of `n` agents.
    pub fn degrees(&self, n: usize) -> Vec<usize> {
        let mut deg = vec![0; n];
        self.links.iter().for_each(|l| deg[l.i] += 1);
        deg
    }
}

/// Links within the closed band `[min_link, max_link]`, ordered by `(i, j)`.
pub fn links_in_band(state: &SwarmState, min_link: f64, max_link: f64) -> LinkSet {
    let n = state.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = state.dist(i, j);
            if min_link <= d && d <= max_link {
                pairs.push((i, j, d));
            }
        }
    }
    let mut links: Vec<Link> = pairs
        .iter()
        .flat_map(|&(i, j, length)| [Link { i, j, length }, Link { i: j, j: i, length }])
        .collect();
    links.sort_by_key(|l| (l.i, l.j));
    LinkSet { links }
}

pub fn build_links(state: &SwarmState, params: &SwarmParams) -> LinkSet {
    links_in_band(state, params.min_link, params.max_link)
}

/// Angle of `r_ij` with the horizontal axis, in `[0, 2π)`.
pub fn pairwise_angle(state: &SwarmState, i: usize, j: usize) -> Result<f64, GeometryError> {
    if state.dim != 2 {
        return Err(GeometryError::NotPlanar(state.dim));
    }
    let r = state.rel(i, j);
    if r.x == 0.0 && r.y == 0.0 {
        return Err(GeometryError::CoincidentAgents(i, j));
    }
    Ok(wrap_angle(r.y.atan2(r.x)))
}

/// Absolute angle between `r_ij` and `r_hk`, in `[0, π]`.
pub fn pairwise_link_angle(
    state: &SwarmState,
    (i, j): (usize, usize),
    (h, k): (usize, usize),
) -> Result<f64, GeometryError> {
    if state.dim != 2 {
        return Err(GeometryError::NotPlanar(state.dim));
    }
    let a = state.rel(i, j);
    let b = state.rel(h, k);
    if a.norm() == 0.0 {
        return Err(GeometryError::CoincidentAgents(i, j));
    }
    if b.norm() == 0.0 {
        return Err(GeometryError::CoincidentAgents(h, k));
    }
    let cross = a.x * b.y - a.y * b.x;
    Ok(cross.abs().atan2(a.dot(&b)))
}

/// Maps any angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn centroid(state: &SwarmState) -> Point {
    centroid_of(&state.positions)
}

pub fn centroid_of(points: &[Point]) -> Point {
    points.iter().sum::<Point>() / points.len() as f64
}

/// `n` points uniform over the disk (`dim == 2`) or ball (`dim == 3`) of
/// radius `radius` centred at the origin, by inverse-CDF polar sampling.
pub fn sample_disk_initial<R: Rng + ?Sized>(n: usize, dim: usize, radius: f64, rng: &mut R) -> Vec<Point> {
    (0..n).map(|_| sample_in_ball(dim, radius, rng)).collect()
}

pub fn sample_in_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Point {
    if dim == 2 {
        let phi = rng.random_range(0.0..TAU);
        let rho = radius * rng.random::<f64>().sqrt();
        Point::new(rho * phi.cos(), rho * phi.sin(), 0.0)
    } else {
        let dir = loop {
            let v = Point::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        dir * radius * rng.random::<f64>().cbrt()
    }
}

/// True when every pairwise distance of `x` matches `y` within `tol`.
pub fn is_congruent(x: &[Point], y: &[Point], tol: f64) -> bool {
    if x.len() != y.len() {
        return false;
    }
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if ((x[i] - x[j]).norm() - (y[i] - y[j]).norm()).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// A graph bound to a configuration. Edges are stored once per unordered pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Framework {
    pub dim: usize,
    pub positions: Vec<Point>,
    pub edges: Vec<(usize, usize)>,
}

impl Framework {
    pub fn new(dim: usize, positions: Vec<Point>, edges: Vec<(usize, usize)>) -> Result<Self, GeometryError> {
        for i in 0..positions.len() {
            for j in i + 1..positions.len() {
                if (positions[i] - positions[j]).norm() == 0.0 {
                    return Err(GeometryError::CoincidentAgents(i, j));
                }
            }
        }
        Ok(Self { dim, positions, edges })
    }

    /// Swarm framework: links in the adjacency band `[min_link, max_link]`.
    pub fn of_state(state: &SwarmState, min_link: f64, max_link: f64) -> Result<Self, GeometryError> {
        let edges = links_in_band(state, min_link, max_link).undirected();
        Self::new(state.dim, state.positions.clone(), edges)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }
}

/// Polar angle helper used by lattice generation and tests.
pub fn rotate_planar(p: &Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    Point::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
}

pub const HALF_PI: f64 = PI / 2.0;

// ---- serialization ------------------------------------------------------

/// Writes one row per agent: `id,x,y[,z][,vx,vy[,vz]]`.
pub fn write_state_csv<W: Write>(state: &SwarmState, out: W) -> Result<(), GeometryError> {
    let mut w = csv::Writer::from_writer(out);
    let axes: &[&str] = if state.dim == 2 { &["x", "y"] } else { &["x", "y", "z"] };
    let mut header = vec!["id".to_string()];
    header.extend(axes.iter().map(|a| a.to_string()));
    if state.velocities.is_some() {
        header.extend(axes.iter().map(|a| format!("v{a}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for (id, p) in state.positions.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend((0..state.dim).map(|k| fmt_f64(p[k])));
        if let Some(v) = &state.velocities {
            row.extend((0..state.dim).map(|k| fmt_f64(v[id][k])));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_state_csv<R: Read>(input: R) -> Result<SwarmState, GeometryError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?.clone();
    let dim = if headers.iter().any(|h| h == "z") { 3 } else { 2 };
    let has_vel = headers.iter().any(|h| h == "vx");
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GeometryError::Parse(format!("missing column {name}")))
    };
    let axes = if dim == 2 { vec!["x", "y"] } else { vec!["x", "y", "z"] };
    let pos_cols: Vec<usize> = axes.iter().map(|a| col(a)).collect::<Result<_, _>>()?;
    let vel_cols: Vec<usize> = if has_vel {
        axes.iter().map(|a| col(&format!("v{a}"))).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64, GeometryError> {
            rec.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| GeometryError::Parse(format!("bad number in column {c}")))
        };
        let mut p = Point::zeros();
        for (k, &c) in pos_cols.iter().enumerate() {
            p[k] = parse(c)?;
        }
        positions.push(p);
        if has_vel {
            let mut v = Point::zeros();
            for (k, &c) in vel_cols.iter().enumerate() {
                v[k] = parse(c)?;
            }
            velocities.push(v);
        }
    }
    let mut s = SwarmState::new(dim, positions);
    if has_vel {
        s.velocities = Some(velocities);
    }
    Ok(s)
}

/// JSON snapshot embedding the parameters next to the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub params: SwarmParams,
    pub state: SwarmState,
}

fn csv_err(e: csv::Error) -> GeometryError {
    GeometryError::Parse(e.to_string())
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn line3() -> SwarmState {
        SwarmState::from_xy(&[[0.0, 0.0], [2.0, 0.0], [4.0, 0.0]])
    }

    #[test]
    fn interaction_set_examples() {
        let two = SwarmState::from_xy(&[[0.0, 0.0], [0.5, 0.0]]);
        assert_eq!(interaction_set(&two, 0, 3.0), vec![1]);
        assert_eq!(interaction_set(&two, 1, 3.0), vec![0]);
        let alone = SwarmState::from_xy(&[[1.0, 1.0]]);
        assert!(interaction_set(&alone, 0, 3.0).is_empty());

        // brute force on the collinear triple
        let s = line3();
        for i in 0..3 {
            let expected: Vec<usize> =
                (0..3).filter(|&j| j != i && ((i as f64 - j as f64) * 2.0).abs() <= 3.0).collect();
            assert_eq!(interaction_set(&s, i, 3.0), expected);
        }
        assert_eq!(interaction_set(&s, 1, 3.0), vec![0, 2]);
        assert_eq!(interaction_set(&s, 0, 3.0), vec![1]);
    }

    #[test]
    fn adjacency_band_is_closed() {
        let s = SwarmState::from_xy(&[[0.0, 0.0], [1.1, 0.0], [0.0, 0.3]]);
        assert_eq!(adjacency_set(&s, 0, 0.6, 1.1), vec![1]);
        let square = SwarmState::from_xy(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        for i in 0..4 {
            assert_eq!(adjacency_set(&square, i, 0.6, 1.1).len(), 2);
        }
    }

    #[test]
    fn links_of_small_configurations() {
        let h = 3f64.sqrt() / 2.0;
        let tri = SwarmState::from_xy(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        let params = SwarmParams::default();
        let links = build_links(&tri, &params);
        assert_eq!(links.len(), 6);
        for l in &links.links {
            assert!((l.length - 1.0).abs() < 1e-12);
        }
        let far = SwarmState::from_xy(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]]);
        assert!(build_links(&far, &params).is_empty());
        let pair = SwarmState::from_xy(&[[0.0, 0.0], [1.0, 0.0]]);
        let l = build_links(&pair, &params);
        assert_eq!(l.len(), 2);
        assert_eq!(l.links[0].length, 1.0);
    }

    #[test]
    fn angles() {
        let s = SwarmState::from_xy(&[[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]);
        assert_eq!(pairwise_angle(&s, 0, 1).unwrap(), 0.0);
        assert!((pairwise_link_angle(&s, (2, 1), (0, 1)).unwrap() - HALF_PI).abs() < 1e-15);
        let s2 = SwarmState::from_xy(&[[1.0, 1.0], [0.0, 0.0], [-1.0, 1.0]]);
        let got = pairwise_link_angle(&s2, (0, 1), (2, 1)).unwrap();
        let (a, b) = (s2.rel(0, 1), s2.rel(2, 1));
        let oracle = (a.dot(&b) / (a.norm() * b.norm())).acos();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - HALF_PI).abs() < 1e-12);
        let dup = SwarmState::from_xy(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(pairwise_angle(&dup, 0, 1), Err(GeometryError::CoincidentAgents(0, 1))));
        let down = SwarmState::from_xy(&[[0.0, -1.0], [0.0, 0.0]]);
        assert!((pairwise_angle(&down, 0, 1).unwrap() - 1.5 * PI).abs() < 1e-15);
    }

    #[test]
    fn centroid_examples() {
        let one = SwarmState::from_xy(&[[3.0, -2.0]]);
        assert_eq!(centroid(&one), Point::new(3.0, -2.0, 0.0));
        let two = SwarmState::from_xy(&[[0.0, 0.0], [2.0, 0.0]]);
        assert_eq!(centroid(&two), Point::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn disk_sampling_moments_and_bounds() {
        let mut rng = rng_from_seed(11);
        let pts = sample_disk_initial(100_000, 2, 2.0, &mut rng);
        assert!(pts.iter().all(|p| p.norm() <= 2.0 && p.z == 0.0));
        let mean = pts.iter().map(|p| p.norm()).sum::<f64>() / pts.len() as f64;
        assert!((mean / (2.0 * 2.0 / 3.0) - 1.0).abs() < 0.01, "mean radius {mean}");

        // Kolmogorov-Smirnov against F(ξ) = ξ²/r², α = 0.01
        let mut radii: Vec<f64> = pts.iter().map(|p| p.norm()).collect();
        radii.sort_by(f64::total_cmp);
        let n = radii.len() as f64;
        let d = radii
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let f = (x / 2.0).powi(2);
                (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");

        let again = sample_disk_initial(100_000, 2, 2.0, &mut rng_from_seed(11));
        assert_eq!(pts, again);

        let ball = sample_disk_initial(20_000, 3, 1.5, &mut rng);
        assert!(ball.iter().all(|p| p.norm() <= 1.5));
        // E|x| = 3r/4 for a uniform ball
        let m3 = ball.iter().map(|p| p.norm()).sum::<f64>() / ball.len() as f64;
        assert!((m3 / (0.75 * 1.5) - 1.0).abs() < 0.02);
    }

    #[test]
    fn congruence() {
        let x = vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.2, 0.0), Point::new(-0.4, 2.0, 0.0)];
        let rot: Vec<Point> = x.iter().map(|p| rotate_planar(p, 0.7) + Point::new(3.0, 1.0, 0.0)).collect();
        assert!(is_congruent(&x, &rot, 1e-9));
        let refl: Vec<Point> = x.iter().map(|p| Point::new(-p.x, p.y, 0.0)).collect();
        assert!(is_congruent(&x, &refl, 1e-12));
        let mut moved = x.clone();
        moved[1].x += 10.0 * 1e-6;
        assert!(!is_congruent(&x, &moved, 1e-6));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let s = SwarmState::from_xy(&[[0.1, 0.2], [1.0 / 3.0, -4.5]]).with_zero_velocities();
        let mut buf = Vec::new();
        write_state_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,x,y,vx,vy\n"));
        let back = read_state_csv(buf.as_slice()).unwrap();
        assert_eq!(back.positions, s.positions);
        let snap = Snapshot { params: SwarmParams::default(), state: s };
        let json = serde_json::to_string(&snap).unwrap();
        let again: Snapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(again, snap);
    }

    #[test]
    fn params_validation() {
        assert!(SwarmParams::default().validate().is_ok());
        assert!(SwarmParams::rigid(100, 2).validate_rigid().is_ok());
        assert!(SwarmParams::rigid(100, 3).validate_rigid().is_ok());
        let r2 = SwarmParams::rigid(10, 2).rigid_link_max;
        assert!((r2 - 1.366).abs() < 1e-3);
        let r3 = SwarmParams::rigid(10, 3).rigid_link_max;
        assert!((r3 - 1.207).abs() < 1e-3);
        let bad = SwarmParams { min_link: 1.2, ..SwarmParams::default() };
        assert!(bad.validate().is_err());
        let bad = SwarmParams { dim: 4, ..SwarmParams::default() };
        assert!(bad.validate().is_err());
        assert_eq!(SwarmParams::default().window_samples(), 1000);
    }

    fn random_state(seed: u64, n: usize) -> SwarmState {
        let mut rng = rng_from_seed(seed);
        SwarmState::new(2, sample_disk_initial(n, 2, 2.5, &mut rng))
    }

    #[test]
    fn adjacency_symmetry_and_subset() {
        for seed in 0..1000 {
            let s = random_state(seed, 12);
            for i in 0..s.len() {
                let a = adjacency_set(&s, i, 0.6, 1.1);
                let inter = interaction_set(&s, i, 1.5);
                for &j in &a {
                    assert!(adjacency_set(&s, j, 0.6, 1.1).contains(&i));
                    assert!(inter.contains(&j));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn links_invariant_under_relabeling(seed in 0u64..10_000, shift in 1usize..11) {
            let s = random_state(seed, 11);
            let n = s.len();
            let perm: Vec<usize> = (0..n).map(|k| (k + shift) % n).collect();
            let relabeled = SwarmState::new(2, perm.iter().map(|&k| s.positions[k]).collect());
            let mut original: Vec<(usize, usize)> = build_links(&s, &SwarmParams::default())
                .links.iter().map(|l| (l.i, l.j)).collect();
            let mut mapped: Vec<(usize, usize)> = build_links(&relabeled, &SwarmParams::default())
                .links.iter().map(|l| (perm[l.i], perm[l.j])).collect();
            original.sort();
            mapped.sort();
            prop_assert_eq!(original, mapped);
        }

        #[test]
        fn centroid_translation_equivariant(seed in 0u64..10_000, dx in -5.0..5.0f64, dy in -5.0..5.0f64) {
            let s = random_state(seed, 7);
            let v = Point::new(dx, dy, 0.0);
            let c = centroid(&s.translated(&v));
            prop_assert!((c - (centroid(&s) + v)).norm() < 1e-12);
        }
    }
}
