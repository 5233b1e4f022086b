//! Graph rigidity, rigid-lattice generation, Lyapunov diagnostics and the
//! Jacobian spectrum of the radial law around a lattice.

use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, UnitQuaternion, Vector4};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{lj_saturation_knee, InteractionFn};
use crate::geometry::{centroid_of, sample_in_ball, Framework, Point, SwarmState};

/// Relative singular-value cutoff for numerical rank.
pub const RANK_TOL: f64 = 1e-8;
/// Relative eigenvalue band counted as zero.
pub const ZERO_BAND: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RigidityError {
    #[error("framework has {n} vertices, fewer than the dimension {d}")]
    TooFewVertices { n: usize, d: usize },
    #[error("edge ({0}, {1}) joins coincident vertices")]
    CoincidentEndpoints(usize, usize),
    #[error("quadrature did not converge on [{a}, {b}]")]
    Quadrature { a: f64, b: f64 },
    #[error("potential undefined at distance {0}")]
    PotentialDomain(f64),
    #[error("cannot generate a lattice: {0}")]
    Generation(String),
}

/// `N × m` incidence matrix; edge `(i, j)` starts at `i` (+1) and ends at `j` (−1).
pub fn incidence_matrix(framework: &Framework) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(framework.n(), framework.m());
    for (e, &(i, j)) in framework.edges.iter().enumerate() {
        b[(i, e)] = 1.0;
        b[(j, e)] = -1.0;
    }
    b
}

/// `m × dN` rigidity matrix: row `e = (i, j)` holds `p_j − p_i` under the
/// columns of `i` and `p_i − p_j` under those of `j`.
pub fn rigidity_matrix(framework: &Framework) -> Result<DMatrix<f64>, RigidityError> {
    let d = framework.dim;
    let mut m = DMatrix::zeros(framework.m(), d * framework.n());
    for (e, &(i, j)) in framework.edges.iter().enumerate() {
        let diff = framework.positions[j] - framework.positions[i];
        if diff.norm() == 0.0 {
            return Err(RigidityError::CoincidentEndpoints(i, j));
        }
        for k in 0..d {
            m[(e, d * i + k)] = diff[k];
            m[(e, d * j + k)] = -diff[k];
        }
    }
    Ok(m)
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub rank: usize,
    pub required_rank: usize,
    pub infinitesimally_rigid: bool,
    /// Largest deviation of a link length from the target, if any link exists.
    pub link_error: Option<f64>,
    pub is_rigid_lattice: bool,
}

pub fn required_rank(n: usize, d: usize) -> usize {
    (d * n).saturating_sub(d * (d + 1) / 2)
}

/// Rank test `rank(M) = dN − d(d+1)/2`.
pub fn is_infinitesimally_rigid(framework: &Framework, rel_tol: f64) -> Result<(bool, RigidityReport), RigidityError> {
    let report = rigidity_report(framework, None, rel_tol, 0.0)?;
    Ok((report.infinitesimally_rigid, report))
}

/// Full report; with `link_length = Some(R)` also checks that every link
/// has length `R` within `length_tol`.
pub fn rigidity_report(
    framework: &Framework,
    link_length: Option<f64>,
    rel_tol: f64,
    length_tol: f64,
) -> Result<RigidityReport, RigidityError> {
    let (n, d) = (framework.n(), framework.dim);
    if n < d {
        return Err(RigidityError::TooFewVertices { n, d });
    }
    let m = rigidity_matrix(framework)?;
    let rank = numerical_rank(&m, rel_tol);
    let required = required_rank(n, d);
    let rigid = rank == required;
    let link_error = link_length.and_then(|r| {
        framework
            .edges
            .iter()
            .map(|&(i, j)| ((framework.positions[i] - framework.positions[j]).norm() - r).abs())
            .reduce(f64::max)
    });
    let is_rigid_lattice = rigid && link_error.is_some_and(|e| e <= length_tol);
    Ok(RigidityReport { rank, required_rank: required, infinitesimally_rigid: rigid, link_error, is_rigid_lattice })
}

// ---- lattice generation -------------------------------------------------

type Site = [i32; 3];

fn neighbour_offsets(d: usize) -> Vec<Site> {
    if d == 2 {
        vec![[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [1, -1, 0], [-1, 1, 0]]
    } else {
        let mut v = Vec::new();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            for sa in [-1, 1] {
                for sb in [-1, 1] {
                    let mut s = [0; 3];
                    s[a] = sa;
                    s[b] = sb;
                    v.push(s);
                }
            }
        }
        v
    }
}

fn site_position(s: &Site, d: usize, r: f64) -> Point {
    if d == 2 {
        Point::new(r * (s[0] as f64 + 0.5 * s[1] as f64), r * 3f64.sqrt() / 2.0 * s[1] as f64, 0.0)
    } else {
        Point::new(s[0] as f64, s[1] as f64, s[2] as f64) * (r / 2f64.sqrt())
    }
}

fn add(a: &Site, b: &Site) -> Site {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// True when the directions to the occupied neighbours span `R^d`.
fn spans(dirs: &[Point], d: usize) -> bool {
    if dirs.len() < d {
        return false;
    }
    if d == 2 {
        dirs.iter().enumerate().any(|(a, u)| dirs[a + 1..].iter().any(|v| (u.x * v.y - u.y * v.x).abs() > 1e-9))
    } else {
        for a in 0..dirs.len() {
            for b in a + 1..dirs.len() {
                let c = dirs[a].cross(&dirs[b]);
                if dirs[b + 1..].iter().any(|w| c.dot(w).abs() > 1e-9) {
                    return true;
                }
            }
        }
        false
    }
}

fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix3<f64> {
    if d == 2 {
        let a = rng.random_range(0.0..TAU);
        let (s, c) = a.sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    } else {
        let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q)).to_rotation_matrix().into_inner()
    }
}

/// Random rigid lattice of `n` agents with spacing `r`: random accretion on
/// the triangular (`d = 2`) or face-centred cubic (`d = 3`) grid, starting
/// from a triangle or tetrahedron. A site joins only when its occupied
/// neighbours span `R^d`, which keeps every intermediate patch
/// infinitesimally rigid. The result is centred and randomly rotated.
pub fn generate_rigid_lattice<R: Rng + ?Sized>(n: usize, d: usize, r: f64, rng: &mut R) -> Result<Vec<Point>, RigidityError> {
    generate_with_vacancies(n, d, r, 0, rng)
}

/// As [`generate_rigid_lattice`], then knocks out `vacancies` random sites
/// (from a patch of `n + vacancies`) as long as rigidity is preserved.
pub fn generate_with_vacancies<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    r: f64,
    vacancies: usize,
    rng: &mut R,
) -> Result<Vec<Point>, RigidityError> {
    if d != 2 && d != 3 {
        return Err(RigidityError::Generation(format!("dimension {d}")));
    }
    if n < d + 1 {
        return Err(RigidityError::Generation(format!("need at least {} agents", d + 1)));
    }
    let offsets = neighbour_offsets(d);
    let total = n + vacancies;
    // In the FCC grid no site touches three vertices of a lone tetrahedron,
    // so larger patches grow from an octahedron and five sites cannot be rigid.
    let seed: Vec<Site> = match (d, total) {
        (2, _) => vec![[0, 0, 0], [1, 0, 0], [0, 1, 0]],
        (_, 4) => vec![[0, 0, 0], [1, 1, 0], [1, 0, 1], [0, 1, 1]],
        (_, 5) => return Err(RigidityError::Generation("no rigid 5-site patch of the FCC grid".into())),
        _ => vec![[0, 0, 0], [2, 0, 0], [1, 1, 0], [1, -1, 0], [1, 0, 1], [1, 0, -1]],
    };
    let mut order: Vec<Site> = seed.iter().take(total).copied().collect();
    let mut occupied: HashSet<Site> = order.iter().copied().collect();
    while order.len() < total {
        let mut candidates: Vec<Site> = occupied
            .iter()
            .flat_map(|s| offsets.iter().map(move |o| add(s, o)))
            .filter(|c| !occupied.contains(c))
            .collect::<HashSet<_>>()
            .into_iter()
            .filter(|c| {
                let dirs: Vec<Point> = offsets
                    .iter()
                    .filter(|o| occupied.contains(&add(c, o)))
                    .map(|o| site_position(o, d, 1.0))
                    .collect();
                spans(&dirs, d)
            })
            .collect();
        // canonical order before the random pick keeps runs reproducible
        candidates.sort();
        let pick = *candidates
            .choose(rng)
            .ok_or_else(|| RigidityError::Generation("no admissible frontier site".into()))?;
        occupied.insert(pick);
        order.push(pick);
    }

    let mut sites = order;
    if vacancies > 0 {
        let mut removed = 0;
        let mut attempts = 0;
        while removed < vacancies {
            attempts += 1;
            if attempts > 50 * vacancies + 100 {
                return Err(RigidityError::Generation("could not place vacancies".into()));
            }
            let k = rng.random_range(0..sites.len());
            let mut trial = sites.clone();
            trial.remove(k);
            let pts: Vec<Point> = trial.iter().map(|s| site_position(s, d, r)).collect();
            let fw = lattice_framework(d, pts, r);
            if rigidity_report(&fw, None, RANK_TOL, 0.0)?.infinitesimally_rigid {
                sites = trial;
                removed += 1;
            }
        }
    }

    let pts: Vec<Point> = sites.iter().map(|s| site_position(s, d, r)).collect();
    let c = centroid_of(&pts);
    let rot = random_rotation(d, rng);
    Ok(pts.iter().map(|p| rot * (p - c)).collect())
}

/// Framework whose edges are the pairs at distance at most the midpoint
/// between `r` and the next lattice distance.
pub fn lattice_framework(d: usize, positions: Vec<Point>, r: f64) -> Framework {
    let next = if d == 2 { r * 3f64.sqrt() } else { r * 2f64.sqrt() };
    let ra = (r + next) / 2.0;
    let state = SwarmState::new(d, positions);
    let edges = crate::geometry::links_in_band(&state, 0.0, ra).undirected();
    Framework { dim: d, positions: state.positions, edges }
}

/// Independent uniform-in-ball displacement of radius `delta` per agent.
pub fn perturb<R: Rng + ?Sized>(configuration: &[Point], d: usize, delta: f64, rng: &mut R) -> Vec<Point> {
    if delta == 0.0 {
        return configuration.to_vec();
    }
    configuration.iter().map(|p| p + sample_in_ball(d, delta, rng)).collect()
}

// ---- potential and Lyapunov function -------------------------------------

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64, RigidityError> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, RigidityError> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if !delta.is_finite() {
            return Err(RigidityError::Quadrature { a, b });
        }
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(RigidityError::Quadrature { a, b });
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

fn lj_antiderivative(z: f64, a: f64, b: f64, c: u32) -> f64 {
    let knee = lj_saturation_knee(a, b, c);
    let raw = |y: f64| {
        let c = c as f64;
        a * y.powf(1.0 - 2.0 * c) / (1.0 - 2.0 * c) - b * y.powf(1.0 - c) / (1.0 - c)
    };
    if z >= knee {
        raw(z)
    } else {
        raw(knee) + (z - knee)
    }
}

/// `P(z) = −∫_R^z f(y) dy`, in closed form for the Lennard-Jones and
/// power laws and by adaptive Simpson otherwise.
pub fn potential(z: f64, f: &InteractionFn, r: f64) -> Result<f64, RigidityError> {
    if !(z > 0.0) {
        if z == 0.0 && !f.diverges_at_zero() {
            // finite limit for saturated laws
        } else {
            return Err(RigidityError::PotentialDomain(z));
        }
    }
    match f {
        InteractionFn::LennardJones { a, b, c } => {
            Ok(-(lj_antiderivative(z, *a, *b, *c) - lj_antiderivative(r, *a, *b, *c)))
        }
        InteractionFn::PowerLaw { g, r: r0, ra } if (*r0 - r).abs() < 1e-15 => {
            let k = std::f64::consts::PI * r * r / (ra - r);
            let w = ra - r;
            let outer = |y: f64| g * w / std::f64::consts::PI * (1.0 - ((y - r) * std::f64::consts::PI / w).cos());
            Ok(if z <= r {
                -g * k * ((z / r).ln() - (z - r) / r)
            } else if z <= *ra {
                outer(z)
            } else {
                outer(*ra)
            })
        }
        _ => Ok(-adaptive_simpson(&|y| f.value(y), r, z, 1e-10)?),
    }
}

/// `V = ‖x_c* − x_c‖² + Σ P(‖r_ij‖)` over unordered pairs closer than
/// `pair_radius`.
pub fn lyapunov(state: &SwarmState, centroid_star: &Point, f: &InteractionFn, r: f64, pair_radius: f64) -> Result<f64, RigidityError> {
    let c = centroid_of(&state.positions);
    let mut v = (centroid_star - c).norm_squared();
    for i in 0..state.len() {
        for j in i + 1..state.len() {
            let z = state.dist(i, j);
            if z <= pair_radius {
                v += potential(z, f, r)?;
            }
        }
    }
    Ok(v)
}

/// `V̇ = −Σ ‖u_i‖²` along the first-order dynamics.
pub fn lyapunov_rate(controls: &[Point]) -> f64 {
    -controls.iter().map(|u| u.norm_squared()).sum::<f64>()
}

// ---- Jacobian and spectrum ------------------------------------------------

/// Jacobian of `u_i = Σ f(‖r_ij‖) r̂_ij` over the framework edges: each edge
/// contributes `K = f′ r̂r̂ᵀ + (f/z)(I − r̂r̂ᵀ)` to the diagonal blocks of its
/// endpoints and `−K` to the off-diagonal blocks.
pub fn jacobian(framework: &Framework, f: &InteractionFn) -> DMatrix<f64> {
    let d = framework.dim;
    let mut j = DMatrix::zeros(d * framework.n(), d * framework.n());
    for &(a, b) in &framework.edges {
        let r = framework.positions[a] - framework.positions[b];
        let z = r.norm();
        let rhat = r / z;
        let (fz, fp) = (f.value(z), f.derivative(z));
        for p in 0..d {
            for q in 0..d {
                let outer = rhat[p] * rhat[q];
                let eye = if p == q { 1.0 } else { 0.0 };
                let k = fp * outer + fz / z * (eye - outer);
                j[(d * a + p, d * a + q)] += k;
                j[(d * b + p, d * b + q)] += k;
                j[(d * a + p, d * b + q)] -= k;
                j[(d * b + p, d * a + q)] -= k;
            }
        }
    }
    j
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Eigenvalues as `(re, im)`, ascending by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub symmetric: bool,
    pub zero_band: f64,
    pub near_zero: usize,
    pub negative: usize,
    pub positive: usize,
    /// `‖M w‖` for each unit vector spanning the near-zero eigenspace.
    pub kernel_residuals: Vec<f64>,
    /// Smallest `‖M w‖` over the remaining eigenvectors (symmetric case).
    pub min_other_residual: Option<f64>,
    /// Present when the input was not an equilibrium of the law.
    pub warning: Option<String>,
}

impl SpectrumReport {
    /// Expected structure around a rigid lattice: `d(d+1)/2` zero modes
    /// and all others strictly negative.
    pub fn is_lattice_like(&self, d: usize) -> bool {
        self.near_zero == d * (d + 1) / 2 && self.negative + self.near_zero == self.eigenvalues.len()
    }
}

pub fn classify_spectrum(j: &DMatrix<f64>, m: &DMatrix<f64>, rel_band: f64) -> SpectrumReport {
    let scale = j.amax().max(f64::MIN_POSITIVE);
    let symmetric = (j - j.transpose()).amax() < 1e-10 * scale;
    let mut kernel_residuals = Vec::new();
    let mut min_other = None::<f64>;
    let eigenvalues: Vec<(f64, f64)>;
    let zero_band;
    if symmetric {
        let sym = SymmetricEigen::new(j.clone());
        let lmax = sym.eigenvalues.amax();
        zero_band = rel_band * lmax;
        for (k, &lam) in sym.eigenvalues.iter().enumerate() {
            let w: DVector<f64> = sym.eigenvectors.column(k).into_owned();
            let res = (m * &w).norm();
            if lam.abs() < zero_band {
                kernel_residuals.push(res);
            } else {
                min_other = Some(min_other.map_or(res, |x| x.min(res)));
            }
        }
        let mut ev: Vec<(f64, f64)> = sym.eigenvalues.iter().map(|&l| (l, 0.0)).collect();
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        eigenvalues = ev;
    } else {
        let ce = j.clone().complex_eigenvalues();
        let lmax = ce.iter().map(|c| c.norm()).fold(0.0, f64::max);
        zero_band = rel_band * lmax;
        let svd = j.clone().svd(false, true);
        if let Some(vt) = svd.v_t {
            for (k, &s) in svd.singular_values.iter().enumerate() {
                if s < zero_band {
                    let w: DVector<f64> = vt.row(k).transpose();
                    kernel_residuals.push((m * &w).norm());
                }
            }
        }
        let mut ev: Vec<(f64, f64)> = ce.iter().map(|c| (c.re, c.im)).collect();
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        eigenvalues = ev;
    }
    let near_zero = eigenvalues.iter().filter(|(re, im)| re.hypot(*im) < zero_band).count();
    let negative = eigenvalues.iter().filter(|(re, im)| re.hypot(*im) >= zero_band && *re < -zero_band).count();
    let positive = eigenvalues.iter().filter(|(re, im)| re.hypot(*im) >= zero_band && *re > zero_band).count();
    SpectrumReport {
        eigenvalues,
        symmetric,
        zero_band,
        near_zero,
        negative,
        positive,
        kernel_residuals,
        min_other_residual: min_other,
        warning: None,
    }
}

/// Spectrum of the linearised radial law around `framework`, annotated when
/// the configuration is not an equilibrium within `eq_tol`.
pub fn lattice_spectrum(framework: &Framework, f: &InteractionFn, eq_tol: f64) -> Result<SpectrumReport, RigidityError> {
    let j = jacobian(framework, f);
    let m = rigidity_matrix(framework)?;
    let mut report = classify_spectrum(&j, &m, ZERO_BAND);
    let mut worst: f64 = 0.0;
    let mut u: HashMap<usize, Point> = HashMap::new();
    for &(a, b) in &framework.edges {
        let r = framework.positions[a] - framework.positions[b];
        let z = r.norm();
        let push = f.value(z) * r / z;
        *u.entry(a).or_insert_with(Point::zeros) += push;
        *u.entry(b).or_insert_with(Point::zeros) -= push;
    }
    for v in u.values() {
        worst = worst.max(v.norm());
    }
    if worst > eq_tol {
        report.warning = Some(format!("not an equilibrium: max |u_i| = {worst:e}"));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::f1_power_law;
    use crate::rng::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fw(points: &[[f64; 2]], edges: &[(usize, usize)]) -> Framework {
        let s = SwarmState::from_xy(points);
        Framework::new(2, s.positions, edges.to_vec()).unwrap()
    }

    fn triangle() -> Framework {
        fw(&[[0.0, 0.0], [1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]], &[(0, 1), (1, 2), (0, 2)])
    }

    #[test]
    fn incidence_examples() {
        let single = fw(&[[0.0, 0.0], [1.0, 0.0]], &[(0, 1)]);
        let b = incidence_matrix(&single);
        assert_eq!(b.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0]);
        let t = incidence_matrix(&triangle());
        for c in t.column_iter() {
            assert_eq!(c.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(c.iter().filter(|&&x| x == -1.0).count(), 1);
            assert_eq!(c.sum(), 0.0);
        }
        assert_eq!(numerical_rank(&t, RANK_TOL), 2);
    }

    #[test]
    fn rigidity_matrix_examples() {
        let single = fw(&[[0.0, 0.0], [1.0, 0.0]], &[(0, 1)]);
        let m = rigidity_matrix(&single).unwrap();
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, -1.0, 0.0]);

        let mut rng = rng_from_seed(4);
        let pts = generate_rigid_lattice(20, 2, 1.0, &mut rng).unwrap();
        let f = lattice_framework(2, pts, 1.0);
        let m = rigidity_matrix(&f).unwrap();
        let translation = DVector::from_fn(40, |k, _| if k % 2 == 0 { 0.3 } else { -0.7 });
        assert!((&m * translation).norm() < 1e-12);
        let rotation = DVector::from_fn(40, |k, _| {
            let p = f.positions[k / 2];
            if k % 2 == 0 { -p.y } else { p.x }
        });
        assert!((&m * rotation).norm() < 1e-12);

        let dup = Framework { dim: 2, positions: vec![Point::zeros(), Point::zeros()], edges: vec![(0, 1)] };
        assert!(rigidity_matrix(&dup).is_err());
    }

    #[test]
    fn rank_examples() {
        let (rigid, rep) = is_infinitesimally_rigid(&triangle(), RANK_TOL).unwrap();
        assert!(rigid);
        assert_eq!(rep.rank, 3);
        let path = fw(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.3], [3.0, 0.0]], &[(0, 1), (1, 2), (2, 3)]);
        let (rigid, rep) = is_infinitesimally_rigid(&path, RANK_TOL).unwrap();
        assert!(!rigid);
        assert_eq!(rep.rank, 3);
        assert_eq!(rep.required_rank, 5);
        let one = Framework { dim: 2, positions: vec![Point::zeros()], edges: vec![] };
        assert!(is_infinitesimally_rigid(&one, RANK_TOL).is_err());
    }

    #[test]
    fn generation_examples() {
        let mut rng = rng_from_seed(9);
        let tri = generate_rigid_lattice(3, 2, 1.0, &mut rng).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert_abs_diff_eq!((tri[i] - tri[j]).norm(), 1.0, epsilon = 1e-12);
            }
        }
        let cube = generate_rigid_lattice(8, 3, 1.0, &mut rng).unwrap();
        let rep = rigidity_report(&lattice_framework(3, cube, 1.0), Some(1.0), RANK_TOL, 1e-10).unwrap();
        assert_eq!(rep.rank, 18);
        assert!(rep.is_rigid_lattice);

        assert!(generate_rigid_lattice(5, 3, 1.0, &mut rng).is_err());
        let big = generate_rigid_lattice(100, 2, 1.0, &mut rng).unwrap();
        let f = lattice_framework(2, big, 1.0);
        let rep = rigidity_report(&f, Some(1.0), RANK_TOL, 1e-12).unwrap();
        assert_eq!(rep.rank, 197);
        assert!(rep.is_rigid_lattice);

        let holes = generate_with_vacancies(60, 2, 1.0, 3, &mut rng).unwrap();
        assert_eq!(holes.len(), 60);
        assert!(rigidity_report(&lattice_framework(2, holes, 1.0), Some(1.0), RANK_TOL, 1e-10).unwrap().is_rigid_lattice);
    }

    #[test]
    fn perturb_examples() {
        let mut rng = rng_from_seed(10);
        let base = generate_rigid_lattice(30, 2, 1.0, &mut rng).unwrap();
        assert_eq!(perturb(&base, 2, 0.0, &mut rng), base);
        let moved = perturb(&base, 2, 0.2, &mut rng);
        assert!(base.iter().zip(&moved).all(|(a, b)| (a - b).norm() <= 0.2));
        let ra = (1.0 + 3f64.sqrt()) / 2.0;
        let fwk = lattice_framework(2, base.clone(), 1.0);
        let e0 = fwk.edges.iter().map(|&(i, j)| ((moved[i] - moved[j]).norm() - 1.0).abs()).fold(0.0, f64::max);
        assert!(e0 <= 0.4);
        let _ = ra;
        let mut max = 0.0f64;
        let zeros = vec![Point::zeros(); 100_000];
        for p in perturb(&zeros, 3, 0.1, &mut rng) {
            max = max.max(p.norm());
        }
        assert!(max <= 0.1);
    }

    #[test]
    fn potential_examples() {
        let ra = (1.0 + 3f64.sqrt()) / 2.0;
        let fs = [
            InteractionFn::lennard_jones(0.5, 0.5, 12),
            InteractionFn::lennard_jones(0.15, 0.15, 5),
            InteractionFn::PowerLaw { g: 0.5, r: 1.0, ra },
        ];
        for f in &fs {
            assert_abs_diff_eq!(potential(1.0, f, 1.0).unwrap(), 0.0, epsilon = 1e-15);
            for &z in &[0.05, 0.5, 0.9, 0.99, 1.01, 1.2, ra] {
                let p = potential(z, f, 1.0).unwrap();
                assert!(p > 0.0, "P({z}) = {p}");
                let q = -adaptive_simpson(&|y| f.value(y), 1.0, z, 1e-12).unwrap();
                assert_abs_diff_eq!(p, q, epsilon = 1e-8);
            }
        }
        let table = InteractionFn::Table { z: vec![0.0, 1.0, 2.0], f: vec![1.0, 0.0, -1.0] };
        assert_abs_diff_eq!(potential(2.0, &table, 1.0).unwrap(), 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(f1_power_law(ra, 0.5, 1.0, ra), 0.0, epsilon = 1e-15);

        let mut rng = rng_from_seed(11);
        let pts = generate_rigid_lattice(30, 2, 1.0, &mut rng).unwrap();
        let s = SwarmState::new(2, pts);
        let f1 = InteractionFn::PowerLaw { g: 0.5, r: 1.0, ra };
        let c = centroid_of(&s.positions);
        assert_abs_diff_eq!(lyapunov(&s, &c, &f1, 1.0, ra).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spectrum_of_generated_lattices() {
        let mut rng = rng_from_seed(12);
        for (d, c) in [(2usize, 12u32), (3, 24)] {
            let pts = generate_rigid_lattice(30, d, 1.0, &mut rng).unwrap();
            let f = lattice_framework(d, pts, 1.0);
            let lj = InteractionFn::lennard_jones(0.5, 0.5, c);
            let rep = lattice_spectrum(&f, &lj, 1e-9).unwrap();
            assert!(rep.symmetric);
            assert!(rep.warning.is_none());
            assert!(rep.is_lattice_like(d), "{rep:?}");
            assert!(rep.kernel_residuals.iter().all(|&r| r < 1e-6));
            assert!(rep.min_other_residual.unwrap() > 1e-6);
        }
    }

    #[test]
    fn lyapunov_rate_is_minus_squared_speed() {
        let u = vec![Point::new(1.0, 2.0, 0.0), Point::new(0.0, -1.0, 0.0)];
        assert_eq!(lyapunov_rate(&u), -6.0);
    }

    proptest! {
        #[test]
        fn rank_never_exceeds_bound(seed in 0u64..300, n in 3usize..10) {
            let mut rng = rng_from_seed(seed);
            let pts = crate::geometry::sample_disk_initial(n, 2, 1.5, &mut rng);
            let s = SwarmState::new(2, pts);
            let edges = crate::geometry::links_in_band(&s, 0.0, 2.0).undirected();
            let f = Framework { dim: 2, positions: s.positions, edges };
            let rep = rigidity_report(&f, None, RANK_TOL, 0.0).unwrap();
            prop_assert!(rep.rank <= required_rank(n, 2));
        }

        #[test]
        fn generated_lattices_are_rigid(seed in 0u64..200, n in 4usize..40, d in 2usize..4) {
            prop_assume!(!(d == 3 && n == 5));
            let mut rng = rng_from_seed(seed);
            let pts = generate_rigid_lattice(n, d, 1.0, &mut rng).unwrap();
            let rep = rigidity_report(&lattice_framework(d, pts, 1.0), Some(1.0), RANK_TOL, 1e-10).unwrap();
            prop_assert!(rep.is_rigid_lattice);
        }
    }
}
