//! Sections `B ∩ E` of a body by a subspace `E = span(Q)`.
//!
//! The section norm is `u ↦ ‖Qu‖_B` on `R^k`. Its sphericity ratio is the
//! ratio of its largest to its smallest value on the unit sphere; a section is
//! `(1+ε)`-spherical when that ratio is at most `1+ε`.

mod planar;
mod random_matrix;

pub use planar::{bm_distance_2d_bruteforce, ellipse_intersection_distance, BRUTE_FORCE_BOUNDARY_POINTS};
pub use random_matrix::{
    cylinder_section_semiaxes, gaussian_extremes_experiment, ExtremeRow, GaussianExtremes, SemiAxis,
    DEFAULT_EXTREME_CS,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodies::{BodySpec, NormEvaluation};
use crate::error::{invalid_param, Error, Result};
use crate::sampler::{GaussianStream, SeedSpec, SubspaceBasis};

/// `‖Qu‖_B` and its gradient `Qᵀ grad_B(Qu)`.
pub fn section_norm(body: &BodySpec, basis: &SubspaceBasis, u: &[f64]) -> Result<NormEvaluation> {
    check_basis(body, basis)?;
    if u.len() != basis.k() {
        return Err(Error::DimensionMismatch { expected: basis.k(), got: u.len() });
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    if u.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVector);
    }
    let mut x = vec![0.0; basis.n()];
    let mut g = vec![0.0; basis.n()];
    basis.embed_into(u, &mut x);
    let value = body.eval_into(&x, &mut g);
    Ok(NormEvaluation { value, gradient: basis.pull_back(&g) })
}

fn check_basis(body: &BodySpec, basis: &SubspaceBasis) -> Result<()> {
    if basis.n() != body.dim() {
        return Err(Error::DimensionMismatch { expected: body.dim(), got: basis.n() });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphericityMethod {
    /// Exhaustive evaluation on a spherical net of covering radius `delta`.
    Net { delta: f64 },
    /// Projected gradient ascent and descent from random starts.
    MultiStart { n_starts: usize, max_iters: usize },
}

pub const DEFAULT_N_STARTS: usize = 64;
pub const DEFAULT_MAX_ITERS: usize = 500;

impl SphericityMethod {
    /// Net with the default resolution for `k`, or multi-start when `k > 3`.
    pub fn default_for(k: usize) -> Self {
        match k {
            1 | 2 => Self::Net { delta: 1e-3 },
            3 => Self::Net { delta: 1e-2 },
            _ => Self::multi_start(),
        }
    }

    pub fn multi_start() -> Self {
        Self::MultiStart { n_starts: DEFAULT_N_STARTS, max_iters: DEFAULT_MAX_ITERS }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Net { delta } => format!("net({delta})"),
            Self::MultiStart { n_starts, .. } => format!("multistart({n_starts})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphericityReport {
    pub k: usize,
    /// Net: smallest value found, within `tolerance` above the true minimum.
    /// Multi-start: an upper bound on the minimum.
    pub r_min: f64,
    /// Net: largest value found, within `tolerance` below the true maximum.
    /// Multi-start: a lower bound on the maximum.
    pub r_max: f64,
    /// `r_max / r_min`, a lower bound on the true ratio for either method.
    pub ratio: f64,
    pub method: SphericityMethod,
    pub certified: bool,
    /// `Lip · δ` for a net; zero for multi-start.
    pub tolerance: f64,
}

pub const SPHERICITY_CSV_HEADER: &str = "seed,n,k,method,r_min,r_max,ratio,certified";

impl SphericityReport {
    /// Certified upper bound on the true ratio. Infinite when uncertified or
    /// when the tolerance swallows the minimum.
    pub fn ratio_upper(&self) -> f64 {
        if !self.certified || self.r_min <= self.tolerance {
            return f64::INFINITY;
        }
        (self.r_max + self.tolerance) / (self.r_min - self.tolerance)
    }

    pub fn csv_row(&self, seed: SeedSpec, n: usize) -> String {
        format!(
            "{},{},{},{},{:.17e},{:.17e},{:.17e},{}",
            seed.master,
            n,
            self.k,
            self.method.label(),
            self.r_min,
            self.r_max,
            self.ratio,
            self.certified
        )
    }
}

/// Extremes of the section norm over the unit sphere of `R^k`.
///
/// Nets are available for `k <= 3` and give certified bounds; multi-start runs
/// for any `k` and only bounds the ratio from below. `seed` drives the random
/// starts and is ignored by nets.
pub fn sphericity_ratio(
    body: &BodySpec,
    basis: &SubspaceBasis,
    method: SphericityMethod,
    seed: SeedSpec,
) -> Result<SphericityReport> {
    check_basis(body, basis)?;
    let k = basis.k();
    let (r_min, r_max, certified, tolerance) = match method {
        SphericityMethod::Net { delta } => {
            if k > 3 {
                return Err(invalid_param(format!("net method supports k <= 3, got k={k}")));
            }
            if !(delta > 0.0 && delta < 1.0) {
                return Err(invalid_param(format!("net resolution must lie in (0, 1), got {delta}")));
            }
            let (lo, hi) = net_extremes(body, basis, delta);
            // k = 1 has the exact two-point sphere.
            let tol = if k == 1 { 0.0 } else { body.lipschitz_constant() * delta };
            (lo, hi, true, tol)
        }
        SphericityMethod::MultiStart { n_starts, max_iters } => {
            if n_starts == 0 || max_iters == 0 {
                return Err(invalid_param("multi-start needs positive n_starts and max_iters"));
            }
            let (lo, hi) = multi_start_extremes(body, basis, n_starts, max_iters, seed);
            (lo, hi, false, 0.0)
        }
    };
    if !(r_min > 0.0 && r_max.is_finite()) {
        return Err(Error::Degenerate(format!("section norm extremes [{r_min}, {r_max}]")));
    }
    Ok(SphericityReport { k, r_min, r_max, ratio: r_max / r_min, method, certified, tolerance })
}

/// Points of a spherical net in `R^k` (`k <= 3`) whose covering radius in the
/// chordal metric is at most `delta`.
///
/// `k = 2`: `⌈π/δ⌉` equally spaced angles. `k = 3`: the cube-sphere grid,
/// the radial projection of a square grid of spacing `√2 δ` on each face of
/// `[-1, 1]³`. Radial projection onto the sphere is 1-Lipschitz from the
/// outside of the ball, and every face point lies within `δ` of a grid point,
/// so the covering radius is at most `δ`.
pub fn sphere_net(k: usize, delta: f64) -> Vec<Vec<f64>> {
    match k {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => {
            let m = (std::f64::consts::PI / delta).ceil() as usize;
            (0..m)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / m as f64;
                    vec![t.cos(), t.sin()]
                })
                .collect()
        }
        3 => {
            let cells = (2.0 / (std::f64::consts::SQRT_2 * delta)).ceil() as usize;
            let step = 2.0 / cells as f64;
            let mut out = Vec::with_capacity(6 * (cells + 1) * (cells + 1));
            for axis in 0..3 {
                for sign in [1.0, -1.0] {
                    for a in 0..=cells {
                        for b in 0..=cells {
                            let s = -1.0 + step * a as f64;
                            let t = -1.0 + step * b as f64;
                            let mut p = [0.0; 3];
                            p[axis] = sign;
                            p[(axis + 1) % 3] = s;
                            p[(axis + 2) % 3] = t;
                            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                            out.push(p.iter().map(|v| v / r).collect());
                        }
                    }
                }
            }
            out
        }
        _ => panic!("sphere_net supports k <= 3"),
    }
}

const NET_CHUNKS: usize = 64;

fn net_extremes(body: &BodySpec, basis: &SubspaceBasis, delta: f64) -> (f64, f64) {
    let net = sphere_net(basis.k(), delta);
    let chunk = net.len().div_ceil(NET_CHUNKS).max(1);
    net.par_chunks(chunk)
        .map(|pts| {
            let mut x = vec![0.0; basis.n()];
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for u in pts {
                basis.embed_into(u, &mut x);
                let v = body.norm_unchecked(&x);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::INFINITY, 0.0), |(a, b), (c, d)| (a.min(c), b.max(d)))
}

struct Walker<'a> {
    body: &'a BodySpec,
    basis: &'a SubspaceBasis,
    x: Vec<f64>,
    g: Vec<f64>,
}

impl Walker<'_> {
    fn eval(&mut self, u: &[f64]) -> (f64, Vec<f64>) {
        self.basis.embed_into(u, &mut self.x);
        let v = self.body.eval_into(&self.x, &mut self.g);
        (v, self.basis.pull_back(&self.g))
    }

    fn value(&mut self, u: &[f64]) -> f64 {
        self.basis.embed_into(u, &mut self.x);
        self.body.norm_unchecked(&self.x)
    }
}

fn normalise(u: &mut [f64]) {
    let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= r);
}

/// Step along `dir` projected to the tangent space at `u`, then back to the
/// sphere.
fn retract(u: &[f64], dir: &[f64], step: f64) -> Vec<f64> {
    let radial: f64 = u.iter().zip(dir).map(|(a, b)| a * b).sum();
    let mut out: Vec<f64> = u.iter().zip(dir).map(|(a, d)| a + step * (d - radial * a)).collect();
    normalise(&mut out);
    out
}

/// Local extremum from `u` by projected (sub)gradient steps with step
/// halving. `sign = 1` ascends, `-1` descends. When the gradient direction
/// stalls at a kink, a few random tangent directions are tried before the
/// step is halved.
fn local_search(w: &mut Walker, mut u: Vec<f64>, sign: f64, max_iters: usize, stream: &mut GaussianStream) -> f64 {
    let k = u.len();
    let (mut v, mut grad) = w.eval(&u);
    let mut step = 0.5;
    let mut probe = vec![0.0; k];
    for _ in 0..max_iters {
        if step < 1e-12 {
            break;
        }
        let dir: Vec<f64> = grad.iter().map(|g| sign * g).collect();
        let cand = retract(&u, &dir, step);
        let cv = w.value(&cand);
        if sign * (cv - v) > 0.0 {
            u = cand;
            (v, grad) = w.eval(&u);
            step *= 1.5;
            continue;
        }
        let mut moved = false;
        for _ in 0..k.min(4) {
            stream.fill(&mut probe);
            let cand = retract(&u, &probe, step);
            let cv = w.value(&cand);
            if sign * (cv - v) > 0.0 {
                u = cand;
                (v, grad) = w.eval(&u);
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    v
}

fn multi_start_extremes(
    body: &BodySpec,
    basis: &SubspaceBasis,
    n_starts: usize,
    max_iters: usize,
    seed: SeedSpec,
) -> (f64, f64) {
    let k = basis.k();
    (0..n_starts)
        .into_par_iter()
        .map(|s| {
            let mut stream = GaussianStream::new(seed.split(s as u64));
            let mut w = Walker { body, basis, x: vec![0.0; basis.n()], g: vec![0.0; basis.n()] };
            let mut u = vec![0.0; k];
            stream.fill(&mut u);
            normalise(&mut u);
            let hi = local_search(&mut w, u.clone(), 1.0, max_iters, &mut stream);
            let lo = local_search(&mut w, u, -1.0, max_iters, &mut stream);
            (lo, hi)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((f64::INFINITY, 0.0), |(a, b), (c, d)| (a.min(c), b.max(d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::haar_subspace;

    #[test]
    fn euclidean_sections_are_round() {
        let body = BodySpec::euclidean(20).unwrap();
        let q = haar_subspace(SeedSpec::new(1, 0), 20, 3).unwrap();
        let v = section_norm(&body, &q, &[0.6, 0.0, 0.8]).unwrap();
        assert!((v.value - 1.0).abs() < 1e-14);
        let r = sphericity_ratio(&body, &q, SphericityMethod::default_for(3), SeedSpec::new(0, 0)).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12, "{}", r.ratio);
    }

    #[test]
    fn full_frame_matches_the_body() {
        let body = BodySpec::lp_ball(4, 3.0).unwrap();
        let q = SubspaceBasis::coordinate(4, &[0, 1, 2, 3]).unwrap();
        let u = [0.3, -1.2, 0.5, 2.0];
        assert_eq!(section_norm(&body, &q, &u).unwrap(), body.gradient(&u).unwrap());
    }

    #[test]
    fn section_norm_errors() {
        let body = BodySpec::cube(5).unwrap();
        let q = SubspaceBasis::coordinate(5, &[0, 1]).unwrap();
        assert!(matches!(section_norm(&body, &q, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(section_norm(&body, &q, &[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(section_norm(&BodySpec::cube(6).unwrap(), &q, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn square_section() {
        let body = BodySpec::cube(2).unwrap();
        let q = SubspaceBasis::coordinate(2, &[0, 1]).unwrap();
        let r = sphericity_ratio(&body, &q, SphericityMethod::Net { delta: 1e-3 }, SeedSpec::new(0, 0)).unwrap();
        assert!(r.certified);
        assert!((r.ratio - 2f64.sqrt()).abs() <= 2.0 * r.tolerance, "{}", r.ratio);
        assert!(r.ratio <= 2f64.sqrt() && 2f64.sqrt() <= r.ratio_upper());
    }

    #[test]
    fn cylinder_coordinate_sections() {
        let body = BodySpec::cylinder_john(10, 3).unwrap();
        let net = SphericityMethod::Net { delta: 1e-3 };
        // One head and one tail coordinate: the section is the square
        // max(|u_1|, |u_2|).
        let mixed = SubspaceBasis::coordinate(10, &[0, 9]).unwrap();
        let r = sphericity_ratio(&body, &mixed, net, SeedSpec::new(0, 0)).unwrap();
        assert!((r.r_max - 1.0).abs() < 1e-12);
        assert!((r.ratio - 2f64.sqrt()).abs() <= 2.0 * r.tolerance);
        // Two tail coordinates: a Euclidean disk.
        let tail = SubspaceBasis::coordinate(10, &[8, 9]).unwrap();
        let r = sphericity_ratio(&body, &tail, net, SeedSpec::new(0, 0)).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn net_covering_radius_holds() {
        for (k, delta) in [(2, 1e-2), (3, 5e-2)] {
            let net = sphere_net(k, delta);
            let mut stream = GaussianStream::new(SeedSpec::new(5, 0));
            let mut u = vec![0.0; k];
            for _ in 0..2000 {
                stream.fill(&mut u);
                normalise(&mut u);
                let best = net
                    .iter()
                    .map(|p| p.iter().zip(&u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(best <= delta, "k={k} distance {best}");
            }
        }
    }

    #[test]
    fn net_rejects_high_dimension() {
        let body = BodySpec::cube(8).unwrap();
        let q = haar_subspace(SeedSpec::new(2, 0), 8, 4).unwrap();
        assert!(sphericity_ratio(&body, &q, SphericityMethod::Net { delta: 0.1 }, SeedSpec::new(0, 0)).is_err());
        let r = sphericity_ratio(&body, &q, SphericityMethod::multi_start(), SeedSpec::new(0, 0)).unwrap();
        assert!(!r.certified && r.ratio >= 1.0);
    }

    #[test]
    fn one_dimensional_sections_are_exact() {
        let body = BodySpec::lp_ball(6, 1.0).unwrap();
        let q = haar_subspace(SeedSpec::new(3, 0), 6, 1).unwrap();
        let r = sphericity_ratio(&body, &q, SphericityMethod::default_for(1), SeedSpec::new(0, 0)).unwrap();
        assert_eq!(r.ratio, 1.0);
        assert_eq!(r.ratio_upper(), 1.0);
    }

    #[test]
    fn csv_row_fields() {
        let body = BodySpec::cube(3).unwrap();
        let q = SubspaceBasis::coordinate(3, &[0, 1]).unwrap();
        let r = sphericity_ratio(&body, &q, SphericityMethod::Net { delta: 0.01 }, SeedSpec::new(0, 0)).unwrap();
        let row = r.csv_row(SeedSpec::new(11, 0), 3);
        assert_eq!(row.split(',').count(), SPHERICITY_CSV_HEADER.split(',').count());
        assert!(row.starts_with("11,3,2,net(0.01),"));
        assert!(row.ends_with(",true"));
    }
}
