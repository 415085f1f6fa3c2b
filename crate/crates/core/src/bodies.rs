//! Minkowski functionals of coordinate-symmetric convex bodies.
//!
//! A [`BodySpec`] is a family of norms together with a positive diagonal
//! `d`; the represented body is `D(B)` with `‖x‖_{D(B)} = ‖D⁻¹x‖_B`. Every
//! family is 1-unconditional in the standard basis.
//!
//! At points where the norm is not differentiable the returned gradient is a
//! subgradient: among tied maximal coordinates the lowest index wins, and in the
//! cylinder body the `l_∞` head wins a tie against the Euclidean tail.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::sampler::{GaussianStream, SeedSpec};

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// Unit ball of `l_∞`.
    Cube,
    /// Unit ball of `l_p`, `p >= 1`.
    LpBall { p: f64 },
    /// `{x : Σ w_i |x_i|^p <= 1}`.
    WeightedLp { p: f64, weights: Vec<f64> },
    /// Intersection of the `l_∞` cylinder on the first `n - m` coordinates
    /// with the Euclidean cylinder on the last `m`.
    CylinderJohn { m: usize },
    /// Unit ball of `l_2`.
    Euclidean,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Cube => "cube",
            Family::LpBall { .. } => "lp_ball",
            Family::WeightedLp { .. } => "weighted_lp",
            Family::CylinderJohn { .. } => "cylinder_john",
            Family::Euclidean => "euclidean",
        }
    }
}

/// Value and subgradient of a norm at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct NormEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BodyDescriptor", into = "BodyDescriptor")]
pub struct BodySpec {
    family: Family,
    dim: usize,
    diag: Vec<f64>,
    inv_diag: Vec<f64>,
}

/// Wire form of a body: `{family, dim, m?, p?, weights?, diag}` in that order.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct BodyDescriptor {
    family: String,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default)]
    diag: Option<Vec<f64>>,
}

impl TryFrom<BodyDescriptor> for BodySpec {
    type Error = Error;

    fn try_from(d: BodyDescriptor) -> Result<Self> {
        let need_p = || d.p.ok_or_else(|| Error::InvalidBody(format!("{} needs p", d.family)));
        let family = match d.family.as_str() {
            "cube" => Family::Cube,
            "euclidean" => Family::Euclidean,
            "lp_ball" => Family::LpBall { p: need_p()? },
            "weighted_lp" => Family::WeightedLp {
                p: need_p()?,
                weights: d
                    .weights
                    .clone()
                    .ok_or_else(|| Error::InvalidBody("weighted_lp needs weights".into()))?,
            },
            "cylinder_john" => Family::CylinderJohn {
                m: d.m.ok_or_else(|| Error::InvalidBody("cylinder_john needs m".into()))?,
            },
            other => return Err(Error::InvalidBody(format!("unknown family `{other}`"))),
        };
        let diag = d.diag.unwrap_or_else(|| vec![1.0; d.dim]);
        BodySpec::with_diag(family, d.dim, diag)
    }
}

impl From<BodySpec> for BodyDescriptor {
    fn from(b: BodySpec) -> Self {
        let (m, p, weights) = match &b.family {
            Family::CylinderJohn { m } => (Some(*m), None, None),
            Family::LpBall { p } => (None, Some(*p), None),
            Family::WeightedLp { p, weights } => (None, Some(*p), Some(weights.clone())),
            Family::Cube | Family::Euclidean => (None, None, None),
        };
        BodyDescriptor {
            family: b.family.name().to_string(),
            dim: b.dim,
            m,
            p,
            weights,
            diag: Some(b.diag),
        }
    }
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        Some(i) => Err(Error::InvalidBody(format!(
            "{what}[{i}] = {} must be positive and finite",
            values[i]
        ))),
        None => Ok(()),
    }
}

impl BodySpec {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        Self::with_diag(family, dim, vec![1.0; dim])
    }

    pub fn with_diag(family: Family, dim: usize, diag: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidBody(format!("dimension must be at least 2, got {dim}")));
        }
        if diag.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: diag.len() });
        }
        check_positive(&diag, "diag")?;
        match &family {
            Family::LpBall { p } if !(p.is_finite() && *p >= 1.0) => {
                return Err(Error::InvalidBody(format!("l_p ball needs finite p >= 1, got {p}")));
            }
            Family::WeightedLp { p, weights } => {
                if !(p.is_finite() && *p >= 1.0) {
                    return Err(Error::InvalidBody(format!("weighted l_p needs finite p >= 1, got {p}")));
                }
                if weights.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: weights.len() });
                }
                check_positive(weights, "weights")?;
            }
            Family::CylinderJohn { m } if !(*m >= 1 && *m < dim) => {
                return Err(Error::InvalidBody(format!("cylinder needs 1 <= m < n, got m={m}, n={dim}")));
            }
            _ => {}
        }
        let inv_diag = diag.iter().map(|d| 1.0 / d).collect();
        Ok(Self { family, dim, diag, inv_diag })
    }

    pub fn cube(dim: usize) -> Result<Self> {
        Self::new(Family::Cube, dim)
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::new(Family::Euclidean, dim)
    }

    pub fn lp_ball(dim: usize, p: f64) -> Result<Self> {
        Self::new(Family::LpBall { p }, dim)
    }

    pub fn weighted_lp(p: f64, weights: Vec<f64>) -> Result<Self> {
        let dim = weights.len();
        Self::new(Family::WeightedLp { p, weights }, dim)
    }

    pub fn cylinder_john(dim: usize, m: usize) -> Result<Self> {
        Self::new(Family::CylinderJohn { m }, dim)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Same family with diagonal scaling `d ⊙ diag`.
    pub fn apply_diagonal(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: d.len() });
        }
        check_positive(d, "d")?;
        let diag = self.diag.iter().zip(d).map(|(a, b)| a * b).collect();
        Self::with_diag(self.family.clone(), self.dim, diag)
    }

    /// The body `s·D(B)`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        self.apply_diagonal(&vec![s; self.dim])
    }

    /// Same family and weights with the diagonal replaced.
    pub fn with_diagonal(&self, diag: Vec<f64>) -> Result<Self> {
        Self::with_diag(self.family.clone(), self.dim, diag)
    }

    /// Relabels coordinates: coordinate `i` of the result is coordinate
    /// `perm[i]` of `self`. The cylinder body only admits permutations that
    /// keep its head and tail blocks in place.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: perm.len() });
        }
        let mut seen = vec![false; self.dim];
        for &j in perm {
            if j >= self.dim || std::mem::replace(&mut seen[j], true) {
                return Err(invalid_param("not a permutation"));
            }
        }
        let pick = |v: &[f64]| perm.iter().map(|&j| v[j]).collect::<Vec<_>>();
        let family = match &self.family {
            Family::WeightedLp { p, weights } => Family::WeightedLp { p: *p, weights: pick(weights) },
            Family::CylinderJohn { m } => {
                let head = self.dim - m;
                if perm.iter().enumerate().any(|(i, &j)| (i < head) != (j < head)) {
                    return Err(invalid_param("permutation mixes the cylinder's head and tail"));
                }
                self.family.clone()
            }
            f => f.clone(),
        };
        Self::with_diag(family, self.dim, pick(&self.diag))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        match x.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// `‖x‖_{D(B)}`.
    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.norm_unchecked(x))
    }

    /// Norm value and subgradient at `x ≠ 0`.
    pub fn gradient(&self, x: &[f64]) -> Result<NormEvaluation> {
        self.check_input(x)?;
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroVector);
        }
        let mut gradient = vec![0.0; self.dim];
        let value = self.eval_into(x, &mut gradient);
        Ok(NormEvaluation { value, gradient })
    }

    /// Norm without input validation. `x` must have length `dim`.
    pub fn norm_unchecked(&self, x: &[f64]) -> f64 {
        let inv = &self.inv_diag;
        match &self.family {
            Family::Cube => max_abs_scaled(x, inv).0,
            Family::Euclidean => sum_sq_scaled(x, inv).sqrt(),
            Family::LpBall { p } => lp_value(x, inv, None, *p),
            Family::WeightedLp { p, weights } => lp_value(x, inv, Some(weights), *p),
            Family::CylinderJohn { m } => {
                let h = self.dim - m;
                let head = max_abs_scaled(&x[..h], &inv[..h]).0;
                let tail = sum_sq_scaled(&x[h..], &inv[h..]).sqrt();
                head.max(tail)
            }
        }
    }

    /// Writes a subgradient at `x` into `grad` and returns the norm. At the
    /// origin the gradient is left as zeros.
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let inv = &self.inv_diag;
        grad.fill(0.0);
        match &self.family {
            Family::Cube => {
                let (v, i) = max_abs_scaled(x, inv);
                if v > 0.0 {
                    grad[i] = x[i].signum() * inv[i];
                }
                v
            }
            Family::Euclidean => {
                let v = sum_sq_scaled(x, inv).sqrt();
                if v > 0.0 {
                    for ((g, xi), di) in grad.iter_mut().zip(x).zip(inv) {
                        *g = xi * di * di / v;
                    }
                }
                v
            }
            Family::LpBall { p } => lp_gradient(x, inv, None, *p, grad),
            Family::WeightedLp { p, weights } => lp_gradient(x, inv, Some(weights), *p, grad),
            Family::CylinderJohn { m } => {
                let h = self.dim - m;
                let (head, i) = max_abs_scaled(&x[..h], &inv[..h]);
                let tail = sum_sq_scaled(&x[h..], &inv[h..]).sqrt();
                if head >= tail {
                    if head > 0.0 {
                        grad[i] = x[i].signum() * inv[i];
                    }
                    head
                } else {
                    for j in h..self.dim {
                        grad[j] = x[j] * inv[j] * inv[j] / tail;
                    }
                    tail
                }
            }
        }
    }

    /// `max_{‖u‖₂ = 1} ‖u‖_{D(B)}`.
    pub fn lipschitz_constant(&self) -> f64 {
        let max_inv = || self.inv_diag.iter().cloned().fold(0.0, f64::max);
        match &self.family {
            Family::Cube | Family::Euclidean | Family::CylinderJohn { .. } => max_inv(),
            Family::LpBall { p } => lp_lipschitz(self.inv_diag.iter().cloned(), *p),
            Family::WeightedLp { p, weights } => lp_lipschitz(
                self.inv_diag.iter().zip(weights).map(|(di, w)| w.powf(1.0 / p) * di),
                *p,
            ),
        }
    }

    /// Compact JSON descriptor, used in manifests and output headers.
    pub fn descriptor_json(&self) -> String {
        serde_json::to_string(self).expect("body descriptors always serialize")
    }

    /// Short content hash of [`Self::descriptor_json`].
    pub fn descriptor_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.descriptor_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

// Max of |x_i| * inv_i with the lowest index winning ties.
#[inline]
fn max_abs_scaled(x: &[f64], inv: &[f64]) -> (f64, usize) {
    let mut best = 0.0;
    let mut arg = 0;
    for (i, (xi, di)) in x.iter().zip(inv).enumerate() {
        let a = (xi * di).abs();
        if a > best {
            best = a;
            arg = i;
        }
    }
    (best, arg)
}

#[inline]
fn sum_sq_scaled(x: &[f64], inv: &[f64]) -> f64 {
    x.iter().zip(inv).map(|(xi, di)| (xi * di) * (xi * di)).sum()
}

#[inline]
fn pow_abs(t: f64, p: f64) -> f64 {
    if p == 1.0 {
        t
    } else if p == 2.0 {
        t * t
    } else if p.fract() == 0.0 && p <= 32.0 {
        t.powi(p as i32)
    } else {
        t.powf(p)
    }
}

// (Σ w_i |x_i inv_i / s|^p)^{1/p} * s with s = max |x_i inv_i| to avoid overflow.
fn lp_value(x: &[f64], inv: &[f64], weights: Option<&Vec<f64>>, p: f64) -> f64 {
    if p == 1.0 {
        return match weights {
            None => x.iter().zip(inv).map(|(a, b)| (a * b).abs()).sum(),
            Some(w) => x.iter().zip(inv).zip(w).map(|((a, b), w)| w * (a * b).abs()).sum(),
        };
    }
    let scale = max_abs_scaled(x, inv).0;
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = match weights {
        None => x.iter().zip(inv).map(|(a, b)| pow_abs((a * b).abs() / scale, p)).sum(),
        Some(w) => x
            .iter()
            .zip(inv)
            .zip(w)
            .map(|((a, b), w)| w * pow_abs((a * b).abs() / scale, p))
            .sum(),
    };
    scale * s.powf(1.0 / p)
}

fn lp_gradient(x: &[f64], inv: &[f64], weights: Option<&Vec<f64>>, p: f64, grad: &mut [f64]) -> f64 {
    let v = lp_value(x, inv, weights, p);
    if v == 0.0 {
        return 0.0;
    }
    for (i, g) in grad.iter_mut().enumerate() {
        let y = x[i] * inv[i];
        if y == 0.0 {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        *g = w * y.signum() * pow_abs(y.abs() / v, p - 1.0) * inv[i];
    }
    v
}

// Max over the Euclidean unit sphere of (Σ |c_i u_i|^p)^{1/p}: for p >= 2 it is
// max c_i, for p < 2 it is ‖c‖_q with 1/q = 1/p - 1/2.
fn lp_lipschitz(c: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p >= 2.0 {
        return c.fold(0.0, f64::max);
    }
    let q = 2.0 * p / (2.0 - p);
    let c: Vec<f64> = c.collect();
    let top = c.iter().cloned().fold(0.0, f64::max);
    top * c.iter().map(|ci| (ci / top).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// Construction parameters for [`make_cylinder_john_body`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderConfig {
    /// Smallest admissible dimension.
    pub n_floor: usize,
    /// Monte Carlo draws used to estimate `Med max_i g_i²`.
    pub trials: usize,
}

impl Default for CylinderConfig {
    fn default() -> Self {
        Self { n_floor: 64, trials: 20_000 }
    }
}

/// Sample median of `max_{i<=n} g_i²` over `trials` Gaussian vectors.
pub fn median_max_square(n: usize, trials: usize, seed: SeedSpec) -> f64 {
    use rayon::prelude::*;
    const CHUNKS: usize = 64;
    let mut maxima: Vec<f64> = (0..CHUNKS)
        .into_par_iter()
        .flat_map_iter(|c| {
            let count = trials / CHUNKS + usize::from(c < trials % CHUNKS);
            let mut stream = GaussianStream::new(seed.split(c as u64));
            let mut buf = vec![0.0; n];
            (0..count)
                .map(|_| {
                    stream.fill(&mut buf);
                    buf.iter().map(|g| g * g).fold(0.0, f64::max)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    crate::stats::median_in_place(&mut maxima)
}

/// Builds the two-cylinder body `B' ∩ B''` in John's position with
/// `m = ⌊Med max_i g_i²⌋` estimated from `config.trials` draws.
pub fn make_cylinder_john_body(n: usize, seed: SeedSpec, config: &CylinderConfig) -> Result<BodySpec> {
    if n < config.n_floor.max(2) {
        return Err(invalid_param(format!("cylinder body needs n >= {}, got {n}", config.n_floor)));
    }
    if config.trials == 0 {
        return Err(invalid_param("cylinder body needs at least one trial"));
    }
    let m = median_max_square(n, config.trials, seed).floor() as usize;
    BodySpec::cylinder_john(n, m.clamp(1, n - 1))
}
