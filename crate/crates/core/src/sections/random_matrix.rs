//! Singular values: the ellipsoidal factor of cylinder sections and extreme
//! singular values of rectangular Gaussian matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bodies::{BodySpec, Family};
use crate::error::{invalid_param, Error, Result};
use crate::sampler::{GaussianStream, SeedSpec, SubspaceBasis};
use crate::stats::{wilson, Wilson, Z95};

/// A semi-axis of an ellipsoidal cylinder. `Infinite` marks directions the
/// Euclidean constraint does not see.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiAxis {
    Finite(f64),
    Infinite,
}

impl SemiAxis {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Self::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(*v),
            Self::Infinite => None,
        }
    }
}

/// Singular values below this multiple of the largest possible one count
/// as zero.
const RANK_TOLERANCE: f64 = 1e-12;

/// Semi-axes `1/s_j` of the Euclidean factor `B'' ∩ E`, where `s_1 ≥ … ≥ s_k`
/// are the singular values of the tail block of `D⁻¹Q` (the last `m` rows).
/// Returned in increasing order; zero singular values give
/// [`SemiAxis::Infinite`].
pub fn cylinder_section_semiaxes(body: &BodySpec, basis: &SubspaceBasis) -> Result<Vec<SemiAxis>> {
    let Family::CylinderJohn { m } = body.family() else {
        return Err(Error::WrongFamily { expected: "cylinder_john", got: body.family().name().to_string() });
    };
    let n = body.dim();
    if basis.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: basis.n() });
    }
    let k = basis.k();
    let head = n - m;
    let q = basis.columns();
    let diag = body.diag();
    let block = DMatrix::from_fn(*m, k, |i, j| q[(head + i, j)] / diag[head + i]);
    let scale = diag[head..].iter().fold(0.0f64, |a, d| a.max(1.0 / d));
    let mut s: Vec<f64> = block.singular_values().iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s.resize(k, 0.0);
    Ok(s.into_iter()
        .map(|v| if v <= RANK_TOLERANCE * scale { SemiAxis::Infinite } else { SemiAxis::Finite(1.0 / v) })
        .collect())
}

pub const DEFAULT_EXTREME_CS: [f64; 3] = [1.0 / 64.0, 1.0 / 16.0, 0.25];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremeRow {
    pub c: f64,
    /// `P{s_max ≤ √m + c√k}`
    pub p_smax_below: Wilson,
    /// `P{s_min ≥ √m − c√k}`
    pub p_smin_above: Wilson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianExtremes {
    pub m: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: SeedSpec,
    pub rows: Vec<ExtremeRow>,
}

/// Extreme singular values of `trials` independent `m x k` standard Gaussian
/// matrices, as square roots of the eigenvalues of `AᵀA`. Trial `t` reads
/// stream `seed.split(t)`.
pub fn extreme_singular_values(m: usize, k: usize, trials: usize, seed: SeedSpec) -> Vec<(f64, f64)> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut stream = GaussianStream::new(seed.split(t as u64));
            let a = DMatrix::from_fn(m, k, |_, _| stream.next());
            let gram = a.tr_mul(&a);
            let eig = gram.symmetric_eigenvalues();
            let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            (lo.max(0.0).sqrt(), hi.max(0.0).sqrt())
        })
        .collect()
}

pub fn gaussian_extremes_experiment(
    m: usize,
    k: usize,
    trials: usize,
    seed: SeedSpec,
    cs: &[f64],
) -> Result<GaussianExtremes> {
    if k == 0 || k > m {
        return Err(invalid_param(format!("need 1 <= k <= m, got m={m}, k={k}")));
    }
    if trials < 256 {
        return Err(invalid_param(format!("need at least 256 trials, got {trials}")));
    }
    if cs.is_empty() || cs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(invalid_param("c values must be finite and nonnegative"));
    }
    let extremes = extreme_singular_values(m, k, trials, seed);
    let (sm, sk) = ((m as f64).sqrt(), (k as f64).sqrt());
    let rows = cs
        .iter()
        .map(|&c| {
            let below = extremes.iter().filter(|(_, hi)| *hi <= sm + c * sk).count() as u64;
            let above = extremes.iter().filter(|(lo, _)| *lo >= sm - c * sk).count() as u64;
            ExtremeRow {
                c,
                p_smax_below: wilson(below, trials as u64, Z95),
                p_smin_above: wilson(above, trials as u64, Z95),
            }
        })
        .collect();
    Ok(GaussianExtremes { m, k, trials, seed, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::haar_subspace;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn head_only_frames_have_infinite_axes() {
        let body = BodySpec::cylinder_john(10, 4).unwrap();
        let q = SubspaceBasis::coordinate(10, &[0, 3]).unwrap();
        let axes = cylinder_section_semiaxes(&body, &q).unwrap();
        assert_eq!(axes, vec![SemiAxis::Infinite; 2]);
    }

    #[test]
    fn tail_frames_have_unit_axes() {
        let body = BodySpec::cylinder_john(10, 4).unwrap();
        let q = SubspaceBasis::coordinate(10, &[7, 9]).unwrap();
        let axes = cylinder_section_semiaxes(&body, &q).unwrap();
        for a in axes {
            assert!((a.finite().unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn wider_than_tail_gives_infinite_axes() {
        let body = BodySpec::cylinder_john(12, 2).unwrap();
        let q = haar_subspace(SeedSpec::new(1, 0), 12, 4).unwrap();
        let axes = cylinder_section_semiaxes(&body, &q).unwrap();
        assert_eq!(axes.iter().filter(|a| a.is_infinite()).count(), 2);
        assert!(axes[0].finite().unwrap() <= axes[1].finite().unwrap());
        assert!(cylinder_section_semiaxes(&BodySpec::cube(12).unwrap(), &q).is_err());
    }

    #[test]
    fn semiaxes_describe_the_euclidean_factor() {
        // Along the right singular vector v_j, ‖tail(Qv_j)‖₂ = s_j, so the
        // boundary of B'' ∩ E sits at distance 1/s_j.
        let n = 40;
        let body = BodySpec::cylinder_john(n, 10).unwrap();
        let q = haar_subspace(SeedSpec::new(2, 0), n, 3).unwrap();
        let axes = cylinder_section_semiaxes(&body, &q).unwrap();
        let block = q.columns().rows(n - 10, 10).into_owned();
        let svd = block.svd(false, true);
        let vt = svd.v_t.unwrap();
        for (j, s) in svd.singular_values.iter().enumerate() {
            let u: Vec<f64> = vt.row(j).iter().cloned().collect();
            let mut x = vec![0.0; n];
            q.embed_into(&u, &mut x);
            let tail = x[n - 10..].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((tail - s).abs() < 1e-12);
            assert!(axes.iter().any(|a| (a.finite().unwrap() - 1.0 / s).abs() < 1e-10));
        }
    }

    #[test]
    fn single_column_follows_chi() {
        let (m, trials) = (30, 4000);
        let out = gaussian_extremes_experiment(m, 1, trials, SeedSpec::new(3, 0), &[0.25]).unwrap();
        let chi2 = ChiSquared::new(m as f64).unwrap();
        let cut_hi = (m as f64).sqrt() + 0.25;
        let cut_lo = (m as f64).sqrt() - 0.25;
        let row = &out.rows[0];
        let band = |p: f64| 3.0 * (p * (1.0 - p) / trials as f64).sqrt();
        let p_hi = chi2.cdf(cut_hi * cut_hi);
        let p_lo = 1.0 - chi2.cdf(cut_lo * cut_lo);
        assert!((row.p_smax_below.estimate - p_hi).abs() < band(p_hi), "{} vs {p_hi}", row.p_smax_below.estimate);
        assert!((row.p_smin_above.estimate - p_lo).abs() < band(p_lo), "{} vs {p_lo}", row.p_smin_above.estimate);
    }

    #[test]
    fn square_matrices_have_a_hard_edge() {
        let out = gaussian_extremes_experiment(40, 40, 256, SeedSpec::new(4, 0), &DEFAULT_EXTREME_CS).unwrap();
        assert_eq!(out.rows[2].p_smin_above.estimate, 0.0);
    }

    #[test]
    fn experiment_validation() {
        assert!(gaussian_extremes_experiment(10, 11, 256, SeedSpec::new(0, 0), &[0.1]).is_err());
        assert!(gaussian_extremes_experiment(10, 5, 255, SeedSpec::new(0, 0), &[0.1]).is_err());
        assert!(gaussian_extremes_experiment(10, 5, 256, SeedSpec::new(0, 0), &[]).is_err());
    }
}
