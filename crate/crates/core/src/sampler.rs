//! Deterministic Gaussian streams and Haar-distributed subspaces.
//!
//! A [`SeedSpec`] selects a ChaCha8 key (derived from `master`) and a ChaCha
//! stream id (`stream`). ChaCha is a counter-based generator, so any number of
//! streams can be opened independently without shared state. Normal variates
//! come from the ziggurat sampler in `rand_distr::StandardNormal` applied to
//! that stream; the method is fixed, so a seed reproduces the same sequence on
//! every platform that rounds IEEE-754 doubles correctly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};

/// Identifies one independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub stream: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

// SplitMix64 finalizer; a bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub const fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    /// Derives the seed of child `child`.
    ///
    /// The child's key is a bijective mix of the parent's `(master, stream)`
    /// pair and its stream id is `child`, so distinct children of one parent
    /// never collide.
    pub fn split(self, child: u64) -> SeedSpec {
        let key = mix64(self.master ^ mix64(self.stream.wrapping_add(GOLDEN_GAMMA)));
        SeedSpec { master: key, stream: child }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master;
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN_GAMMA);
            chunk.copy_from_slice(&mix64(state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream);
        rng
    }
}

pub fn split_seed(seed: SeedSpec, child: u64) -> SeedSpec {
    seed.split(child)
}

/// A sequential source of standard normal variates bound to one seed.
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: SeedSpec) -> Self {
        Self { rng: seed.rng() }
    }

    #[inline]
    pub fn next(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Uniform variate in `[0, 1)` from the same stream.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

pub fn gaussian_vector(seed: SeedSpec, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid_param("gaussian_vector needs n >= 1"));
    }
    let mut out = vec![0.0; n];
    GaussianStream::new(seed).fill(&mut out);
    Ok(out)
}

/// An `n x k` frame with orthonormal columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceBasis {
    columns: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wraps a matrix whose columns are orthonormal to within `1e-10`.
    pub fn from_columns(columns: DMatrix<f64>) -> Result<Self> {
        let (n, k) = columns.shape();
        if k == 0 || k > n {
            return Err(invalid_param(format!("frame shape {n}x{k} needs 1 <= k <= n")));
        }
        let basis = Self { columns };
        let dev = basis.orthonormality_defect();
        if !(dev <= 1e-10) {
            return Err(invalid_param(format!("columns are not orthonormal (defect {dev:e})")));
        }
        Ok(basis)
    }

    /// The first `k` standard basis vectors selected by `indices`.
    pub fn coordinate(n: usize, indices: &[usize]) -> Result<Self> {
        let mut m = DMatrix::zeros(n, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            if i >= n {
                return Err(invalid_param(format!("coordinate index {i} out of range for n={n}")));
            }
            m[(i, j)] = 1.0;
        }
        Self::from_columns(m)
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn k(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// max-abs entry of `QᵀQ - I`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.columns.transpose() * &self.columns;
        let k = gram.nrows();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Writes `Q u` into `out`.
    pub fn embed_into(&self, u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &uj) in u.iter().enumerate() {
            if uj == 0.0 {
                continue;
            }
            let col = self.columns.column(j);
            for (o, &q) in out.iter_mut().zip(col.iter()) {
                *o += q * uj;
            }
        }
    }

    /// Returns `Qᵀ g`.
    pub fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|j| self.columns.column(j).iter().zip(g).map(|(q, x)| q * x).sum())
            .collect()
    }
}

/// Orthonormal factor of an `n x k` standard Gaussian matrix, with column
/// signs chosen so the triangular factor has a positive diagonal. Under that
/// convention the factorisation is unique and the span is Haar distributed.
pub fn haar_subspace(seed: SeedSpec, n: usize, k: usize) -> Result<SubspaceBasis> {
    if k == 0 || k > n {
        return Err(invalid_param(format!("haar_subspace needs 1 <= k <= n (n={n}, k={k})")));
    }
    let mut stream = GaussianStream::new(seed);
    let gaussian = DMatrix::from_fn(n, k, |_, _| stream.next());
    let qr = gaussian.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(SubspaceBasis { columns: q })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_vector() {
        let s = SeedSpec::new(7, 3);
        assert_eq!(gaussian_vector(s, 32).unwrap(), gaussian_vector(s, 32).unwrap());
        assert_ne!(gaussian_vector(s, 32).unwrap(), gaussian_vector(s.split(0), 32).unwrap());
    }

    #[test]
    fn zero_length_is_an_error() {
        assert!(gaussian_vector(SeedSpec::new(0, 0), 0).is_err());
    }

    #[test]
    fn split_is_injective_on_children() {
        let s = SeedSpec::new(11, 5);
        let mut seen = std::collections::HashSet::new();
        for c in 0..10_000u64 {
            assert!(seen.insert(s.split(c)));
        }
        assert_eq!(s.split(42), s.split(42));
    }

    #[test]
    fn scalar_moments() {
        let n = 1_000_000usize;
        let x = gaussian_vector(SeedSpec::new(1, 0), n).unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 100_000usize;
        let s = SeedSpec::new(99, 0);
        let a = gaussian_vector(s.split(1), n).unwrap();
        let b = gaussian_vector(s.split(2), n).unwrap();
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn haar_frame_is_orthonormal() {
        let q = haar_subspace(SeedSpec::new(3, 1), 50, 5).unwrap();
        assert!(q.orthonormality_defect() <= 1e-12);
    }

    #[test]
    fn square_haar_frame_is_orthogonal() {
        let q = haar_subspace(SeedSpec::new(3, 2), 12, 12).unwrap();
        let det = q.columns().determinant();
        assert!((det.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn haar_rejects_k_above_n() {
        assert!(haar_subspace(SeedSpec::new(0, 0), 3, 4).is_err());
        assert!(haar_subspace(SeedSpec::new(0, 0), 3, 0).is_err());
    }

    #[test]
    fn uniform_direction_has_zero_mean() {
        let trials = 100_000u64;
        let root = SeedSpec::new(5, 0);
        let mut sum = [0.0f64; 3];
        for t in 0..trials {
            let q = haar_subspace(root.split(t), 3, 1).unwrap();
            for (s, v) in sum.iter_mut().zip(q.columns().column(0).iter()) {
                *s += v;
            }
        }
        let tol = 4.0 * (1.0 / 3f64.sqrt()) / (trials as f64).sqrt();
        for s in sum {
            assert!((s / trials as f64).abs() < tol);
        }
    }

    #[test]
    fn embed_and_pull_back_are_adjoint() {
        let q = haar_subspace(SeedSpec::new(8, 8), 20, 3).unwrap();
        let u = [0.3, -1.2, 0.7];
        let g = gaussian_vector(SeedSpec::new(8, 9), 20).unwrap();
        let mut qu = vec![0.0; 20];
        q.embed_into(&u, &mut qu);
        let lhs: f64 = qu.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = q.pull_back(&g).iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
