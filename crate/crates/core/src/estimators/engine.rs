//! Batch-parallel sweep over Gaussian samples.
//!
//! A sweep draws `n_samples` standard Gaussian vectors, split into at most
//! [`N_BATCHES`] batches; batch `b` of pass `q` reads its own stream
//! `seed.split(q).split(b)`. Batches
//! are evaluated in parallel, collected in index order and reduced with
//! [`tree_sum`], so every statistic is a pure function of the seed.

use rayon::prelude::*;

use super::{McEstimate, N_BATCHES};
use crate::bodies::BodySpec;
use crate::sampler::{GaussianStream, SeedSpec};
use crate::stats::{sample_variance, tree_sum};

/// Which optional accumulators a sweep maintains.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Wants {
    /// Per-coordinate first and second moments of `|∂_i f|`.
    pub coords: bool,
    /// Per-coordinate `‖G‖ ⟨grad, e_i⟩ G_i`.
    pub balance: bool,
    /// Keep every sampled norm value (for medians).
    pub norms: bool,
    /// `E ‖grad‖₁^p`.
    pub l1: bool,
    /// Flat/spiky split of the gradient at this threshold.
    pub flat_threshold: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Batch {
    pub count: usize,
    pub v: f64,
    pub v2: f64,
    pub vp: f64,
    pub v2p: f64,
    /// `p² ‖G‖^{2p-2} ‖grad‖₂²`
    pub energy: f64,
    pub grad_l2: f64,
    pub grad_l1p: f64,
    pub flat: f64,
    pub spiky: f64,
    pub abs_partial: Vec<f64>,
    pub sq_partial: Vec<f64>,
    pub spiky_hits: Vec<u64>,
    pub balance: Vec<f64>,
    pub norms: Vec<f64>,
}

impl Batch {
    fn mean(&self, sum: f64) -> f64 {
        sum / self.count as f64
    }
}

pub(crate) struct Sweep {
    pub batches: Vec<Batch>,
    pub n_samples: usize,
    pub seed: SeedSpec,
}

pub(crate) fn batch_count(n_samples: usize) -> usize {
    N_BATCHES.min(n_samples / 2).max(1)
}

#[inline]
fn power(t: f64, p: f64) -> f64 {
    if p == 1.0 {
        t
    } else if p == 2.0 {
        t * t
    } else {
        t.powf(p)
    }
}

pub(crate) fn sweep(body: &BodySpec, p: f64, n_samples: usize, seed: SeedSpec, pass: u64, wants: Wants) -> Sweep {
    let pass_seed = seed.split(pass);
    let n = body.dim();
    let batches = batch_count(n_samples);
    let per = n_samples / batches;
    let extra = n_samples % batches;
    let batches: Vec<Batch> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = per + usize::from(b < extra);
            run_batch(body, p, count, pass_seed.split(b as u64), wants)
        })
        .collect();
    debug_assert_eq!(n, body.dim());
    Sweep { batches, n_samples, seed }
}

fn run_batch(body: &BodySpec, p: f64, count: usize, seed: SeedSpec, wants: Wants) -> Batch {
    let n = body.dim();
    let per_coord = |on: bool| if on { vec![0.0; n] } else { Vec::new() };
    let mut acc = Batch {
        count,
        abs_partial: per_coord(wants.coords),
        sq_partial: per_coord(wants.coords),
        balance: per_coord(wants.balance),
        spiky_hits: if wants.flat_threshold.is_some() { vec![0; n] } else { Vec::new() },
        norms: Vec::with_capacity(if wants.norms { count } else { 0 }),
        ..Batch::default()
    };
    let mut stream = GaussianStream::new(seed);
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let threshold = wants.flat_threshold.unwrap_or(f64::INFINITY);
    for _ in 0..count {
        stream.fill(&mut x);
        let v = body.eval_into(&x, &mut g);
        let vp = power(v, p);
        let vpm1 = if p == 1.0 { 1.0 } else { v.powf(p - 1.0) };
        let scale = p * vpm1;
        acc.v += v;
        acc.v2 += v * v;
        acc.vp += vp;
        acc.v2p += vp * vp;

        let mut g2 = 0.0;
        let mut g1 = 0.0;
        let mut flat = 0.0;
        let mut spiky = 0.0;
        for i in 0..n {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let sq = gi * gi;
            g2 += sq;
            g1 += gi.abs();
            if wants.coords {
                let d = scale * gi.abs();
                acc.abs_partial[i] += d;
                acc.sq_partial[i] += d * d;
            }
            if wants.flat_threshold.is_some() {
                if gi.abs() <= threshold {
                    flat += sq;
                } else {
                    spiky += sq;
                    acc.spiky_hits[i] += 1;
                }
            }
            if wants.balance {
                acc.balance[i] += v * gi * x[i];
            }
        }
        let s2 = scale * scale;
        acc.energy += s2 * g2;
        acc.grad_l2 += g2.sqrt();
        if wants.l1 {
            acc.grad_l1p += power(g1, p);
        }
        acc.flat += s2 * flat;
        acc.spiky += s2 * spiky;
        if wants.norms {
            acc.norms.push(v);
        }
    }
    acc
}

impl Sweep {
    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    pub fn total(&self, f: impl Fn(&Batch) -> f64) -> f64 {
        let sums: Vec<f64> = self.batches.iter().map(f).collect();
        tree_sum(&sums)
    }

    pub fn mean(&self, f: impl Fn(&Batch) -> f64) -> f64 {
        self.total(f) / self.n_samples as f64
    }

    /// Per-batch means of a summed statistic.
    pub fn batch_means(&self, f: impl Fn(&Batch) -> f64) -> Vec<f64> {
        self.batches.iter().map(|b| b.mean(f(b))).collect()
    }

    /// Standard error from the spread of per-batch values of a linearised
    /// statistic.
    pub fn batch_se(&self, per_batch: &[f64]) -> f64 {
        (sample_variance(per_batch) / per_batch.len() as f64).sqrt()
    }

    pub fn estimate(&self, f: impl Fn(&Batch) -> f64 + Copy) -> McEstimate {
        let value = self.mean(f);
        let se = self.batch_se(&self.batch_means(f));
        McEstimate { value, std_error: se, n_samples: self.n_samples, seed: self.seed }
    }

    /// Unbiased variance of `‖G‖^p` with a batch-means standard error.
    pub fn variance_p(&self) -> McEstimate {
        let n = self.n_samples as f64;
        let sum = self.total(|b| b.vp);
        let sum2 = self.total(|b| b.v2p);
        let value = (sum2 - sum * sum / n) / (n - 1.0);
        let per_batch: Vec<f64> = self.batches.iter().map(batch_variance_p).collect();
        McEstimate {
            value,
            std_error: self.batch_se(&per_batch),
            n_samples: self.n_samples,
            seed: self.seed,
        }
    }

    /// Per-coordinate totals of a vector accumulator, tree-reduced.
    pub fn coord_totals(&self, f: impl Fn(&Batch) -> &[f64]) -> Vec<f64> {
        let n = f(&self.batches[0]).len();
        let mut column = vec![0.0; self.batches.len()];
        (0..n)
            .map(|i| {
                for (c, b) in column.iter_mut().zip(&self.batches) {
                    *c = f(b)[i];
                }
                tree_sum(&column)
            })
            .collect()
    }

    pub fn into_norms(self) -> Vec<f64> {
        self.batches.into_iter().flat_map(|b| b.norms).collect()
    }
}

pub(crate) fn batch_variance_p(b: &Batch) -> f64 {
    let c = b.count as f64;
    if b.count < 2 {
        return 0.0;
    }
    (b.v2p - b.vp * b.vp / c) / (c - 1.0)
}
