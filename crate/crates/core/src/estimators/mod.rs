//! Monte Carlo estimates of Gaussian functionals of a norm.
//!
//! Throughout, `G` is a standard Gaussian vector, `f = ‖·‖^p` and
//! `∂_i f(x) = p ‖x‖^{p-1} ⟨grad(x), e_i⟩`. All estimators share the sweep in
//! [`engine`]; quantities combined into one ratio are always read from the
//! same sample stream. Main sweeps use `seed.split(0)`; a pilot or second pass
//! uses `seed.split(1)`.

mod engine;

use serde::{Deserialize, Serialize};

use crate::bodies::BodySpec;
use crate::error::{invalid_param, Error, Result};
use crate::sampler::SeedSpec;
use crate::stats::{median_in_place, wilson, Wilson, Z95};
use engine::{sweep, Sweep, Wants};

/// Upper bound on the batch count used for batch-means standard errors.
pub const N_BATCHES: usize = 64;

/// Largest moment exponent accepted. Higher moments of `‖G‖` are too heavy
/// tailed to estimate at desk-scale budgets.
pub const MAX_P: f64 = 8.0;

pub const DEFAULT_FLAT_EXPONENT: f64 = 1.0 / 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: SeedSpec,
}

impl McEstimate {
    /// `|value - target| <= k * std_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }

    /// One CSV record: body hash, operation, parameters, value, standard
    /// error, sample count and master seed. `params` must not contain commas.
    pub fn csv_record(&self, body: &BodySpec, operation: &str, params: &str) -> String {
        format!(
            "{},{},{},{:.17e},{:.17e},{},{}",
            body.descriptor_hash(),
            operation,
            params,
            self.value,
            self.std_error,
            self.n_samples,
            self.seed.master
        )
    }
}

pub const CSV_RECORD_HEADER: &str = "body_hash,operation,params,value,std_error,n_samples,master_seed";

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0 && p <= MAX_P) {
        return Err(invalid_param(format!("p must lie in [1, {MAX_P}], got {p}")));
    }
    Ok(())
}

fn check_samples(n_samples: usize, floor: usize) -> Result<()> {
    if n_samples < floor {
        return Err(invalid_param(format!("need at least {floor} samples, got {n_samples}")));
    }
    Ok(())
}

const MIN_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormMoments {
    pub p: f64,
    /// `E‖G‖^p`
    pub mean_p: McEstimate,
    /// `Var ‖G‖^p`
    pub var_p: McEstimate,
    /// Sample median of `‖G‖`.
    pub median: f64,
    pub mean_1: McEstimate,
    pub mean_2: McEstimate,
}

pub fn norm_moments(body: &BodySpec, p: f64, n_samples: usize, seed: SeedSpec) -> Result<NormMoments> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    let s = sweep(body, p, n_samples, seed, 0, Wants { norms: true, ..Wants::default() });
    let out = NormMoments {
        p,
        mean_p: s.estimate(|b| b.vp),
        var_p: s.variance_p(),
        median: 0.0,
        mean_1: s.estimate(|b| b.v),
        mean_2: s.estimate(|b| b.v2),
    };
    let mut norms = s.into_norms();
    Ok(NormMoments { median: median_in_place(&mut norms), ..out })
}

/// `p² E(‖G‖^{2p-2} ‖grad(G)‖₂²)`, the Dirichlet energy of `‖·‖^p`.
pub fn gradient_energy(body: &BodySpec, p: f64, n_samples: usize, seed: SeedSpec) -> Result<McEstimate> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    let s = sweep(body, p, n_samples, seed, 0, Wants::default());
    Ok(s.estimate(|b| b.energy))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperconcentrationReport {
    pub p: f64,
    pub variance: McEstimate,
    pub gradient_energy: McEstimate,
    /// `variance / gradient_energy`
    pub ratio: f64,
    pub ratio_std_error: f64,
    /// Talagrand's sum with the universal constant set to 1.
    pub talagrand_rhs: f64,
    pub flat_energy: f64,
    pub spiky_energy: f64,
    pub spiky_prob_per_coord: f64,
    pub flat_threshold: f64,
}

impl SuperconcentrationReport {
    /// Poincaré: `ratio <= 1` up to `k` standard errors.
    pub fn poincare_holds(&self, k: f64) -> bool {
        self.ratio <= 1.0 + k * self.ratio_std_error
    }
}

fn talagrand_sum(abs_partial: &[f64], sq_partial: &[f64], n_samples: usize) -> f64 {
    let n = n_samples as f64;
    abs_partial
        .iter()
        .zip(sq_partial)
        .map(|(&a, &s)| talagrand_term(a / n, s / n))
        .sum()
}

/// One coordinate of Talagrand's sum from `E|∂_i f|` and `E|∂_i f|²`.
pub fn talagrand_term(l1: f64, l2_sq: f64) -> f64 {
    if l2_sq <= 0.0 {
        return 0.0;
    }
    l2_sq / (1.0 + (l2_sq.sqrt() / l1).ln())
}

fn pilot_mean_norm(body: &BodySpec, n_samples: usize, seed: SeedSpec) -> f64 {
    let pilot = (n_samples / 16).max(1000);
    sweep(body, 1.0, pilot, seed, 1, Wants::default()).mean(|b| b.v)
}

fn flat_threshold(body: &BodySpec, exponent: f64, mean_norm: f64) -> f64 {
    (body.dim() as f64).powf(-exponent) * mean_norm
}

pub fn superconcentration_ratio(
    body: &BodySpec,
    p: f64,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<SuperconcentrationReport> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    let threshold = flat_threshold(body, DEFAULT_FLAT_EXPONENT, pilot_mean_norm(body, n_samples, seed));
    let wants = Wants { coords: true, flat_threshold: Some(threshold), ..Wants::default() };
    let s = sweep(body, p, n_samples, seed, 0, wants);
    let variance = s.variance_p();
    let energy = s.estimate(|b| b.energy);
    if !(energy.value > 1e-300) {
        return Err(Error::Degenerate("gradient energy is indistinguishable from zero".into()));
    }
    let ratio = variance.value / energy.value;
    let z: Vec<f64> = s
        .batches
        .iter()
        .map(|b| {
            engine::batch_variance_p(b) / energy.value
                - ratio * (b.energy / b.count as f64) / energy.value
        })
        .collect();
    let abs_partial = s.coord_totals(|b| &b.abs_partial);
    let sq_partial = s.coord_totals(|b| &b.sq_partial);
    Ok(SuperconcentrationReport {
        p,
        ratio,
        ratio_std_error: s.batch_se(&z),
        talagrand_rhs: talagrand_sum(&abs_partial, &sq_partial, n_samples),
        flat_energy: s.mean(|b| b.flat),
        spiky_energy: s.mean(|b| b.spiky),
        spiky_prob_per_coord: spiky_hit_prob(&s),
        flat_threshold: threshold,
        variance,
        gradient_energy: energy,
    })
}

fn spiky_hit_prob(s: &Sweep) -> f64 {
    let n = s.batches[0].spiky_hits.len();
    (0..n)
        .map(|i| s.batches.iter().map(|b| b.spiky_hits[i]).sum::<u64>())
        .max()
        .unwrap_or(0) as f64
        / s.n_samples as f64
}

/// Talagrand's L1–L2 sum `Σ_i E|∂_i f|² / (1 + log(√E|∂_i f|² / E|∂_i f|))`
/// with the constant omitted. Coordinates with zero second moment add 0.
pub fn talagrand_rhs(body: &BodySpec, p: f64, n_samples: usize, seed: SeedSpec) -> Result<f64> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    let s = sweep(body, p, n_samples, seed, 0, Wants { coords: true, ..Wants::default() });
    let abs_partial = s.coord_totals(|b| &b.abs_partial);
    let sq_partial = s.coord_totals(|b| &b.sq_partial);
    Ok(talagrand_sum(&abs_partial, &sq_partial, n_samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSpikyStats {
    pub threshold: f64,
    pub flat_energy: f64,
    pub spiky_energy: f64,
    /// `max_i P{S_i ≠ 0}`
    pub spiky_prob_per_coord: f64,
    /// Dirichlet energy on the same stream; equals `flat + spiky`.
    pub gradient_energy: f64,
}

/// Splits each gradient coordinate at `n^{-exponent} · Ê‖G‖` into a flat part
/// (at most the threshold in absolute value) and a spiky remainder. `Ê‖G‖`
/// comes from an independent pilot stream.
pub fn flat_spiky_stats(
    body: &BodySpec,
    p: f64,
    n_samples: usize,
    seed: SeedSpec,
    threshold_exponent: f64,
) -> Result<FlatSpikyStats> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    if !(threshold_exponent.is_finite() && threshold_exponent >= 0.0) {
        return Err(invalid_param("threshold exponent must be finite and nonnegative"));
    }
    let threshold = flat_threshold(body, threshold_exponent, pilot_mean_norm(body, n_samples, seed));
    let wants = Wants { flat_threshold: Some(threshold), ..Wants::default() };
    let s = sweep(body, p, n_samples, seed, 0, wants);
    Ok(FlatSpikyStats {
        threshold,
        flat_energy: s.mean(|b| b.flat),
        spiky_energy: s.mean(|b| b.spiky),
        spiky_prob_per_coord: spiky_hit_prob(&s),
        gradient_energy: s.mean(|b| b.energy),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceResiduals {
    /// `r_i = n Ê(‖G‖ ⟨grad, e_i⟩ G_i) / Ê‖G‖² - 1`
    pub residuals: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `Ê‖G‖²` on the same stream.
    pub ell_squared: McEstimate,
    pub n_samples: usize,
    pub seed: SeedSpec,
}

impl BalanceResiduals {
    /// Largest `|r_i| / SE_i`.
    pub fn max_z(&self) -> f64 {
        self.residuals
            .iter()
            .zip(&self.std_errors)
            .map(|(r, se)| if *se > 0.0 { r.abs() / se } else if *r == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    /// Every `|r_i| <= k SE_i`.
    pub fn balanced_within(&self, k: f64) -> bool {
        self.max_z() <= k
    }
}

pub const MIN_BALANCE_SAMPLES: usize = 1000;

pub fn balance_residuals(body: &BodySpec, n_samples: usize, seed: SeedSpec) -> Result<BalanceResiduals> {
    check_samples(n_samples, MIN_BALANCE_SAMPLES)?;
    let s = sweep(body, 1.0, n_samples, seed, 0, Wants { balance: true, ..Wants::default() });
    Ok(residuals_from(body.dim(), &s))
}

fn residuals_from(n: usize, s: &Sweep) -> BalanceResiduals {
    let nf = n as f64;
    let ell = s.estimate(|b| b.v2);
    let totals = s.coord_totals(|b| &b.balance);
    let means: Vec<f64> = totals.iter().map(|t| t / s.n_samples as f64).collect();
    let residuals: Vec<f64> = means.iter().map(|a| nf * a / ell.value - 1.0).collect();
    let mut z = vec![0.0; s.batch_count()];
    let std_errors = (0..n)
        .map(|i| {
            for (zb, b) in z.iter_mut().zip(&s.batches) {
                let c = b.count as f64;
                *zb = nf * (b.balance[i] / c / ell.value - means[i] * (b.v2 / c) / (ell.value * ell.value));
            }
            s.batch_se(&z)
        })
        .collect();
    BalanceResiduals { residuals, std_errors, ell_squared: ell, n_samples: s.n_samples, seed: s.seed }
}

/// `k(B) = (E‖G‖ / Lip)²` with a delta-method standard error.
pub fn dvoretzky_dimension(body: &BodySpec, n_samples: usize, seed: SeedSpec) -> Result<McEstimate> {
    check_samples(n_samples, MIN_SAMPLES)?;
    let lip = body.lipschitz_constant();
    let mean = sweep(body, 1.0, n_samples, seed, 0, Wants::default()).estimate(|b| b.v);
    Ok(McEstimate {
        value: (mean.value / lip).powi(2),
        std_error: 2.0 * mean.value * mean.std_error / (lip * lip),
        ..mean
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientRatioCondition {
    pub c: f64,
    /// `Ê‖G‖`
    pub lhs: McEstimate,
    /// `n^c Ê‖grad(G)‖₂`
    pub rhs: McEstimate,
    /// `lhs <= rhs` at the point estimates.
    pub holds: bool,
    /// The two sides differ by more than three combined standard errors.
    pub decisive: bool,
}

pub fn gradient_ratio_condition(
    body: &BodySpec,
    c: f64,
    n_samples: usize,
    seed: SeedSpec,
) -> Result<GradientRatioCondition> {
    if !(c > 0.0 && c <= 0.5) {
        return Err(invalid_param(format!("c must lie in (0, 1/2], got {c}")));
    }
    check_samples(n_samples, MIN_SAMPLES)?;
    let s = sweep(body, 1.0, n_samples, seed, 0, Wants::default());
    let factor = (body.dim() as f64).powf(c);
    let lhs = s.estimate(|b| b.v);
    let grad = s.estimate(|b| b.grad_l2);
    let rhs = McEstimate { value: factor * grad.value, std_error: factor * grad.std_error, ..grad };
    let diff: Vec<f64> = s.batch_means(|b| b.v - factor * b.grad_l2);
    let se = s.batch_se(&diff);
    Ok(GradientRatioCondition {
        c,
        holds: lhs.value <= rhs.value,
        decisive: (lhs.value - rhs.value).abs() > 3.0 * se,
        lhs,
        rhs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L1GradientCheck {
    pub p: f64,
    /// `Ê‖grad(G)‖₁^p`
    pub lhs: McEstimate,
    /// `(π/2)^{p/2} Ê‖G‖^p`
    pub rhs: McEstimate,
    /// `rhs - lhs`
    pub margin: f64,
    pub margin_std_error: f64,
    /// `lhs <= rhs + 3 SE`
    pub holds: bool,
}

pub fn l1_gradient_check(body: &BodySpec, p: f64, n_samples: usize, seed: SeedSpec) -> Result<L1GradientCheck> {
    check_p(p)?;
    check_samples(n_samples, MIN_SAMPLES)?;
    let s = sweep(body, p, n_samples, seed, 0, Wants { l1: true, ..Wants::default() });
    let factor = (std::f64::consts::FRAC_PI_2).powf(p / 2.0);
    let lhs = s.estimate(|b| b.grad_l1p);
    let moment = s.estimate(|b| b.vp);
    let rhs = McEstimate { value: factor * moment.value, std_error: factor * moment.std_error, ..moment };
    let margin = rhs.value - lhs.value;
    let diff = s.batch_means(|b| factor * b.vp - b.grad_l1p);
    let margin_std_error = s.batch_se(&diff);
    Ok(L1GradientCheck {
        p,
        holds: margin >= -3.0 * margin_std_error,
        lhs,
        rhs,
        margin,
        margin_std_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurve {
    pub n: usize,
    pub eps_grid: Vec<f64>,
    pub median: f64,
    /// `P̂{|‖G‖ - Med| >= ε Med}` per grid point.
    pub probs: Vec<f64>,
    pub counts: Vec<u64>,
    pub intervals: Vec<Wilson>,
    pub n_samples: usize,
    pub seed: SeedSpec,
}

pub const MIN_DEVIATION_SAMPLES: usize = 10_000;

/// Two-pass deviation probabilities: the median comes from `seed.split(0)`,
/// the counts from the independent stream `seed.split(1)`. Grid points above
/// 1 are accepted and simply yield zero counts.
pub fn deviation_curve(body: &BodySpec, eps_grid: &[f64], n_samples: usize, seed: SeedSpec) -> Result<DeviationCurve> {
    if eps_grid.is_empty() {
        return Err(invalid_param("empty epsilon grid"));
    }
    if eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_param("epsilon grid must be positive, finite and strictly ascending"));
    }
    check_samples(n_samples, MIN_DEVIATION_SAMPLES)?;
    let mut first = sweep(body, 1.0, n_samples, seed, 0, Wants { norms: true, ..Wants::default() }).into_norms();
    let median = median_in_place(&mut first);
    drop(first);
    let second = sweep(body, 1.0, n_samples, seed, 1, Wants { norms: true, ..Wants::default() });
    let counts: Vec<u64> = eps_grid
        .iter()
        .map(|eps| {
            let cut = eps * median;
            second
                .batches
                .iter()
                .map(|b| b.norms.iter().filter(|v| (**v - median).abs() >= cut).count() as u64)
                .sum()
        })
        .collect();
    let intervals: Vec<Wilson> = counts.iter().map(|&c| wilson(c, n_samples as u64, Z95)).collect();
    Ok(DeviationCurve {
        n: body.dim(),
        eps_grid: eps_grid.to_vec(),
        median,
        probs: intervals.iter().map(|w| w.estimate).collect(),
        counts,
        intervals,
        n_samples,
        seed,
    })
}
