//! Canonical positions: the `l`-position of an unconditional body among
//! diagonal scalings, and the contact-point check for the cylinder body.
//!
//! A body `D(B)` is in the `l`-position when `E‖G‖² = 1` and the balancing
//! identity `E(‖G‖ ∂_i‖G‖ G_i) = E‖G‖² / n` holds for every coordinate. The
//! solver drives the relative violations `r_i` to zero with a multiplicative
//! step on `log d`, renormalising the scale at every iteration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bodies::{BodySpec, Family};
use crate::error::{invalid_param, Error, Result};
use crate::estimators::{balance_residuals, norm_moments, BalanceResiduals, MIN_BALANCE_SAMPLES};
use crate::sampler::{GaussianStream, SeedSpec};

/// Diagonal entries outside this range count as divergence.
pub const DIAG_BOUNDS: (f64, f64) = (1e-8, 1e8);

/// Floor on `1 + r_i` inside the update, so a coordinate that never carries
/// the gradient is damped rather than collapsed to zero.
const RESIDUAL_FLOOR: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub step: f64,
    pub max_iters: usize,
    /// Iteration `t` uses `samples_schedule[min(t, len - 1)]` samples.
    pub samples_schedule: Vec<usize>,
    pub seed: SeedSpec,
    /// Number of final-stage iterates whose geometric mean is returned.
    pub min_average: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            max_iters: 200,
            samples_schedule: vec![4_000, 8_000, 16_000, 32_000],
            seed: SeedSpec::new(0, 0),
            min_average: 32,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 2.0) {
            return Err(invalid_param(format!("step must lie in (0, 2], got {}", self.step)));
        }
        if self.max_iters == 0 {
            return Err(invalid_param("max_iters must be positive"));
        }
        if self.samples_schedule.is_empty() {
            return Err(invalid_param("samples_schedule is empty"));
        }
        if self.samples_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid_param("samples_schedule must be nondecreasing"));
        }
        if self.samples_schedule[0] < MIN_BALANCE_SAMPLES {
            return Err(invalid_param(format!("schedule budgets need at least {MIN_BALANCE_SAMPLES} samples")));
        }
        Ok(())
    }

    fn budget(&self, t: usize) -> usize {
        self.samples_schedule[t.min(self.samples_schedule.len() - 1)]
    }

    fn final_stage(&self, t: usize) -> bool {
        t + 1 >= self.samples_schedule.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub samples: usize,
    pub max_abs_residual: f64,
    pub max_z: f64,
    /// `log det D⁻¹` after rescaling to `Ê‖G‖² = 1`, the objective the
    /// solver ascends.
    pub log_det: f64,
    pub log_det_std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllPositionResult {
    pub diag: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_std_errors: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `Ê‖G‖²` of the returned body on an independent stream.
    pub ell_value: f64,
    pub ell_std_error: f64,
    pub seed: SeedSpec,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl EllPositionResult {
    /// The input body's family with the solved diagonal.
    pub fn body(&self, like: &BodySpec) -> Result<BodySpec> {
        like.with_diagonal(self.diag.clone())
    }
}

/// Multiplies the diagonal by the scalar that makes `Ê‖G‖² = 1`.
pub fn ell_norm_normalize(body: &BodySpec, n_samples: usize, seed: SeedSpec) -> Result<BodySpec> {
    let m = norm_moments(body, 2.0, n_samples, seed)?;
    body.scaled(m.mean_2.value.sqrt())
}

fn log_det_of(diag: &[f64], r: &BalanceResiduals) -> (f64, f64) {
    let n = diag.len() as f64;
    let ell = r.ell_squared;
    let log_det = -diag.iter().map(|d| d.ln()).sum::<f64>() - 0.5 * n * ell.value.ln();
    (log_det, 0.5 * n * ell.std_error / ell.value)
}

fn in_bounds(diag: &[f64]) -> bool {
    diag.iter().all(|d| d.is_finite() && *d >= DIAG_BOUNDS.0 && *d <= DIAG_BOUNDS.1)
}

fn ell_ok(r: &BalanceResiduals, k: f64) -> bool {
    r.ell_squared.within(1.0, k)
}

/// Damped stochastic fixed point for the `l`-position among diagonal
/// scalings of `body`, starting from its current diagonal.
///
/// Each iteration draws one fresh sample set, reads the residuals and the
/// scale from it, rescales to `Ê‖G‖² = 1` and applies
/// `d_i ← d_i (1 + r_i)^{step/2}`. Once the final budget is reached the
/// geometric mean of the last `min_average` iterates is checked on an
/// independent stream; the solve stops when every residual and the scale are
/// within 3 standard errors there.
pub fn solve_ell_position(body: &BodySpec, opts: &SolveOptions) -> Result<EllPositionResult> {
    opts.validate()?;
    let n = body.dim();
    let iter_seed = opts.seed.split(0);
    let check_seed = opts.seed.split(1);
    let window = opts.min_average.max(1);

    let mut d = body.diag().to_vec();
    let mut trace = Vec::new();
    let mut recent: VecDeque<Vec<f64>> = VecDeque::with_capacity(window);
    let mut checks = 0u64;
    let mut diagnostic = None;
    let mut iterations = 0;

    for t in 0..opts.max_iters {
        iterations = t + 1;
        let budget = opts.budget(t);
        let current = body.with_diagonal(d.clone())?;
        let r = balance_residuals(&current, budget, iter_seed.split(t as u64))?;
        let scale = r.ell_squared.value.sqrt();
        if !(scale.is_finite() && scale > 0.0) {
            diagnostic = Some(format!("degenerate scale {scale} at iteration {t}"));
            break;
        }
        let (log_det, log_det_std_error) = log_det_of(&d, &r);
        trace.push(TraceEntry {
            iteration: t,
            samples: budget,
            max_abs_residual: r.max_abs(),
            max_z: r.max_z(),
            log_det,
            log_det_std_error,
        });
        d.iter_mut().for_each(|di| *di *= scale);
        if opts.final_stage(t) {
            // The normalised iterate joins the window before its update.
            if recent.len() == window {
                recent.pop_front();
            }
            recent.push_back(d.iter().map(|x| x.ln()).collect());
        }
        for (di, ri) in d.iter_mut().zip(&r.residuals) {
            *di *= (1.0 + ri).max(RESIDUAL_FLOOR).powf(0.5 * opts.step);
        }
        if !in_bounds(&d) {
            diagnostic = Some(format!("diagonal left [{:e}, {:e}] at iteration {t}", DIAG_BOUNDS.0, DIAG_BOUNDS.1));
            break;
        }
        if recent.len() == window && r.balanced_within(3.0) {
            let candidate = geometric_mean(&recent, n);
            let (result, ok) = finish(body, candidate, budget, check_seed.split(checks), opts.seed)?;
            checks += 1;
            if ok {
                return Ok(EllPositionResult { iterations, converged: true, trace, ..result });
            }
        }
    }

    let candidate = if recent.is_empty() { d.clone() } else { geometric_mean(&recent, n) };
    if !in_bounds(&candidate) {
        return Ok(EllPositionResult {
            diag: d,
            residuals: Vec::new(),
            residual_std_errors: Vec::new(),
            iterations,
            converged: false,
            ell_value: f64::NAN,
            ell_std_error: f64::NAN,
            seed: opts.seed,
            trace,
            diagnostic,
        });
    }
    let budget = opts.budget(iterations.saturating_sub(1));
    let (result, ok) = finish(body, candidate, budget, check_seed.split(checks), opts.seed)?;
    Ok(EllPositionResult {
        iterations,
        converged: ok && diagnostic.is_none(),
        trace,
        diagnostic: diagnostic.or_else(|| (!ok).then(|| "max_iters reached".to_string())),
        ..result
    })
}

fn geometric_mean(logs: &VecDeque<Vec<f64>>, n: usize) -> Vec<f64> {
    let w = logs.len() as f64;
    (0..n).map(|i| (logs.iter().map(|l| l[i]).sum::<f64>() / w).exp()).collect()
}

/// Rescales `candidate` on one independent stream and reports residuals and
/// scale on another.
fn finish(
    body: &BodySpec,
    candidate: Vec<f64>,
    budget: usize,
    seed: SeedSpec,
    master: SeedSpec,
) -> Result<(EllPositionResult, bool)> {
    let shaped = body.with_diagonal(candidate)?;
    let scaled = ell_norm_normalize(&shaped, budget, seed.split(0))?;
    let r = balance_residuals(&scaled, budget, seed.split(1))?;
    let ok = r.balanced_within(3.0) && ell_ok(&r, 3.0);
    Ok((
        EllPositionResult {
            diag: scaled.diag().to_vec(),
            ell_value: r.ell_squared.value,
            ell_std_error: r.ell_squared.std_error,
            residuals: r.residuals,
            residual_std_errors: r.std_errors,
            iterations: 0,
            converged: ok,
            seed: master,
            trace: Vec::new(),
            diagnostic: None,
        },
        ok,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JohnCheck {
    pub contains_ball: bool,
    pub contact_points_ok: bool,
}

const JOHN_TOLERANCE: f64 = 1e-12;
const JOHN_SPHERE_POINTS: usize = 1000;
const JOHN_SEED: SeedSpec = SeedSpec::new(0x4a6f_686e, 0);

/// Checks that the cylinder body contains the Euclidean ball and touches it
/// at every `±e_i`. A scaled diagonal is accepted; the contact check then
/// fails as it should.
pub fn verify_john_cylinder(body: &BodySpec) -> Result<JohnCheck> {
    if !matches!(body.family(), Family::CylinderJohn { .. }) {
        return Err(Error::WrongFamily { expected: "cylinder_john", got: body.family().name().to_string() });
    }
    let n = body.dim();
    let mut contains_ball = true;
    let mut contact_points_ok = true;
    let mut e = vec![0.0; n];
    for i in 0..n {
        for sign in [1.0, -1.0] {
            e[i] = sign;
            let v = body.norm_unchecked(&e);
            contains_ball &= v <= 1.0 + JOHN_TOLERANCE;
            contact_points_ok &= (v - 1.0).abs() <= JOHN_TOLERANCE;
        }
        e[i] = 0.0;
    }
    let mut stream = GaussianStream::new(JOHN_SEED);
    let mut x = vec![0.0; n];
    for _ in 0..JOHN_SPHERE_POINTS {
        stream.fill(&mut x);
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= r);
        contains_ball &= body.norm_unchecked(&x) <= 1.0 + JOHN_TOLERANCE;
    }
    Ok(JohnCheck { contains_ball, contact_points_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quick(seed: u64) -> SolveOptions {
        SolveOptions {
            samples_schedule: vec![2_000, 8_000],
            min_average: 8,
            seed: SeedSpec::new(seed, 0),
            ..SolveOptions::default()
        }
    }

    #[test]
    fn euclidean_solves_to_uniform_scale() {
        let n = 50;
        let res = solve_ell_position(&BodySpec::euclidean(n).unwrap(), &quick(1)).unwrap();
        assert!(res.converged, "{:?}", res.diagnostic);
        // E‖G‖² = n, so the scale is √n.
        for d in &res.diag {
            assert!((d / (n as f64).sqrt() - 1.0).abs() < 0.01, "{d}");
        }
    }

    #[test]
    fn cube_plane_scale() {
        let opts = SolveOptions { samples_schedule: vec![50_000], min_average: 4, ..quick(2) };
        let res = solve_ell_position(&BodySpec::cube(2).unwrap(), &opts).unwrap();
        assert!(res.converged);
        let s = (1.0 + 2.0 / PI).sqrt();
        for d in &res.diag {
            assert!((d / s - 1.0).abs() < 0.005, "{d} vs {s}");
        }
    }

    #[test]
    fn stretched_cube_returns_to_uniform() {
        let n = 16;
        let mut d0 = vec![1.0; n];
        d0[0] = 4.0;
        let body = BodySpec::cube(n).unwrap().with_diagonal(d0).unwrap();
        let res = solve_ell_position(&body, &quick(3)).unwrap();
        assert!(res.converged, "{:?}", res.diagnostic);
        let mean = res.diag.iter().sum::<f64>() / n as f64;
        for d in &res.diag {
            assert!((d / mean - 1.0).abs() < 0.02, "{:?}", res.diag);
        }
    }

    #[test]
    fn ellipsoid_fixed_point_is_square_root_of_weights() {
        let w: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let body = BodySpec::weighted_lp(2.0, w.clone()).unwrap();
        let res = solve_ell_position(&body, &quick(4)).unwrap();
        assert!(res.converged, "{:?}", res.diagnostic);
        // ‖x‖² = Σ w_i x_i² / d_i², balanced when d_i² ∝ w_i and Σ w_i/d_i² = 1.
        for (d, wi) in res.diag.iter().zip(&w) {
            let exact = (wi * 8.0).sqrt();
            assert!((d / exact - 1.0).abs() < 0.01, "{d} vs {exact}");
        }
    }

    #[test]
    fn log_det_increases_along_the_solve() {
        let w: Vec<f64> = (0..16).map(|i| (1.0 + i as f64).powi(2)).collect();
        let body = BodySpec::weighted_lp(1.5, w).unwrap();
        let res = solve_ell_position(&body, &quick(5)).unwrap();
        for pair in res.trace.windows(2) {
            let slack = 3.0 * (pair[0].log_det_std_error.powi(2) + pair[1].log_det_std_error.powi(2)).sqrt();
            assert!(pair[1].log_det >= pair[0].log_det - slack, "{pair:?}");
        }
        assert!(res.trace.last().unwrap().log_det > res.trace[0].log_det);
    }

    #[test]
    fn divergence_is_reported() {
        let body = BodySpec::cube(4).unwrap().with_diagonal(vec![1e-9, 1.0, 1.0, 1.0]).unwrap();
        let res = solve_ell_position(&body, &SolveOptions { max_iters: 3, ..quick(6) }).unwrap();
        assert!(!res.converged);
        assert!(res.diagnostic.is_some());
    }

    #[test]
    fn options_are_validated() {
        let body = BodySpec::cube(4).unwrap();
        for bad in [
            SolveOptions { samples_schedule: vec![], ..quick(0) },
            SolveOptions { samples_schedule: vec![4000, 2000], ..quick(0) },
            SolveOptions { samples_schedule: vec![10], ..quick(0) },
            SolveOptions { step: 0.0, ..quick(0) },
            SolveOptions { max_iters: 0, ..quick(0) },
        ] {
            assert!(solve_ell_position(&body, &bad).is_err());
        }
    }

    #[test]
    fn normalisation_examples() {
        let once = ell_norm_normalize(&BodySpec::euclidean(100).unwrap(), 20_000, SeedSpec::new(7, 0)).unwrap();
        assert!((once.diag()[0] / 10.0 - 1.0).abs() < 0.01);
        let twice = ell_norm_normalize(&once, 20_000, SeedSpec::new(8, 0)).unwrap();
        let m = norm_moments(&once, 2.0, 20_000, SeedSpec::new(8, 0)).unwrap();
        let rel = m.mean_2.std_error / m.mean_2.value;
        assert!((twice.diag()[0] / once.diag()[0] - 1.0).abs() <= 3.0 * rel);
        let cube = ell_norm_normalize(&BodySpec::cube(2).unwrap(), 200_000, SeedSpec::new(9, 0)).unwrap();
        assert!((cube.diag()[0] / (1.0 + 2.0 / PI).sqrt() - 1.0).abs() < 0.005);
    }

    #[test]
    fn result_json_has_the_documented_fields() {
        let res = solve_ell_position(&BodySpec::cube(4).unwrap(), &quick(10)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&res).unwrap();
        for key in ["diag", "residuals", "iterations", "converged", "ell_value", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: EllPositionResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, res);
    }

    #[test]
    fn john_cylinder_checks() {
        let body = BodySpec::cylinder_john(64, 8).unwrap();
        assert_eq!(verify_john_cylinder(&body).unwrap(), JohnCheck { contains_ball: true, contact_points_ok: true });
        let big = verify_john_cylinder(&body.scaled(2.0).unwrap()).unwrap();
        assert!(big.contains_ball && !big.contact_points_ok);
        assert!(!verify_john_cylinder(&body.scaled(0.5).unwrap()).unwrap().contains_ball);
        assert!(matches!(verify_john_cylinder(&BodySpec::cube(4).unwrap()), Err(Error::WrongFamily { .. })));
    }
}
