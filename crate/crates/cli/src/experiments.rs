//! Experiment runners. Each one reads a manifest and returns CSV rows plus a
//! JSON summary; nothing here touches the filesystem.

use ellpos_core::bodies::Family;
use ellpos_core::estimators::{
    balance_residuals, deviation_curve, dvoretzky_dimension, norm_moments, superconcentration_ratio,
};
use ellpos_core::positions::{ell_norm_normalize, solve_ell_position, SolveOptions};
use ellpos_core::sections::{
    bm_distance_2d_bruteforce, ellipse_intersection_distance, gaussian_extremes_experiment, sphericity_ratio,
    SphericityMethod, SphericityReport, DEFAULT_EXTREME_CS, SPHERICITY_CSV_HEADER,
};
use ellpos_core::sampler::GaussianStream;
use ellpos_core::stats::{linear_fit, wilson, Z95};
use ellpos_core::{haar_subspace, make_cylinder_john_body, BodySpec, CylinderConfig, SeedSpec};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::manifest::{CliError, CliResult, Experiment, ExperimentManifest, Params};
use crate::VERSION;

/// One-sided 95% normal quantile, for zero-count cells.
pub const Z95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;

pub const DEFAULT_EPS_GRID: [f64; 6] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub columns: String,
    pub rows: Vec<String>,
    pub summary: Value,
}

impl Output {
    /// CSV text: a comment line with the version and the manifest, the
    /// header, then the rows.
    pub fn csv(&self, manifest: &ExperimentManifest) -> String {
        let mut out = format!("# ellpos {VERSION} {}\n{}\n", manifest.to_json(), self.columns);
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self, manifest: &ExperimentManifest) -> Value {
        json!({
            "version": VERSION,
            "manifest": serde_json::to_value(manifest).expect("manifests always serialize"),
            "results": self.summary,
        })
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Manifest(msg.into())
}

fn f(x: f64) -> String {
    format!("{x:.17e}")
}

pub fn run(manifest: &ExperimentManifest) -> CliResult<Output> {
    match manifest.experiment {
        Experiment::Moments => moments(manifest),
        Experiment::SuperconcScan => superconc_scan(manifest),
        Experiment::EllSolve => ell_solve(manifest),
        Experiment::Balance => balance(manifest),
        Experiment::Deviation => deviation(manifest),
        Experiment::SectionsScan => sections_scan(manifest),
        Experiment::JohnCounterexample => john_counterexample(manifest),
        Experiment::DvoretzkyDim => dvoretzky_dim(manifest),
        Experiment::EllipseCheck => ellipse_check(manifest),
        Experiment::SingularValues => singular_values(manifest),
    }
}

/// The body's family at dimension `n`, keeping a uniform diagonal.
pub fn at_dim(body: &BodySpec, n: usize) -> CliResult<BodySpec> {
    if n == body.dim() {
        return Ok(body.clone());
    }
    let d0 = body.diag()[0];
    if body.diag().iter().any(|d| *d != d0) {
        return Err(bad("a body with a non-uniform diagonal cannot be used at another dimension"));
    }
    let base = match body.family() {
        Family::Cube => BodySpec::cube(n),
        Family::Euclidean => BodySpec::euclidean(n),
        Family::LpBall { p } => BodySpec::lp_ball(n, *p),
        Family::CylinderJohn { m } => BodySpec::cylinder_john(n, *m),
        Family::WeightedLp { .. } => return Err(bad("weighted l_p bodies have a fixed dimension")),
    }?;
    Ok(base.scaled(d0)?)
}

fn dims(p: &Params, body: &BodySpec) -> CliResult<Vec<usize>> {
    let n = p.usizes("n", &[body.dim()])?;
    if n.is_empty() {
        return Err(bad("n list is empty"));
    }
    Ok(n)
}

/// A body moved into the `l`-position, or left alone.
#[derive(Clone, Debug)]
pub struct Positioned {
    pub body: BodySpec,
    pub converged: bool,
    pub route: &'static str,
    pub iterations: usize,
}

/// Permutation-symmetric bodies with a uniform diagonal are balanced by
/// symmetry, so only the scalar normalisation is needed.
pub fn balanced_by_symmetry(body: &BodySpec) -> bool {
    let d0 = body.diag()[0];
    matches!(body.family(), Family::Cube | Family::Euclidean | Family::LpBall { .. })
        && body.diag().iter().all(|d| *d == d0)
}

pub fn solve_options(p: &Params, seed: SeedSpec) -> CliResult<SolveOptions> {
    let d = SolveOptions::default();
    Ok(SolveOptions {
        step: p.f64("step", d.step)?,
        max_iters: p.usize("max_iters", d.max_iters)?,
        samples_schedule: p.usizes("schedule", &d.samples_schedule)?,
        min_average: p.usize("min_average", d.min_average)?,
        seed,
    })
}

/// `position` = `auto` (default), `solve` or `none`.
pub fn position(body: &BodySpec, p: &Params, seed: SeedSpec, default: &str) -> CliResult<Positioned> {
    let mode = p.string("position", default)?;
    let normalize_samples = p.usize("normalize_samples", 10_000)?;
    match mode.as_str() {
        "none" => Ok(Positioned { body: body.clone(), converged: true, route: "none", iterations: 0 }),
        "auto" if balanced_by_symmetry(body) => Ok(Positioned {
            body: ell_norm_normalize(body, normalize_samples, seed)?,
            converged: true,
            route: "symmetric",
            iterations: 0,
        }),
        "auto" | "solve" => {
            let res = solve_ell_position(body, &solve_options(p, seed)?)?;
            Ok(Positioned { body: res.body(body)?, converged: res.converged, route: "solver", iterations: res.iterations })
        }
        other => Err(bad(format!("unknown position mode {other:?}"))),
    }
}

const POSITION_STREAM: u64 = 0xE11;

fn moments(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let (pow, samples, seed) = (p.f64("p", 1.0)?, p.usize("samples", 100_000)?, p.seed()?);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for n in dims(&p, &body)? {
        let nseed = seed.split(n as u64);
        let pos = position(&at_dim(&body, n)?, &p, nseed.split(POSITION_STREAM), "none")?;
        let r = norm_moments(&pos.body, pow, samples, nseed)?;
        rows.push(format!(
            "{},{n},{pow},{},{},{},{},{},{},{},{},{},{samples},{}",
            pos.body.descriptor_hash(),
            f(r.mean_p.value),
            f(r.mean_p.std_error),
            f(r.var_p.value),
            f(r.var_p.std_error),
            f(r.median),
            f(r.mean_1.value),
            f(r.mean_1.std_error),
            f(r.mean_2.value),
            f(r.mean_2.std_error),
            seed.master
        ));
        summary.push(json!({ "n": n, "moments": r }));
    }
    Ok(Output {
        columns: "body_hash,n,p,mean_p,mean_p_se,var_p,var_p_se,median,mean_1,mean_1_se,mean_2,mean_2_se,samples,seed"
            .into(),
        rows,
        summary: Value::Array(summary),
    })
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn superconc_scan(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let (pow, samples, seed) = (p.f64("p", 1.0)?, p.usize("samples", 100_000)?, p.seed()?);
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut scaled = Vec::new();
    for n in dims(&p, &body)? {
        let nseed = seed.split(n as u64);
        let pos = position(&at_dim(&body, n)?, &p, nseed.split(POSITION_STREAM), "auto")?;
        let r = superconcentration_ratio(&pos.body, pow, samples, nseed)?;
        let log_n = (n as f64).ln();
        scaled.push(r.ratio * log_n);
        rows.push(format!(
            "{},{n},{},{},{},{},{},{},{},{},{},{},{}",
            pos.body.descriptor_hash(),
            pos.converged,
            f(r.ratio),
            f(r.ratio_std_error),
            f(r.ratio * log_n),
            f(r.talagrand_rhs),
            f(r.variance.value),
            f(r.variance.std_error),
            f(r.gradient_energy.value),
            f(r.gradient_energy.std_error),
            f(r.flat_energy),
            f(r.spiky_energy)
        ));
        entries.push(json!({ "n": n, "position": pos.route, "converged": pos.converged, "report": r }));
    }
    Ok(Output {
        columns: "body_hash,n,position_converged,ratio,ratio_se,ratio_log_n,talagrand_rhs,variance,variance_se,gradient_energy,gradient_energy_se,flat_energy,spiky_energy".into(),
        rows,
        summary: json!({ "rows": entries, "ratio_log_n_spread": spread(&scaled) }),
    })
}

fn ell_solve(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let res = solve_ell_position(&body, &solve_options(&p, p.seed()?)?)?;
    let rows = res
        .trace
        .iter()
        .map(|t| {
            format!(
                "{},{},{},{},{},{}",
                t.iteration,
                t.samples,
                f(t.max_abs_residual),
                f(t.max_z),
                f(t.log_det),
                f(t.log_det_std_error)
            )
        })
        .collect();
    Ok(Output {
        columns: "iteration,samples,max_abs_residual,max_z,log_det,log_det_se".into(),
        rows,
        summary: serde_json::to_value(&res).expect("results serialize"),
    })
}

fn balance(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let seed = p.seed()?;
    let pos = position(&body, &p, seed.split(POSITION_STREAM), "none")?;
    let r = balance_residuals(&pos.body, p.usize("samples", 100_000)?, seed)?;
    let rows = (0..pos.body.dim())
        .map(|i| {
            let z = r.residuals[i] / r.std_errors[i];
            format!("{i},{},{},{},{}", f(pos.body.diag()[i]), f(r.residuals[i]), f(r.std_errors[i]), f(z))
        })
        .collect();
    Ok(Output {
        columns: "coordinate,diag,residual,std_error,z".into(),
        rows,
        summary: json!({
            "max_z": r.max_z(),
            "max_abs": r.max_abs(),
            "balanced_3se": r.balanced_within(3.0),
            "ell_squared": r.ell_squared,
            "position": pos.route,
        }),
    })
}

fn deviation(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let (samples, seed) = (p.usize("samples", 100_000)?, p.seed()?);
    let eps = p.f64s("eps", &DEFAULT_EPS_GRID)?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in dims(&p, &body)? {
        let nseed = seed.split(n as u64);
        let pos = position(&at_dim(&body, n)?, &p, nseed.split(POSITION_STREAM), "auto")?;
        let c = deviation_curve(&pos.body, &eps, samples, nseed)?;
        for (j, e) in eps.iter().enumerate() {
            let count = c.counts[j];
            let zero = count == 0;
            let reported = if zero { wilson(0, samples as u64, Z95_ONE_SIDED).high } else { c.probs[j] };
            if !zero {
                xs.push(e * (n as f64).ln());
                ys.push(c.probs[j].ln());
            }
            rows.push(format!(
                "{n},{e},{},{count},{},{},{},{},{zero}",
                f(c.median),
                f(c.probs[j]),
                f(reported),
                f(c.intervals[j].low),
                f(c.intervals[j].high)
            ));
        }
        curves.push(json!({ "n": n, "position": pos.route, "curve": c }));
    }
    let fit = linear_fit(&xs, &ys);
    Ok(Output {
        columns: "n,eps,median,count,p_hat,p_reported,wilson_low,wilson_high,zero_count".into(),
        rows,
        summary: json!({ "curves": curves, "fit": fit, "fit_points": xs.len() }),
    })
}

fn method_for(p: &Params, k: usize) -> CliResult<SphericityMethod> {
    match p.string("method", "auto")?.as_str() {
        "auto" => Ok(SphericityMethod::default_for(k)),
        "net" => Ok(SphericityMethod::Net {
            delta: p.f64("delta", if k == 3 { 1e-2 } else { 1e-3 })?,
        }),
        "multistart" => Ok(SphericityMethod::MultiStart {
            n_starts: p.usize("n_starts", ellpos_core::sections::DEFAULT_N_STARTS)?,
            max_iters: p.usize("max_iters", ellpos_core::sections::DEFAULT_MAX_ITERS)?,
        }),
        other => Err(bad(format!("unknown sphericity method {other:?}"))),
    }
}

/// Sphericity of `trials` Haar sections; trial `t` uses `seed.split(t)` for
/// its frame and its multi-start seeds.
pub fn section_trials(
    body: &BodySpec,
    k: usize,
    trials: usize,
    method: SphericityMethod,
    seed: SeedSpec,
) -> CliResult<Vec<SphericityReport>> {
    (0..trials)
        .into_par_iter()
        .map(|t| {
            let tseed = seed.split(t as u64);
            let q = haar_subspace(tseed.split(0), body.dim(), k)?;
            Ok(sphericity_ratio(body, &q, method, tseed.split(1))?)
        })
        .collect()
}

/// Whether a section certainly fails, or is taken to pass, at `1 + eps`.
/// Failure uses the ratio lower bound; success uses the certified upper
/// bound, or the multi-start value when no certificate exists.
pub fn classify(r: &SphericityReport, eps: f64) -> (bool, bool) {
    let exceeds = r.ratio > 1.0 + eps;
    let bound = if r.certified { r.ratio_upper() } else { r.ratio };
    (exceeds, bound <= 1.0 + eps)
}

fn section_rows(reports: &[SphericityReport], seed: SeedSpec, n: usize, eps: Option<f64>) -> (Vec<String>, Value) {
    let mut rows = Vec::new();
    let (mut exceed, mut within) = (0u64, 0u64);
    for (t, r) in reports.iter().enumerate() {
        let (e, w) = eps.map(|e| classify(r, e)).unwrap_or((false, false));
        exceed += u64::from(e);
        within += u64::from(w);
        rows.push(format!("{t},{},{},{e},{w}", r.csv_row(seed, n), f(r.ratio_upper())));
    }
    let trials = reports.len() as u64;
    let summary = match eps {
        Some(eps) if trials > 0 => json!({
            "eps": eps,
            "trials": trials,
            "exceeding": exceed,
            "exceeding_fraction": wilson(exceed, trials, Z95),
            "within": within,
            "within_fraction": wilson(within, trials, Z95),
        }),
        _ => json!({ "trials": trials }),
    };
    (rows, summary)
}

const SECTION_COLUMNS_TAIL: &str = "ratio_upper,exceeds,within";

fn sections_scan(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let (k, trials, seed) = (p.usize("k", 2)?, p.usize("trials", 100)?, p.seed()?);
    let eps = p.opt_f64("eps")?;
    let pos = position(&body, &p, seed.split(POSITION_STREAM), "auto")?;
    let reports = section_trials(&pos.body, k, trials, method_for(&p, k)?, seed)?;
    let (rows, mut summary) = section_rows(&reports, seed, body.dim(), eps);
    summary["k"] = json!(k);
    summary["position"] = json!(pos.route);
    Ok(Output { columns: format!("trial,{SPHERICITY_CSV_HEADER},{SECTION_COLUMNS_TAIL}"), rows, summary })
}

/// `max(2, ⌈c ε² log n⌉)` for the cylinder arm.
pub fn cylinder_k(n: usize, eps: f64, multiplier: f64) -> usize {
    ((multiplier * eps * eps * (n as f64).ln()).ceil() as usize).max(2)
}

/// `⌈c ε log n / log(1/ε)⌉` for the `l`-position arm.
pub fn ell_k(n: usize, eps: f64, constant: f64) -> usize {
    ((constant * eps * (n as f64).ln() / (1.0 / eps).ln()).ceil() as usize).max(1)
}

fn john_counterexample(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let n = p.usize("n", 4096)?;
    let eps = p.f64("eps", 0.25)?;
    let trials = p.usize("trials", 200)?;
    let seed = p.seed()?;
    if n < 512 {
        return Err(bad(format!("john-counterexample needs n >= 512, got {n}")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(bad(format!("eps must lie in (0, 0.5], got {eps}")));
    }
    let arm = p.string("arm", "cylinder")?;
    let (body, k, extra) = match arm.as_str() {
        "cylinder" => {
            let config = CylinderConfig { trials: p.usize("cylinder_trials", CylinderConfig::default().trials)?, ..CylinderConfig::default() };
            let body = make_cylinder_john_body(n, seed.split(0xC71), &config)?;
            let ellpos_core::Family::CylinderJohn { m: tail } = body.family().clone() else { unreachable!() };
            let multiplier = p.f64("k_multiplier", 2.0)?;
            let k = p.usize("k", cylinder_k(n, eps, multiplier))?;
            (body, k, json!({ "m": tail, "k_multiplier": multiplier }))
        }
        "ell" => {
            let template = match m.body()? {
                Some(b) => b,
                None => BodySpec::cube(n)?,
            };
            let pos = position(&at_dim(&template, n)?, &p, seed.split(POSITION_STREAM), "auto")?;
            let constant = p.f64("k_constant", 0.5)?;
            let k = p.usize("k", ell_k(n, eps, constant))?;
            (pos.body, k, json!({ "k_constant": constant, "position": pos.route, "converged": pos.converged }))
        }
        other => return Err(bad(format!("unknown arm {other:?}"))),
    };
    let reports = section_trials(&body, k, trials, method_for(&p, k)?, seed)?;
    let (rows, mut summary) = section_rows(&reports, seed, n, Some(eps));
    summary["arm"] = json!(arm);
    summary["n"] = json!(n);
    summary["k"] = json!(k);
    summary["body_hash"] = json!(body.descriptor_hash());
    summary["details"] = extra;
    Ok(Output { columns: format!("trial,{SPHERICITY_CSV_HEADER},{SECTION_COLUMNS_TAIL}"), rows, summary })
}

fn dvoretzky_dim(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let body = m.require_body()?;
    let (samples, seed) = (p.usize("samples", 100_000)?, p.seed()?);
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for n in dims(&p, &body)? {
        let b = at_dim(&body, n)?;
        let k = dvoretzky_dimension(&b, samples, seed.split(n as u64))?;
        rows.push(format!("{},{n},{},{},{}", b.descriptor_hash(), f(b.lipschitz_constant()), f(k.value), f(k.std_error)));
        out.push(json!({ "n": n, "k": k, "lipschitz": b.lipschitz_constant() }));
    }
    Ok(Output { columns: "body_hash,n,lipschitz,k,k_se".into(), rows, summary: Value::Array(out) })
}

/// Random `(a, b)` pairs with `a` in `[0.05, 0.95]` and `b` in `[1.05, 5.05]`.
pub fn random_pairs(count: usize, seed: SeedSpec) -> Vec<(f64, f64)> {
    let mut s = GaussianStream::new(seed);
    (0..count).map(|_| (0.05 + 0.9 * s.uniform(), 1.05 + 4.0 * s.uniform())).collect()
}

fn ellipse_check(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let grid = p.usize("grid", 200)?;
    let tol = p.f64("tolerance", 1e-9)?;
    let pairs = match (p.f64s("a", &[])?, p.f64s("b", &[])?) {
        (a, b) if a.is_empty() && b.is_empty() => random_pairs(p.usize("pairs", 20)?, p.seed()?),
        (a, b) if a.len() == b.len() => a.into_iter().zip(b).collect(),
        _ => return Err(bad("a and b lists must have equal length")),
    };
    let mut rows = Vec::new();
    let mut all_ok = true;
    for (a, b) in pairs {
        let closed = ellipse_intersection_distance(a, b)?;
        let brute = bm_distance_2d_bruteforce(a, b, grid)?;
        let ok = closed <= brute + tol;
        all_ok &= ok;
        rows.push(format!("{a},{b},{},{},{},{ok}", f(closed), f(brute), f(brute - closed)));
    }
    Ok(Output {
        columns: "a,b,closed_form,brute_force,gap,ok".into(),
        rows,
        summary: json!({ "all_ok": all_ok, "tolerance": tol, "grid": grid }),
    })
}

fn singular_values(m: &ExperimentManifest) -> CliResult<Output> {
    let p = m.params();
    let cs = p.f64s("c", &DEFAULT_EXTREME_CS)?;
    let r = gaussian_extremes_experiment(
        p.usize("m", 400)?,
        p.usize("k", 100)?,
        p.usize("trials", 1024)?,
        p.seed()?,
        &cs,
    )?;
    let rows = r
        .rows
        .iter()
        .map(|row| {
            format!(
                "{},{},{},{},{},{},{}",
                row.c,
                f(row.p_smax_below.estimate),
                f(row.p_smax_below.low),
                f(row.p_smax_below.high),
                f(row.p_smin_above.estimate),
                f(row.p_smin_above.low),
                f(row.p_smin_above.high)
            )
        })
        .collect();
    Ok(Output {
        columns: "c,p_smax_below,smax_low,smax_high,p_smin_above,smin_low,smin_high".into(),
        rows,
        summary: serde_json::to_value(&r).expect("results serialize"),
    })
}
