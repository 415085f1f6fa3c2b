use ellpos_core::estimators::balance_residuals;
use ellpos_core::positions::{solve_ell_position, SolveOptions};
use ellpos_core::{haar_subspace, BodySpec, SeedSpec};
use statrs::distribution::{Beta, ContinuousCDF};

fn opts(seed: u64) -> SolveOptions {
    SolveOptions {
        samples_schedule: vec![2_000, 8_000],
        min_average: 16,
        seed: SeedSpec::new(seed, 0),
        ..SolveOptions::default()
    }
}

#[test]
fn permuting_the_body_permutes_the_solution() {
    let w: Vec<f64> = (0..8).map(|i| 1.0 + (i * i) as f64).collect();
    let body = BodySpec::weighted_lp(1.5, w).unwrap();
    let perm = [3, 7, 0, 5, 1, 6, 2, 4];
    let a = solve_ell_position(&body, &opts(1)).unwrap();
    let b = solve_ell_position(&body.permuted(&perm).unwrap(), &opts(1)).unwrap();
    assert!(a.converged && b.converged);
    for (i, &p) in perm.iter().enumerate() {
        let rel = b.diag[i] / a.diag[p] - 1.0;
        assert!(rel.abs() < 0.02, "coordinate {i}: {} vs {}", b.diag[i], a.diag[p]);
    }
}

#[test]
fn converged_solutions_survive_fresh_validation() {
    let w: Vec<f64> = (0..12).map(|i| 0.5 + i as f64).collect();
    for body in [BodySpec::lp_ball(12, 1.0).unwrap(), BodySpec::weighted_lp(3.0, w).unwrap()] {
        let o = opts(2);
        let res = solve_ell_position(&body, &o).unwrap();
        assert!(res.converged, "{:?}", res.diagnostic);
        assert!(res.residuals.iter().zip(&res.residual_std_errors).all(|(r, s)| r.abs() <= 3.0 * s));
        assert!((res.ell_value - 1.0).abs() <= 3.0 * res.ell_std_error);
        let solved = res.body(&body).unwrap();
        let budget = 4 * o.samples_schedule.last().unwrap();
        let check = balance_residuals(&solved, budget, SeedSpec::new(77, 3)).unwrap();
        assert!(check.balanced_within(3.0), "max z {}", check.max_z());
    }
}

/// Kolmogorov–Smirnov distance between a sample and a CDF.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn haar_frames_have_uniform_directions() {
    // For a uniform unit vector in R^n, u_i² ~ Beta(1/2, (n-1)/2). Every
    // column of a Haar frame, in any fixed coordinate, has that law.
    let (n, k, trials) = (5, 3, 3000);
    let beta = Beta::new(0.5, (n as f64 - 1.0) / 2.0).unwrap();
    for (row, col) in [(0, 0), (4, 2), (2, 1)] {
        let xs: Vec<f64> = (0..trials)
            .map(|t| haar_subspace(SeedSpec::new(t, 0), n, k).unwrap().columns()[(row, col)].powi(2))
            .collect();
        let d = ks(xs, |x| beta.cdf(x));
        // 1% critical value of the one-sample KS statistic.
        assert!(d < 1.63 / (trials as f64).sqrt(), "({row}, {col}): {d}");
    }
}
