//! Distance from the disk to `F = B₂² ∩ {x²/a² + y²/b² ≤ 1}`.

use crate::error::{invalid_param, Result};

pub const BRUTE_FORCE_BOUNDARY_POINTS: usize = 2048;

fn check_ab(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0 && b > 1.0 && b.is_finite()) {
        return Err(invalid_param(format!("need 0 < a < 1 < b, got a={a}, b={b}")));
    }
    Ok(())
}

/// Closed-form lower bound `√(1 + (b²-1)(1-a²)/(b²-a²))` on the
/// Banach–Mazur distance between `F` and the disk.
pub fn ellipse_intersection_distance(a: f64, b: f64) -> Result<f64> {
    check_ab(a, b)?;
    let (a2, b2) = (a * a, b * b);
    Ok((1.0 + (b2 - 1.0) * (1.0 - a2) / (b2 - a2)).sqrt())
}

/// Boundary of `F` in angular order: a uniform angle net plus the axis points
/// and the four points where the circle meets the ellipse.
fn boundary(a: f64, b: f64) -> Vec<[f64; 2]> {
    let (a2, b2) = (a * a, b * b);
    let xc = (a2 * (b2 - 1.0) / (b2 - a2)).sqrt();
    let tc = (1.0 - xc * xc).sqrt().atan2(xc);
    let pi = std::f64::consts::PI;
    let mut angles: Vec<f64> = (0..BRUTE_FORCE_BOUNDARY_POINTS)
        .map(|j| std::f64::consts::TAU * j as f64 / BRUTE_FORCE_BOUNDARY_POINTS as f64)
        .chain([0.0, 0.5 * pi, pi, 1.5 * pi, tc, pi - tc, pi + tc, 2.0 * pi - tc])
        .collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup();
    angles
        .into_iter()
        .map(|t| {
            let (s, c) = t.sin_cos();
            let rho = (c * c / a2 + s * s / b2).powf(-0.5).min(1.0);
            [rho * c, rho * s]
        })
        .collect()
}

/// Circumradius over inradius of `diag(s, 1) F`, both about the origin.
/// The circumradius is exact because the net holds every local maximiser of
/// `|Tp|`; the inradius is that of the inscribed polygon, so the ratio can
/// only be overstated.
fn disk_ratio(points: &[[f64; 2]], s: f64) -> f64 {
    let m = points.len();
    let mut outer = 0.0f64;
    let mut inner = f64::INFINITY;
    for i in 0..m {
        let p = [s * points[i][0], points[i][1]];
        let q = [s * points[(i + 1) % m][0], points[(i + 1) % m][1]];
        outer = outer.max(p[0].hypot(p[1]));
        let edge = (q[0] - p[0]).hypot(q[1] - p[1]);
        if edge > 0.0 {
            inner = inner.min((p[0] * q[1] - p[1] * q[0]).abs() / edge);
        }
    }
    outer / inner
}

/// Upper bound on the distance from `F` to the disk, minimising the ratio of
/// centred circumscribed to inscribed disks over diagonal maps
/// `diag(s, 1)`. A log grid of `grid` values of `s` on `[1/2, 2/a]` is
/// followed by a golden-section refinement around the best grid point.
pub fn bm_distance_2d_bruteforce(a: f64, b: f64, grid: usize) -> Result<f64> {
    check_ab(a, b)?;
    if grid < 100 {
        return Err(invalid_param(format!("grid must be at least 100, got {grid}")));
    }
    let points = boundary(a, b);
    let (lo, hi) = (0.5f64.ln(), (2.0 / a).ln());
    let at = |j: usize| (lo + (hi - lo) * j as f64 / (grid - 1) as f64).exp();
    let values: Vec<f64> = (0..grid).map(|j| disk_ratio(&points, at(j))).collect();
    let best = (0..grid).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    let mut left = at(best.saturating_sub(1)).ln();
    let mut right = at((best + 1).min(grid - 1)).ln();
    let f = |t: f64| disk_ratio(&points, t.exp());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = right - g * (right - left);
    let mut x2 = left + g * (right - left);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            right = x2;
            x2 = x1;
            f2 = f1;
            x1 = right - g * (right - left);
            f1 = f(x1);
        } else {
            left = x1;
            x1 = x2;
            f1 = f2;
            x2 = left + g * (right - left);
            f2 = f(x2);
        }
    }
    Ok(values[best].min(f1).min(f2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_spot_values() {
        assert!((ellipse_intersection_distance(0.5, 2.0).unwrap() - 1.6f64.sqrt()).abs() < 1e-15);
        let near = ellipse_intersection_distance(1.0 - 1e-9, 2.0).unwrap();
        assert!(near >= 1.0 && near - 1.0 < 1e-8);
        assert!(ellipse_intersection_distance(1.0, 2.0).is_err());
        assert!(ellipse_intersection_distance(0.5, 1.0).is_err());
        assert!(ellipse_intersection_distance(0.0, 2.0).is_err());
    }

    #[test]
    fn brute_force_dominates_and_is_tight() {
        let closed = 1.6f64.sqrt();
        let brute = bm_distance_2d_bruteforce(0.5, 2.0, 200).unwrap();
        assert!(brute >= closed && brute <= 1.40, "{brute}");
        assert!(brute - closed < 1e-5, "{brute}");
    }

    #[test]
    fn degenerate_figure_is_a_disk() {
        let v = bm_distance_2d_bruteforce(1.0 - 1e-9, 2.0, 200).unwrap();
        let net = (std::f64::consts::TAU / BRUTE_FORCE_BOUNDARY_POINTS as f64).powi(2);
        assert!((v - 1.0).abs() < net, "{v}");
    }

    #[test]
    fn rotated_figure_has_the_same_distance() {
        // Mapping by diag(1/a, 1/b) and rotating a quarter turn sends (a, b)
        // to (1/b, 1/a).
        for (a, b) in [(0.5, 2.0), (0.3, 1.7), (0.8, 5.0)] {
            let x = bm_distance_2d_bruteforce(a, b, 200).unwrap();
            let y = bm_distance_2d_bruteforce(1.0 / b, 1.0 / a, 200).unwrap();
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            let cx = ellipse_intersection_distance(a, b).unwrap();
            let cy = ellipse_intersection_distance(1.0 / b, 1.0 / a).unwrap();
            assert!((cx - cy).abs() < 1e-14);
        }
    }
}
