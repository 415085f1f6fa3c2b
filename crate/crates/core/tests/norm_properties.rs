use ellpos_core::sampler::GaussianStream;
use ellpos_core::{BodySpec, SeedSpec};
use proptest::prelude::*;

fn body_strategy() -> impl Strategy<Value = BodySpec> {
    (2usize..9, 0usize..5, 1.0f64..6.0, any::<u64>()).prop_map(|(n, kind, p, salt)| {
        let mut s = GaussianStream::new(SeedSpec::new(salt, 0));
        let diag: Vec<f64> = (0..n).map(|_| (0.8 * s.next()).exp()).collect();
        let body = match kind {
            0 => BodySpec::cube(n),
            1 => BodySpec::euclidean(n),
            2 => BodySpec::lp_ball(n, p),
            3 => BodySpec::weighted_lp(p, (0..n).map(|_| (0.5 * s.next()).exp()).collect()),
            _ => BodySpec::cylinder_john(n, 1 + salt as usize % (n - 1)),
        };
        body.unwrap().with_diagonal(diag).unwrap()
    })
}

fn vector(n: usize, salt: u64) -> Vec<f64> {
    let mut s = GaussianStream::new(SeedSpec::new(salt, 7));
    (0..n).map(|_| s.next()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn homogeneity(body in body_strategy(), salt in any::<u64>(), t in -50.0f64..50.0) {
        let x = vector(body.dim(), salt);
        let tx: Vec<f64> = x.iter().map(|v| t * v).collect();
        let lhs = body.norm(&tx).unwrap();
        let rhs = t.abs() * body.norm(&x).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn triangle_inequality(body in body_strategy(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let x = vector(body.dim(), s1);
        let y = vector(body.dim(), s2);
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let lhs = body.norm(&xy).unwrap();
        let rhs = body.norm(&x).unwrap() + body.norm(&y).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn euler_identity(body in body_strategy(), salt in any::<u64>()) {
        let x = vector(body.dim(), salt);
        let e = body.gradient(&x).unwrap();
        prop_assert!((dot(&e.gradient, &x) - e.value).abs() <= 1e-12 * e.value);
    }

    #[test]
    fn gradient_is_a_norming_functional(body in body_strategy(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let x = vector(body.dim(), s1);
        let y = vector(body.dim(), s2);
        let g = body.gradient(&x).unwrap().gradient;
        prop_assert!(dot(&g, &y) <= body.norm(&y).unwrap() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn sign_equivariance(body in body_strategy(), salt in any::<u64>(), flips in any::<u16>()) {
        let x = vector(body.dim(), salt);
        let signs: Vec<f64> = (0..body.dim()).map(|i| if flips >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let fx: Vec<f64> = x.iter().zip(&signs).map(|(a, s)| a * s).collect();
        let a = body.gradient(&x).unwrap();
        let b = body.gradient(&fx).unwrap();
        prop_assert_eq!(a.value, b.value);
        for ((ga, gb), s) in a.gradient.iter().zip(&b.gradient).zip(&signs) {
            prop_assert_eq!(ga * s, *gb);
        }
    }

    #[test]
    fn coordinatewise_monotone(body in body_strategy(), salt in any::<u64>(), shrink in 0.0f64..1.0, i in 0usize..8) {
        let x = vector(body.dim(), salt);
        let mut y = x.clone();
        y[i % body.dim()] *= shrink;
        prop_assert!(body.norm(&y).unwrap() <= body.norm(&x).unwrap() * (1.0 + 1e-14));
    }

    #[test]
    fn gradient_bounded_by_lipschitz(body in body_strategy(), salt in any::<u64>()) {
        let x = vector(body.dim(), salt);
        let g = body.gradient(&x).unwrap().gradient;
        prop_assert!(dot(&g, &g).sqrt() <= body.lipschitz_constant() * (1.0 + 1e-12));
    }

    #[test]
    fn finite_differences(body in body_strategy(), salt in any::<u64>()) {
        let x = vector(body.dim(), salt);
        let g = body.gradient(&x).unwrap().gradient;
        let scale = dot(&x, &x).sqrt();
        let h = 1e-6 * scale;
        let mut fd = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            let (fp, fm, f0) = (body.norm(&p).unwrap(), body.norm(&m).unwrap(), body.norm(&x).unwrap());
            // A kink between x - h and x + h: one-sided slopes disagree.
            let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
            prop_assume!((fwd - bwd).abs() <= 1e-3 * (fwd.abs() + bwd.abs() + 1e-12));
            fd[i] = (fp - fm) / (2.0 * h);
        }
        let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-5 * dot(&g, &g).sqrt(), "err {err}");
    }

    #[test]
    fn descriptor_round_trip(body in body_strategy()) {
        let json = body.descriptor_json();
        let back: BodySpec = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back.descriptor_hash(), body.descriptor_hash());
        prop_assert_eq!(back, body);
    }
}

/// Projected gradient ascent of `‖u‖` on the Euclidean sphere from many
/// starts, as an independent estimate of the Lipschitz constant.
fn multi_start_lipschitz(body: &BodySpec, starts: usize) -> f64 {
    let n = body.dim();
    let mut best = 0.0f64;
    let mut stream = GaussianStream::new(SeedSpec::new(99, 1));
    let mut coordinates: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    coordinates.extend((0..starts).map(|_| {
        let mut u = vec![0.0; n];
        stream.fill(&mut u);
        u.iter_mut().for_each(|v| *v = v.abs());
        u
    }));
    for mut u in coordinates {
        let r = dot(&u, &u).sqrt();
        u.iter_mut().for_each(|v| *v /= r);
        let mut step = 0.5;
        let mut v = body.norm(&u).unwrap();
        for _ in 0..3000 {
            let g = body.gradient(&u).unwrap().gradient;
            let mut c: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            let r = dot(&c, &c).sqrt();
            c.iter_mut().for_each(|x| *x /= r);
            let cv = body.norm(&c).unwrap();
            if cv > v {
                u = c;
                v = cv;
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        best = best.max(v);
    }
    best
}

#[test]
fn lipschitz_closed_forms_match_multi_start() {
    let w = vec![0.5, 2.0, 1.0, 3.0, 0.7];
    let d = vec![1.3, 0.4, 2.0, 0.9, 1.1];
    let bodies = [
        BodySpec::cube(5).unwrap(),
        BodySpec::euclidean(5).unwrap(),
        BodySpec::lp_ball(5, 1.0).unwrap(),
        BodySpec::lp_ball(5, 1.5).unwrap(),
        BodySpec::lp_ball(5, 3.0).unwrap(),
        BodySpec::weighted_lp(1.25, w.clone()).unwrap(),
        BodySpec::weighted_lp(4.0, w).unwrap(),
        BodySpec::cylinder_john(5, 2).unwrap(),
    ];
    for body in bodies {
        for b in [body.clone(), body.with_diagonal(d.clone()).unwrap()] {
            let closed = b.lipschitz_constant();
            let found = multi_start_lipschitz(&b, 64);
            assert!(found <= closed * (1.0 + 1e-12), "{}: {found} > {closed}", b.descriptor_json());
            assert!(found >= closed * (1.0 - 1e-6), "{}: {found} < {closed}", b.descriptor_json());
        }
    }
    assert!((BodySpec::lp_ball(16, 1.0).unwrap().lipschitz_constant() - 4.0).abs() < 1e-12);
    assert_eq!(BodySpec::lp_ball(16, 3.0).unwrap().lipschitz_constant(), 1.0);
    assert_eq!(BodySpec::cylinder_john(16, 5).unwrap().lipschitz_constant(), 1.0);
}
