use proptest::prelude::*;
use slowfast::analysis::{order_fit, WeakErrorPoint};
use slowfast::stats::Moments;
use slowfast::{SpectralBasis, SpectralField, WaveState};

fn field(n: usize) -> impl Strategy<Value = SpectralField> {
    prop::collection::vec(-2.0f64..2.0, n).prop_map(|c| SpectralField::new(c).unwrap())
}

fn state(n: usize) -> impl Strategy<Value = WaveState> {
    (field(n), field(n)).prop_map(|(u, v)| WaveState::new(u, v).unwrap())
}

fn close(a: &WaveState, b: &WaveState, tol: f64) -> bool {
    a.u.coeffs().iter().chain(b.v.coeffs()).count() > 0
        && a.u.coeffs().iter().zip(b.u.coeffs()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
        && a.v.coeffs().iter().zip(b.v.coeffs()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

proptest! {
    #[test]
    fn wave_group_law(x in state(8), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let b = SpectralBasis::new(1.0, 8).unwrap();
        let two = b.apply_wave_group(&b.apply_wave_group(&x, s).unwrap(), t).unwrap();
        let one = b.apply_wave_group(&x, s + t).unwrap();
        // velocities carry a factor ω ≤ 8π
        prop_assert!(close(&two, &one, 1e-11));
    }

    #[test]
    fn wave_energy_conserved(x in state(8), t in -5.0f64..5.0, a in 0.0f64..2.0) {
        let b = SpectralBasis::new(2.0, 8).unwrap();
        let e0 = b.product_norm(&x, a).unwrap();
        let e1 = b.product_norm(&b.apply_wave_group(&x, t).unwrap(), a).unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-12 * e0.max(1e-300));
    }

    #[test]
    fn heat_semigroup_contracts(f in field(8), t in 0.0f64..1.0, s in 0.0f64..2.0) {
        let b = SpectralBasis::new(1.0, 8).unwrap();
        let g = b.apply_heat_semigroup(&f, t).unwrap();
        let bound = (-b.alpha_1() * t).exp() * b.sobolev_norm(&f, s).unwrap();
        prop_assert!(b.sobolev_norm(&g, s).unwrap() <= bound * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn collocation_round_trip(f in field(12), extra in 0usize..8) {
        let b = SpectralBasis::new(1.5, 12).unwrap();
        let c = b.collocation(12 + extra).unwrap();
        let back = c.from_grid(&c.to_grid(&f).unwrap()).unwrap();
        for (x, y) in f.coeffs().iter().zip(back.coeffs()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn order_fit_exact_for_any_power_law(p in 0.1f64..3.0, a in 0.01f64..10.0, sign in prop::bool::ANY) {
        let pts: Vec<WeakErrorPoint> = (1..=6)
            .map(|i| {
                let e = 0.5f64.powi(i);
                let m = a * e.powf(p);
                WeakErrorPoint { epsilon: e, mean_diff: if sign { m } else { -m }, stderr: 0.0, replicas: 2, seed: 0 }
            })
            .collect();
        let f = order_fit(&pts);
        prop_assert!((f.slope.unwrap() - p).abs() < 1e-12);
        prop_assert!((f.intercept.unwrap() - a.ln()).abs() < 1e-11);
    }

    #[test]
    fn exclusion_rule_is_pure(vals in prop::collection::vec((-1.0f64..1.0, 0.0f64..0.5), 1..8)) {
        let pts: Vec<WeakErrorPoint> = vals
            .iter()
            .enumerate()
            .map(|(i, (m, s))| WeakErrorPoint {
                epsilon: 0.5f64.powi(i as i32 + 1), mean_diff: *m, stderr: *s, replicas: 2, seed: 0,
            })
            .collect();
        let f = order_fit(&pts);
        let expected: Vec<f64> = pts.iter().filter(|p| p.mean_diff.abs() <= 2.0 * p.stderr).map(|p| p.epsilon).collect();
        prop_assert_eq!(&f.excluded, &expected);
        prop_assert_eq!(order_fit(&pts), f);
    }

    #[test]
    fn moment_merge_is_associative(xs in prop::collection::vec(-100.0f64..100.0, 3..60), cut1 in 0usize..60, cut2 in 0usize..60) {
        let (i, j) = (cut1.min(cut2) % xs.len(), cut1.max(cut2) % xs.len());
        let (i, j) = (i.min(j), i.max(j));
        let m = |s: &[f64]| s.iter().copied().collect::<Moments>();
        let left = m(&xs[..i]).merge(m(&xs[i..j])).merge(m(&xs[j..]));
        let right = m(&xs[..i]).merge(m(&xs[i..j]).merge(m(&xs[j..])));
        let all = m(&xs);
        prop_assert_eq!(left.count, all.count);
        prop_assert!((left.mean - right.mean).abs() < 1e-10 && (left.mean - all.mean).abs() < 1e-10);
        prop_assert!((left.variance() - all.variance()).abs() < 1e-8 * all.variance().max(1.0));
    }
}
