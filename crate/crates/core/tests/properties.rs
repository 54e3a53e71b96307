use bridge_integrals::gaussian::{bridge_joint_density, density_ratio_q, jensen_lower_bound, SpacePoints, TimePoints};
use bridge_integrals::potential::{default_probes, k1_bound, PotentialKind};
use bridge_integrals::quadrature::moment_bridge;
use bridge_integrals::stats::pairwise_sum;
use bridge_integrals::{Potential, QuadConfig};
use proptest::prelude::*;

/// Sorted distinct interior times in `(0, t)` from raw fractions.
fn times_from(fracs: &[f64], t: f64) -> Option<TimePoints> {
    let mut s: Vec<f64> = fracs.iter().map(|f| f * t).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    if s.len() != fracs.len() || s.iter().any(|x| !(*x > 0.0 && *x < t)) {
        return None;
    }
    TimePoints::new(s, t).ok()
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

proptest! {
    #[test]
    fn convexity_bound_holds(fracs in prop::collection::vec(0.001..0.999f64, 0..7), d in 3usize..7, t in 0.1..1e3f64) {
        if let Some(times) = times_from(&fracs, t) {
            let (sum, bound) = jensen_lower_bound(&times, d).unwrap();
            prop_assert!(sum >= bound * (1.0 - 1e-12), "{sum} < {bound}");
        }
    }

    #[test]
    fn empty_ratio_is_exactly_one(x in point(3), y in point(3), t in 0.01..1e4f64) {
        let q = density_ratio_q(&x, &y, &TimePoints::new(vec![], t).unwrap(), &SpacePoints::new(vec![], 3).unwrap(), 0).unwrap();
        prop_assert_eq!(q, 1.0);
    }

    #[test]
    fn bridge_density_is_reversible(
        fracs in prop::collection::vec(0.01..0.99f64, 1..4),
        x in point(3),
        y in point(3),
        zs in prop::collection::vec(point(3), 3),
        t in 0.5..5.0f64,
    ) {
        if let Some(times) = times_from(&fracs, t) {
            let pts = SpacePoints::new(zs[..times.k()].to_vec(), 3).unwrap();
            let fwd = bridge_joint_density(&x, &y, &times, &pts).unwrap();
            let back = bridge_joint_density(&y, &x, &times.reversed().unwrap(), &pts.reversed()).unwrap();
            prop_assert!((fwd - back).abs() <= 1e-10 * fwd.abs().max(1e-300), "{fwd} vs {back}");
        }
    }

    #[test]
    fn ratio_matches_its_closed_form(frac in 0.01..0.99f64, x in point(3), y in point(3), z in point(3), t in 0.5..50.0f64) {
        let s = frac * t;
        let times = TimePoints::new(vec![s], t).unwrap();
        let pts = SpacePoints::new(vec![z.clone()], 3).unwrap();
        let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        let arg = d2(&z, &x) / (2.0 * s) - d2(&y, &x) / (2.0 * t);
        let expect = (s / t).powf(1.5) * arg.exp();
        let got = density_ratio_q(&x, &y, &times, &pts, 0).unwrap();
        if expect.is_finite() {
            prop_assert!((got - expect).abs() <= 1e-12 * expect);
        } else {
            prop_assert_eq!(got, f64::INFINITY);
        }
    }

    #[test]
    fn k1_is_linear_in_height(h in 0.01..50.0f64) {
        let v = Potential::unit_ball(3).unwrap();
        let w = v.scaled_height(h);
        let a = k1_bound(&v, &default_probes(&v)).unwrap().k1;
        let b = k1_bound(&w, &default_probes(&w)).unwrap().k1;
        prop_assert!((b - h * a).abs() <= 1e-12 * h * a);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers(xs in prop::collection::vec(-1000i32..1000, 0..300)) {
        let f: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
        prop_assert_eq!(pairwise_sum(&f), xs.iter().map(|&x| x as i64).sum::<i64>() as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // E Z for (t, v, x, y) equals E Z for (t/λ², λ²v(λ·), x/λ, y/λ).
    #[test]
    fn first_moment_is_brownian_scale_invariant(lambda in 0.3..3.0f64, t in 0.5..4.0f64, x0 in -1.5..1.5f64) {
        let v = Potential::new(3, PotentialKind::RadialStep {
            center: vec![0.0; 3],
            breakpoints: vec![0.6, 1.2],
            heights: vec![1.5, 0.5],
        }).unwrap();
        let w = v.brownian_rescaled(lambda).unwrap();
        let cfg = QuadConfig::default();
        let (x, y) = ([x0, 0.0, 0.0], [0.0, 0.4, 0.0]);
        let xs: Vec<f64> = x.iter().map(|c| c / lambda).collect();
        let ys: Vec<f64> = y.iter().map(|c| c / lambda).collect();
        let a = moment_bridge(&x, &y, t, &v, 1, &cfg).unwrap();
        let b = moment_bridge(&xs, &ys, t / (lambda * lambda), &w, 1, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-12), "{a} vs {b}");
    }
}
