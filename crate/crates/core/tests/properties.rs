//! Property-based invariants across modules.

use hkflow::cone::{cone_distance, geodesic, ConePoint};
use hkflow::energy::EnergyFamily;
use hkflow::hk::{solve_hk, SolverConfig};
use hkflow::measures::{DiscreteMeasure, DomainBox, GridDensity, Params};
use hkflow::par::Execution;
use proptest::prelude::*;

fn params() -> impl Strategy<Value = Params> {
    (0.2f64..5.0, 0.2f64..5.0).prop_map(|(l, s)| Params::new(l, s).unwrap())
}

fn cloud(max: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.0f64..2.0, 0.1f64..2.0), 1..=max).prop_map(|pw| {
        let (pts, w): (Vec<f64>, Vec<f64>) = pw.into_iter().unzip();
        DiscreteMeasure::new(1, pts, w).unwrap()
    })
}

fn cone_point() -> impl Strategy<Value = ConePoint> {
    (prop::collection::vec(-1.0f64..1.0, 2), 0.0f64..2.0).prop_map(|(x, r)| ConePoint::new(x, r).unwrap())
}

fn family() -> impl Strategy<Value = EnergyFamily> {
    prop_oneof![
        (0.2f64..3.0).prop_map(|c1| EnergyFamily::LogEntropy { c1 }),
        (0.0f64..2.0, 0.2f64..2.0, 1.2f64..3.0, 0.1f64..0.9).prop_map(|(c1, c2, p, q)| EnergyFamily::PowerLaw { c1, c2, p, q }),
    ]
}

fn solver() -> SolverConfig {
    SolverConfig { eps_end: 1e-3, ..SolverConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distance_to_null_is_mass(m in cloud(6), p in params()) {
        let sol = solve_hk(&m, &DiscreteMeasure::empty(1), &p, &solver()).unwrap();
        let want = p.entropy_weight() * m.total_mass();
        prop_assert!((sol.hk2 - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn distance_is_symmetric_and_nonnegative(a in cloud(5), b in cloud(5), p in params()) {
        let ab = solve_hk(&a, &b, &p, &solver()).unwrap().hk2;
        let ba = solve_hk(&b, &a, &p, &solver()).unwrap().hk2;
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - ba).abs() <= 1e-6 * (1.0 + ab));
    }

    #[test]
    fn squared_distance_scales_linearly(a in cloud(4), b in cloud(4), k in 0.1f64..10.0) {
        let p = Params::new(1.0, 1.0).unwrap();
        let base = solve_hk(&a, &b, &p, &solver()).unwrap().hk2;
        let scaled = solve_hk(&a.scaled(k).unwrap(), &b.scaled(k).unwrap(), &p, &solver()).unwrap().hk2;
        prop_assert!((scaled - k * base).abs() <= 1e-6 * (1.0 + k * base));
    }

    #[test]
    fn execution_modes_agree_bitwise(a in cloud(40), b in cloud(40)) {
        let p = Params::new(1.0, 1.0).unwrap();
        let seq = solve_hk(&a, &b, &p, &SolverConfig { execution: Execution::Sequential, ..solver() }).unwrap();
        let par = solve_hk(&a, &b, &p, &SolverConfig { execution: Execution::Parallel, ..solver() }).unwrap();
        prop_assert_eq!(seq.hk2.to_bits(), par.hk2.to_bits());
    }

    #[test]
    fn plan_marginals_stay_below_twice_the_mass(a in cloud(5), b in cloud(5), p in params()) {
        let sol = solve_hk(&a, &b, &p, &solver()).unwrap();
        prop_assert!(sol.plan.entries.iter().all(|e| e.mass >= 0.0));
        prop_assert!(sol.hk2 <= p.entropy_weight() * (a.total_mass() + b.total_mass()) * (1.0 + 1e-9));
    }

    #[test]
    fn cone_metric_axioms(a in cone_point(), b in cone_point(), c in cone_point(), p in params()) {
        let (ab, ba) = (cone_distance(&a, &b, &p), cone_distance(&b, &a, &p));
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        let (ac, cb) = (cone_distance(&a, &c, &p), cone_distance(&c, &b, &p));
        prop_assert!(ab <= ac + cb + 1e-10);
    }

    #[test]
    fn geodesics_are_constant_speed(a in cone_point(), b in cone_point(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let p = Params::new(1.0, 1.0).unwrap();
        if let Ok(g) = geodesic(&a, &b, &p) {
            let total = cone_distance(&a, &b, &p);
            let part = cone_distance(&g.eval(s), &g.eval(t), &p);
            prop_assert!((part - (t - s).abs() * total).abs() <= 1e-9 * (1.0 + total));
        }
    }

    #[test]
    fn pressure_identities(f in family(), s in 1e-3f64..50.0) {
        let fp = f.f_prime(s).unwrap();
        prop_assert!((f.l_f(s) - (s * fp - f.f(s))).abs() <= 1e-10 * (1.0 + f.l_f(s).abs() + s * fp.abs()));
        prop_assert!((f.l_hat_f(s) - s * fp).abs() <= 1e-12 * (1.0 + (s * fp).abs()));
    }

    #[test]
    fn cell_prox_beats_nearby_levels(f in family(), g in 0.0f64..3.0, kappa in 0.1f64..10.0, v in -1.0f64..1.0) {
        let s = f.cell_prox(g, kappa, v).unwrap();
        let obj = |x: f64| {
            let kl = if g > 0.0 { g * (g / x).ln() - g + x } else { x };
            kappa * kl + f.f(x) + v * x
        };
        prop_assert!(s >= 0.0);
        if s > 0.0 {
            for d in [0.99, 1.01, 0.9, 1.1] {
                prop_assert!(obj(s) <= obj(s * d) + 1e-12 * (1.0 + obj(s).abs()));
            }
        }
    }

    #[test]
    fn grid_mass_matches_measure(vals in prop::collection::vec(0.0f64..3.0, 1..40)) {
        let d = DomainBox::unit_interval();
        let n = vals.len();
        let g = GridDensity::from_fn(&d, &[n], |_| 0.0).unwrap().with_values(vals).unwrap();
        let m = g.to_measure();
        prop_assert!((m.total_mass() - g.total_mass()).abs() <= 1e-12 * (1.0 + g.total_mass()));
    }
}
