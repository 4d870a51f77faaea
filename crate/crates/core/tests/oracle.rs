use currentlab::asep::{asep_run, AsepState, CoupledAsep, Initial, Window};
use currentlab::gauss::AsepParams;
use currentlab::harness::SeedPolicy;
use currentlab::oracle::*;
use currentlab::real::exact;
use currentlab::zrp::{invariant_measure, zrp_run, RateFamily, RateFn, ZrpCoupled, ZrpWindow};
use proptest::prelude::*;

fn params() -> AsepParams {
    AsepParams::new(0.7, 0.3, 0.5).unwrap()
}

fn sample<F: Fn(u64) -> Vec<i64>>(n: u64, seed: u64, f: F) -> Vec<Vec<i64>> {
    let policy = SeedPolicy::new(seed);
    (0..n).map(|r| f(policy.replica_seed(r))).collect()
}

#[test]
fn ring_uniform_law_is_stationary() {
    let m = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 4 }, particles: 2 };
    let g = Generator::build(&m).unwrap();
    assert_eq!(g.len(), 6);
    assert!(g.max_row_sum() < 1e-12);
    let pi = vec![1.0 / 6.0; 6];
    assert!(g.left_apply(&pi).iter().all(|x| x.abs() < 1e-12));
    // A segment with closed ends is not uniform-invariant when p ≠ q.
    let seg = Generator::build(&FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Segment { len: 4 }, particles: 2 }).unwrap();
    assert!(seg.left_apply(&pi).iter().any(|x| x.abs() > 1e-3));
}

#[test]
fn uniformization_conserves_mass() {
    let m = FiniteModel::Asep { p: 0.9, q: 0.1, lattice: Lattice::Ring { len: 8 }, particles: 3 };
    let g = Generator::build(&m).unwrap();
    let init = g.delta(&[1, 1, 1, 0, 0, 0, 0, 0]).unwrap();
    for t in [0.1, 1.0, 7.5, 40.0] {
        let law = g.transient_law(&init, t).unwrap();
        assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(law.iter().all(|&x| x >= -1e-15));
    }
    // Long times approach the uniform law.
    let law = g.transient_law(&init, 200.0).unwrap();
    assert!(law.iter().all(|x| (x - 1.0 / g.len() as f64).abs() < 1e-9));
}

#[test]
fn ring_monte_carlo_matches_exact_law() {
    let m = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 4 }, particles: 2 };
    let g = Generator::build(&m).unwrap();
    let start = [1, 1, 0, 0];
    let exact_law = g.transient_law(&g.delta(&start).unwrap(), 1.0).unwrap();
    let w = Window::Ring { len: 4 };
    let init = Initial::State(AsepState::new(w, vec![1, 1, 0, 0]).unwrap());
    let samples = sample(100_000, 1, |s| {
        asep_run(&init, &params(), 1.0, w, s, false).unwrap().state.occ.iter().map(|&v| v as i64).collect()
    });
    let tv = total_variation(&g.empirical(&samples).unwrap(), &exact_law);
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn zero_range_segment_monte_carlo_matches_exact_law() {
    let rate = RateFamily::ExpSaturating { a: 1.0, b: 1.0 };
    let m = FiniteModel::Zrp { rate: rate.clone(), lattice: Lattice::Segment { len: 3 }, initial: vec![2, 1, 0] };
    let g = Generator::build(&m).unwrap();
    let exact_law = g.transient_law(&g.delta(&[2, 1, 0]).unwrap(), 1.0).unwrap();
    let rf = RateFn::new(rate, None).unwrap();
    let w = ZrpWindow { lo: 0, hi: 2 };
    let samples = sample(100_000, 2, |s| {
        zrp_run(&rf, vec![2, 1, 0], w, 1.0, s).unwrap().member(0).iter().map(|&v| v as i64).collect()
    });
    let tv = total_variation(&g.empirical(&samples).unwrap(), &exact_law);
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn coupled_zero_range_monte_carlo_matches_exact_law() {
    let rate = RateFamily::ExpSaturating { a: 1.0, b: 1.0 };
    let (omega, eta) = (vec![2, 1, 1], vec![1, 0, 1]);
    let m = FiniteModel::CoupledZrp { rate: rate.clone(), lattice: Lattice::Segment { len: 3 }, omega: omega.clone(), eta: eta.clone() };
    let g = Generator::build(&m).unwrap();
    let start: Vec<i64> = omega.iter().chain(&eta).map(|&v| v as i64).collect();
    let exact_law = g.transient_law(&g.delta(&start).unwrap(), 1.0).unwrap();
    let rf = RateFn::new(rate, None).unwrap();
    let w = ZrpWindow { lo: 0, hi: 2 };
    let samples = sample(100_000, 3, |s| {
        let mut c = ZrpCoupled::new(&rf, w, vec![omega.clone(), eta.clone()], s).unwrap();
        c.run_until(1.0).unwrap();
        c.member(0).iter().chain(c.member(1)).map(|&v| v as i64).collect()
    });
    let tv = total_variation(&g.empirical(&samples).unwrap(), &exact_law);
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn coupled_ring_monte_carlo_matches_exact_law() {
    let members = vec![vec![1, 1, 1, 0, 0], vec![1, 0, 0, 0, 0]];
    let m = FiniteModel::CoupledAsep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 5 }, members: members.clone() };
    let g = Generator::build(&m).unwrap();
    let start: Vec<i64> = members.concat().into_iter().map(i64::from).collect();
    let exact_law = g.transient_law(&g.delta(&start).unwrap(), 1.0).unwrap();
    let w = Window::Ring { len: 5 };
    let samples = sample(100_000, 4, |s| {
        let states = members.iter().map(|o| AsepState::new(w, o.clone()).unwrap()).collect();
        let mut c = CoupledAsep::new(states, &params(), s).unwrap();
        c.run_until(1.0).unwrap();
        c.sites().members.concat().into_iter().map(i64::from).collect()
    });
    let tv = total_variation(&g.empirical(&samples).unwrap(), &exact_law);
    assert!(tv < 0.01, "tv {tv} over {} states", g.len());
}

#[test]
fn label_coupling_monte_carlo_matches_exact_law() {
    let (zeta, xi) = (vec![1, 1, 0], vec![0, 0, 0]);
    let m = FiniteModel::ConcavityCoupling {
        p: 0.7,
        q: 0.3,
        lattice: Lattice::Ring { len: 3 },
        zeta: zeta.clone(),
        xi: xi.clone(),
        lambda: 0,
        mu: 0,
    };
    let g = Generator::build(&m).unwrap();
    let start = encode_concavity(&decode_concavity(&[1, 1, 0, 0, 0, 0, 0, 0], 3));
    let exact_law = g.transient_law(&g.delta(&start).unwrap(), 1.0).unwrap();
    let w = Window::Ring { len: 3 };
    let samples = sample(100_000, 5, |s| {
        let states = vec![AsepState::new(w, zeta.clone()).unwrap(), AsepState::new(w, xi.clone()).unwrap()];
        let mut c = CoupledAsep::new(states, &params(), s).unwrap().with_labels((0, 1), Some(0), Some(0)).unwrap();
        c.run_until(1.0).unwrap();
        encode_concavity(c.sites())
    });
    let tv = total_variation(&g.empirical(&samples).unwrap(), &exact_law);
    assert!(tv < 0.01, "tv {tv} over {} states", g.len());
}

#[test]
fn exclusion_rate_tables_have_no_mismatches() {
    for (num, den) in [(7, 10), (9, 10), (1, 1), (3, 5)] {
        let (p, q) = exact_pq(num, den);
        let d = asep_basic_diff(p, q);
        assert!(d.passed(), "{}: {:?}", d.name, &d.mismatches[..d.mismatches.len().min(5)]);
        for d in asep_concavity_diff(p, q) {
            assert!(d.passed(), "p={num}/{den} {}: {:?}", d.name, &d.mismatches[..d.mismatches.len().min(5)]);
        }
    }
}

#[test]
fn zero_range_rate_tables_have_no_mismatches() {
    let tables = [
        vec![exact(1, 2), exact(3, 4), exact(7, 8), exact(15, 16)],
        vec![exact(1, 1)],
        vec![exact(1, 3), exact(1, 2), exact(7, 12)],
    ];
    for t in &tables {
        for d in zrp_label_diff(t, 4).unwrap() {
            assert!(d.passed(), "{}: {:?}", d.name, &d.mismatches[..d.mismatches.len().min(5)]);
        }
    }
    // A convex table breaks the joint rule and the differ says so.
    let convex = [exact(1, 2), exact(3, 5), exact(9, 10)];
    let diffs = zrp_label_diff(&convex, 4).unwrap();
    assert!(!diffs[2].passed());
    assert!(diffs[0].passed() && diffs[1].passed());
}

#[test]
fn zero_range_cylinder_balance() {
    let g = RateFn::exp_saturating(1.0, 1.0).unwrap();
    for rho in [0.5, 1.0, 2.0] {
        let nu = invariant_measure(&g, rho).unwrap();
        let (worst, tail) = zrp_cylinder_balance(&g, &nu, 3);
        assert!(worst < 1e-12 + tail, "rho={rho}: {worst} (tail {tail})");
    }
}

#[test]
fn zero_range_torus_canonical_law_is_stationary() {
    let rate = RateFamily::ExpSaturating { a: 1.0, b: 1.0 };
    let m = FiniteModel::Zrp { rate: rate.clone(), lattice: Lattice::Ring { len: 3 }, initial: vec![3, 0, 0] };
    let g = Generator::build(&m).unwrap();
    assert_eq!(g.len(), 10);
    let pi = zrp_canonical(&g, &RateFn::new(rate, None).unwrap());
    assert!(g.left_apply(&pi).iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn config_round_trip_and_strictness() {
    let m = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 4 }, particles: 2 };
    let s = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<FiniteModel>(&s).unwrap(), m);
    let bad = r#"{"kind":"asep","p":0.7,"q":0.3,"lattice":{"kind":"ring","len":4},"particles":2,"extra":1}"#;
    assert!(serde_json::from_str::<FiniteModel>(bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generator_rows_sum_to_zero(len in 2usize..7, n in 0usize..7, pn in 5i64..10) {
        let n = n.min(len);
        let p = pn as f64 / 10.0;
        let g = Generator::build(&FiniteModel::Asep { p, q: 1.0 - p, lattice: Lattice::Ring { len }, particles: n }).unwrap();
        prop_assert!(g.max_row_sum() < 1e-12);
        prop_assert!(g.rows.iter().flatten().all(|r| r.1 >= 0.0));
        let init = g.delta(&g.states[0].clone()).unwrap();
        let law = g.transient_law(&init, 0.7).unwrap();
        prop_assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
