use currentlab::error::Error;
use currentlab::harness::{run_replicas, Accumulator, SeedPolicy};
use currentlab::zrp::*;
use proptest::prelude::*;

fn exp_rate() -> RateFn {
    RateFn::exp_saturating(1.0, 1.0).unwrap()
}

#[test]
fn lone_particle_is_poisson() {
    let c = 0.6;
    let g = RateFn::new(RateFamily::Table { values: vec![c] }, None).unwrap();
    let t = 10.0;
    let w = ZrpWindow { lo: -5, hi: 60 };
    let acc = run_replicas(&Accumulator::new(["x"]), 10_000, SeedPolicy::new(3), |s| {
        let mut init = vec![0; w.len()];
        init[w.index(0).unwrap()] = 1;
        let run = zrp_run(&g, init, w, t, s)?;
        let pos = run.member(0).iter().position(|&v| v == 1).unwrap();
        Ok(vec![w.site(pos) as f64])
    })
    .unwrap();
    let est = acc.estimate().unwrap();
    assert!(est.mean_of("x").within(c * t, 4.0), "{:?}", est.mean_of("x"));
    assert!(est.var_of("x").within(c * t, 4.0), "{:?}", est.var_of("x"));
}

#[test]
fn sites_left_of_all_mass_stay_empty() {
    let g = exp_rate();
    let w = ZrpWindow { lo: -30, hi: 30 };
    let mut init = vec![0; w.len()];
    for x in [0, 3, 4] {
        init[w.index(x).unwrap()] = 2;
    }
    for seed in 0..50 {
        let run = zrp_run(&g, init.clone(), w, 15.0, seed).unwrap();
        assert!((w.lo..0).all(|x| run.occupation(0, x) == Some(0)));
        assert!(run.member(0).iter().sum::<u32>() <= 6);
    }
}

#[test]
fn stationary_occupation_mean_holds() {
    let g = exp_rate();
    let rho = 1.0;
    let nu = invariant_measure(&g, rho).unwrap();
    let t = 10.0;
    let w = ZrpWindow::covering(0, 0, t);
    let acc = run_replicas(&Accumulator::new(["n0", "n5"]), 4000, SeedPolicy::new(11), |s| {
        let run = zrp_run(&g, sample_stationary(&nu, w, s), w, t, s)?;
        Ok(vec![run.occupation(0, 0).unwrap() as f64, run.occupation(0, 5).unwrap() as f64])
    })
    .unwrap();
    let est = acc.estimate().unwrap();
    assert!(est.mean_of("n0").within(rho, 4.0), "{:?}", est.mean_of("n0"));
    assert!(est.mean_of("n5").within(rho, 4.0), "{:?}", est.mean_of("n5"));
}

#[test]
fn measures_are_accurate() {
    for g in [exp_rate(), RateFn::new(RateFamily::Constant, None).unwrap()] {
        for rho in [0.25, 1.0, 3.0] {
            let nu = invariant_measure(&g, rho).unwrap();
            assert!((nu.mean() - rho).abs() < 1e-10);
            assert!(nu.tail_mass < 1e-10);
            assert!((nu.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let flux: f64 = nu.pmf.iter().enumerate().map(|(k, p)| g.g(k as u32) * p).sum();
            assert!((flux - nu.flux()).abs() < 1e-10);
            let hat = HatMeasure::from_measure(&nu).unwrap();
            assert!(hat.pmf.iter().all(|&p| p >= 0.0));
            assert!((hat.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            // F(k−1)ν(k−1) − F(k)ν(k) = (k−ρ)ν(k)
            for k in 0..nu.pmf.len().min(40) {
                let prev = if k == 0 { 0.0 } else { hat.f_at(k as i64 - 1) * nu.pmf[k - 1] };
                let lhs = prev - hat.f_at(k as i64) * nu.pmf[k];
                assert!((lhs - (k as f64 - rho) * nu.pmf[k]).abs() < 1e-10, "k={k}");
            }
        }
    }
    let g = exp_rate();
    assert!(matches!(invariant_measure(&g, 0.0), Err(Error::Domain(_))));
    assert!(matches!(invariant_measure(&g, f64::NAN), Err(Error::Domain(_))));
}

#[test]
fn flux_speed_and_covariance_identities() {
    let g = exp_rate();
    let cfg = ZrpIdentityConfig { rho: 1.0, t: 20.0, z: None, sites: vec![2, 5, 8], replicas: 8000, seed: 5 };
    let r = zrp_identity_suite(&g, &cfg).unwrap();
    assert!(r.mean_current.within(r.expected_current, 4.0), "{:?} vs {}", r.mean_current, r.expected_current);
    assert!(r.var_minus_q.within(0.0, 4.0), "{:?}", r.var_minus_q);
    assert!(r.speed.within(r.char_speed, 4.0), "{:?} vs {}", r.speed, r.char_speed);
    assert!(r.martingale.within(0.0, 4.0), "{:?}", r.martingale);
    for s in &r.sites {
        assert!(s.diff.within(0.0, 4.0), "site {}: {:?}", s.j, s.diff);
    }
    let again = zrp_identity_suite(&g, &ZrpIdentityConfig { replicas: 100, ..cfg.clone() }).unwrap();
    let twice = zrp_identity_suite(&g, &ZrpIdentityConfig { replicas: 100, ..cfg }).unwrap();
    assert_eq!(again, twice);
}

#[test]
fn label_tails_are_geometric() {
    let g = exp_rate();
    for p in label_tails(&g, 1.0, 0.5, 30.0, 10, 10_000, 9).unwrap() {
        assert!(p.y_tail.value <= p.bound + 4.0 * p.y_tail.se, "{p:?}");
        assert!(p.z_tail.value <= p.bound + 4.0 * p.z_tail.se, "{p:?}");
    }
}

#[test]
fn wider_window_changes_nothing() {
    let g = exp_rate();
    let run = |w: ZrpWindow| {
        let mut c = label_setup(&g, 1.0, 0.5, w, 17).unwrap();
        c.run_until(10.0).unwrap();
        let occ: Vec<u32> = (-20..=20).map(|x| c.occupation(0, x).unwrap()).collect();
        (c.y().unwrap().label, c.z().unwrap().label, c.y_site(), c.z_site(), occ)
    };
    assert_eq!(run(ZrpWindow::covering(0, 0, 10.0)), run(ZrpWindow::covering(0, 0, 40.0)));
}

#[test]
fn convex_rates_are_caught_at_a_joint_refresh() {
    let g = RateFn::new(RateFamily::Table { values: vec![0.5, 0.6, 0.9] }, None).unwrap();
    let w = ZrpWindow { lo: -30, hi: 30 };
    let o = w.index(0).unwrap();
    let mut omega = vec![0; w.len()];
    let mut eta = vec![0; w.len()];
    omega[o] = 4;
    eta[o] = 2;
    let mut c = ZrpCoupled::new(&g, w, vec![omega, eta], 2).unwrap().with_labels((0, 1), Some(0), Some(0)).unwrap();
    match c.run_until(10.0) {
        Err(Error::Domain(msg)) => assert!(msg.contains("omega_i=3") && msg.contains("eta_i=1"), "{msg}"),
        other => panic!("expected a concavity failure, got {other:?}"),
    }
}

#[test]
fn labels_need_an_ordered_pair() {
    let g = exp_rate();
    let w = ZrpWindow { lo: -5, hi: 5 };
    let c = ZrpCoupled::new(&g, w, vec![vec![0; 11], vec![1; 11]], 0).unwrap();
    assert!(matches!(c.with_labels((0, 1), Some(0), None), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mark_partition_and_refresh_marginals(eta in 0u32..12, extra in 1u32..8, a in -5i64..5) {
        let g = exp_rate();
        let omega = eta + extra;
        let bands = jump_bands(g.g(eta), g.g(omega));
        prop_assert!(bands.iter().all(|b| b.1 >= 0.0));
        prop_assert!((bands.iter().map(|b| b.1).sum::<f64>() - 1.0).abs() < 1e-15);
        let s = SiteRates::at(&g, omega, eta);
        let b = a + extra as i64 - 1;
        let joint = joint_refresh(&s, a, b).unwrap();
        let y = y_refresh(&s, a, b);
        let z = z_refresh(&s, b);
        // Outcomes are (a, b−1), (a, b), (b, b) in that order.
        let py_a = joint[0].0 + joint[1].0;
        let pz_b = joint[1].0 + joint[2].0;
        prop_assert!((py_a - y[0].0).abs() < 1e-12);
        prop_assert!((pz_b - z[1].0).abs() < 1e-12);
        prop_assert!(joint.iter().all(|o| o.0 >= 0.0 && (o.0 == 0.0 || o.1.0 <= o.1.1)));
    }

    #[test]
    fn label_bookkeeping_stays_consistent(seed in 0u64..10_000) {
        let g = exp_rate();
        let mut c = label_setup(&g, 1.5, 0.5, ZrpWindow::covering(0, 0, 8.0), seed).unwrap();
        for k in 1..=16 {
            c.run_until(k as f64 * 0.5).unwrap();
            c.check().unwrap();
            let (y, z) = (c.y().unwrap(), c.z().unwrap());
            prop_assert!(y.label <= z.label);
            let minus = c.omega_minus().unwrap();
            let plus = c.eta_plus().unwrap();
            for i in 0..minus.len() {
                prop_assert!(c.member(1)[i] <= minus[i] && minus[i] <= c.member(0)[i]);
                prop_assert!(c.member(1)[i] <= plus[i] && plus[i] <= c.member(0)[i]);
            }
        }
    }
}
