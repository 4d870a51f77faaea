use currentlab::gauss::{z_cov, ModelMoments, SpaceTimePoint};
use currentlab::harness::{run_replicas, Accumulator, SeedPolicy};
use currentlab::iid::*;
use proptest::prelude::*;

fn pt(t: f64, r: f64) -> SpaceTimePoint {
    SpaceTimePoint::new(t, r)
}

fn max_rel_err(n: u64, law: &InitialLaw, pts: &[SpaceTimePoint]) -> f64 {
    let k = JumpKernel::symmetric();
    let m = exact_current_moments(&k, law, n, pts).unwrap();
    let (mu, s0) = law.moments().unwrap();
    let mm = ModelMoments::new(mu, s0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            let z = z_cov(pts[i], pts[j], &mm).unwrap();
            let c = m.cov[i][j] / (n as f64).sqrt();
            worst = worst.max(((c - z) / z).abs());
        }
    }
    worst
}

#[test]
fn scaled_covariance_near_limit_at_large_n() {
    let law = InitialLaw::Poisson { mu: 1.0 };
    let e = max_rel_err(10_000, &law, &[pt(1.0, 0.0), pt(2.0, 0.0)]);
    assert!(e < 0.02, "relative error {e}");
}

#[test]
fn scaled_covariance_converges_monotonically() {
    // r = 0 keeps the observer on the lattice for every n; with r ≠ 0 the
    // floor of r√n adds O(n^{-1/2}) jitter that is not monotone in n.
    let pts = [pt(0.5, 0.0), pt(1.0, 0.0), pt(1.5, 0.0), pt(2.0, 0.0)];
    for law in [InitialLaw::Poisson { mu: 1.0 }, InitialLaw::Geometric { m: 0.8 }] {
        let errs: Vec<f64> = [100, 1000, 10_000].iter().map(|&n| max_rel_err(n, &law, &pts)).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{law:?}: {errs:?}");
        assert!(errs[2] < 0.05, "{law:?}: {errs:?}");
    }
}

#[test]
fn spatial_offsets_converge_on_square_n() {
    let pts = [pt(1.0, 0.0), pt(1.0, 0.5), pt(2.0, -0.3), pt(0.5, 1.0)];
    let law = InitialLaw::Geometric { m: 0.8 };
    let a = max_rel_err(100, &law, &pts);
    let b = max_rel_err(10_000, &law, &pts);
    assert!(b < a && b < 0.05, "{a} {b}");
}

#[test]
fn covariance_symmetric_and_psd() {
    let k = JumpKernel::new(&[(-1, 0.3), (0, 0.2), (2, 0.5)]).unwrap();
    let pts = [pt(0.3, 0.0), pt(1.0, 0.2), pt(1.0, -0.5), pt(2.0, 0.0), pt(0.7, 1.0)];
    let m = exact_current_moments(&k, &InitialLaw::Geometric { m: 1.5 }, 200, &pts).unwrap();
    let a = nalgebra::DMatrix::from_fn(5, 5, |i, j| m.cov[i][j]);
    for i in 0..5 {
        for j in 0..5 {
            assert_eq!(m.cov[i][j], m.cov[j][i]);
        }
    }
    let ev = a.symmetric_eigen().eigenvalues;
    assert!(ev.iter().all(|&x| x > -1e-9), "{ev}");
}

#[test]
fn monte_carlo_matches_exact_moments() {
    let k = JumpKernel::symmetric();
    let law = InitialLaw::Poisson { mu: 1.0 };
    let n = 400;
    let pts = [pt(1.0, 0.0), pt(2.0, 0.0)];
    let exact = exact_current_moments(&k, &law, n, &pts).unwrap();
    let sim = CurrentSim::new(&k, &law, n, &pts, LatticeWindow::covering(&k, n, &pts).unwrap()).unwrap();
    let acc = Accumulator::new(["y1", "y2"]);
    let acc = run_replicas(&acc, 10_000, SeedPolicy::new(3), |seed| {
        let s = sim.sample(seed);
        Ok(s.values.iter().map(|&v| v as f64).collect())
    })
    .unwrap();
    let e = acc.estimate().unwrap();
    for (i, name) in ["y1", "y2"].iter().enumerate() {
        assert!(e.mean_of(name).within(exact.means[i], 4.0), "{name} mean");
        assert!(e.var_of(name).within(exact.cov[i][i], 4.0), "{name} var");
    }
    assert!(e.cov_of("y1", "y2").within(exact.cov[0][1], 4.0));
}

#[test]
fn doubling_the_window_changes_nothing() {
    let k = JumpKernel::new(&[(-1, 0.3), (0, 0.2), (2, 0.5)]).unwrap();
    let law = InitialLaw::Geometric { m: 1.0 };
    let n = 64;
    let pts = [pt(1.0, 0.0), pt(0.5, -1.0)];
    let w = LatticeWindow::minimal(&k, n, &pts).unwrap();
    let w2 = LatticeWindow { lo: 2 * w.lo - 10, hi: 2 * w.hi + 10 };
    for seed in 0..20 {
        let a = simulate_current(&k, &law, n, &pts, w, seed).unwrap();
        let b = simulate_current(&k, &law, n, &pts, w2, seed).unwrap();
        assert_eq!(a.values, b.values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn walk_law_mass_and_mean(
        raw in prop::collection::vec((-3i64..=3, 0.05f64..1.0), 1..5),
        steps in 0u64..300,
    ) {
        let total: f64 = raw.iter().map(|e| e.1).sum();
        let mut pairs: Vec<(i64, f64)> = raw.iter().map(|&(x, p)| (x, p / total)).collect();
        // Force the exact unit sum through the last entry.
        let head: f64 = pairs[..pairs.len() - 1].iter().map(|e| e.1).sum();
        let last = pairs.len() - 1;
        pairs[last].1 = 1.0 - head;
        prop_assume!(pairs[last].1 >= 0.0);
        let Ok(k) = JumpKernel::new(&pairs) else { return Ok(()); };
        let (v, _) = kernel_moments(&k);
        let w = exact_walk_law(&k, steps).unwrap();
        prop_assert!((w.mass() - 1.0).abs() < 1e-12);
        prop_assert!((w.mean() - v * steps as f64).abs() < 1e-9 * (1.0 + steps as f64));
    }

    #[test]
    fn tail_is_monotone(steps in 1u64..200, x in -300i64..300) {
        let k = JumpKernel::new(&[(-1, 0.3), (0, 0.2), (2, 0.5)]).unwrap();
        let w = exact_walk_law(&k, steps).unwrap();
        prop_assert!(w.tail(x) >= w.tail(x + 1));
        prop_assert!((w.tail(x) + w.cdf(x) - 1.0).abs() < 1e-12);
    }
}
