use currentlab::gauss::{fbm_shape, poisson_fbm_cov, SpaceTimePoint};
use currentlab::harness::{run_replicas, Accumulator, SeedPolicy};
use currentlab::rap::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn dirichlet3() -> WeightLaw {
    WeightLaw::new(WeightKind::Dirichlet { lo: -1, alphas: vec![1.0, 2.0, 0.5] }).unwrap()
}

#[test]
fn duality_forward_vs_dual_walk() {
    let law = dirichlet3();
    let inc = IncrementLaw::Gamma { shape: 1.5, rate: 0.5 };
    for seed in 0..20u64 {
        let field = SampledWeights { law: &law, seed };
        let steps = 50u64;
        let h0 = HeightField::from_increments(-60, 60, &inc, seed).unwrap();
        let mut h = h0.clone();
        for _ in 0..steps {
            h = rap_step(&h, &field).unwrap();
        }
        for k in [h.lo, 0, h.hi()] {
            let dl = dual_law(&field, k, steps, steps, 0.0).unwrap();
            let dual = dl.expect(|x| h0.get(x).unwrap());
            let fwd = h.get(k).unwrap();
            assert!((dual - fwd).abs() < 1e-10, "seed {seed} site {k}: {dual} vs {fwd}");
        }
    }
}

#[test]
fn deterministic_weights_drift() {
    let law = WeightLaw::new(WeightKind::Fixed { lo: -1, weights: vec![0.2, 0.5, 0.3] }).unwrap();
    let field = SampledWeights { law: &law, seed: 1 };
    let m = dual_quenched_mean(&field, 3, 40, 40).unwrap();
    assert!((m - (3.0 + 40.0 * law.v)).abs() < 1e-12);
}

#[test]
fn potential_kernel_certificate() {
    for law in [dirichlet3(), WeightLaw::new(WeightKind::Dirichlet { lo: -2, alphas: vec![0.7, 1.0, 1.3, 2.0] }).unwrap()]
    {
        let k = PerturbedKernel::new(&law, 400).unwrap();
        let (harm, norm) = k.certificate();
        assert!(harm < 1e-9, "harmonicity {harm}");
        assert!((norm - 1.0).abs() < 1e-9, "normalization {norm}");
        assert_eq!(k.abar[0], 0.0);
        let edge = k.abar[400] / 400.0 * 2.0 * law.sigma1_sq;
        assert!((edge - 1.0).abs() < 0.01, "edge ratio {edge}");
    }
}

#[test]
fn potential_kernel_matches_green_differences() {
    // ā(x) = lim [Ḡ_n(0,0) − Ḡ_n(x,0)]; the gap decays like n^{-1/2}, so the
    // Richardson combination 2g(4n) − g(n) removes the leading term.
    let law = dirichlet3();
    let k = PerturbedKernel::new(&law, 200).unwrap();
    let flat = PerturbedKernel { q0: k.qbar.clone(), ..k.clone() };
    let g = |x: i64, n: u64| flat.green(0, n) - flat.green(x, n);
    for x in [1i64, 2, 5] {
        let a = k.abar[x as usize];
        let extrap = 2.0 * g(x, 40_000) - g(x, 10_000);
        assert!((extrap - a).abs() < 1e-3 * a, "x={x}: {extrap} vs {a}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn kernels_are_symmetric_probability_vectors(a in proptest::collection::vec(0.2f64..3.0, 2..5), lo in -3i64..1) {
        let law = WeightLaw::new(WeightKind::Dirichlet { lo, alphas: a }).unwrap();
        let (q0, qb) = q_kernels(&law);
        prop_assert!((q0.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((qb.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for y in 0..=qb.d {
            prop_assert!((qb.at(y) - qb.at(-y)).abs() < 1e-15);
            prop_assert!((q0.at(y) - q0.at(-y)).abs() < 1e-15);
        }
    }
}

#[test]
fn beta_kappa_is_inverse_theta() {
    for (alpha, theta) in [(1.0, 2.0), (2.0, 5.0)] {
        let law = WeightLaw::beta(alpha, theta).unwrap();
        let k = kappa_const(&law, 64).unwrap();
        assert!((k.kappa - 1.0 / theta).abs() < 1e-12);
        let mc = WeightLaw::monte_carlo(WeightKind::Beta { alpha, theta }, 1_000_000, 17).unwrap();
        let km = kappa_const(&mc, 64).unwrap();
        assert!(km.kappa_se > 0.0);
        assert!((km.kappa - 1.0 / theta).abs() < 4.0 * km.kappa_se, "{} ± {}", km.kappa, km.kappa_se);
    }
}

#[test]
fn uniform_scaled_law_uses_sampled_moments() {
    let law = WeightLaw::new(WeightKind::UniformScaled { lo: -1, base: vec![1.0, 2.0, 1.0] }).unwrap();
    assert_eq!(law.moment_samples, 1_000_000);
    let k = kappa_const(&law, 100).unwrap();
    assert!(k.kappa > 0.0 && k.kappa_se > 0.0 && k.kappa_se < 0.05 * k.kappa);
}

#[test]
fn green_function_route() {
    let n = 10_000;
    for law in [WeightLaw::beta(1.0, 2.0).unwrap(), dirichlet3()] {
        let k = PerturbedKernel::new(&law, 200).unwrap();
        let lhs = k.green(0, n) * k.beta / (n as f64).sqrt();
        let rhs = 1.0 / (PI * law.sigma1_sq).sqrt();
        assert!((lhs / rhs - 1.0).abs() < 0.03, "{lhs} vs {rhs}");
    }
}

#[test]
fn gamma_increments_are_invariant() {
    let (alpha, theta, lambda) = (1.0, 2.0, 0.5);
    let law = WeightLaw::beta(alpha, theta).unwrap();
    let inc = IncrementLaw::Gamma { shape: theta, rate: lambda };
    let field = SampledWeights { law: &law, seed: 5 };
    let mut h = HeightField::from_increments(-200, 10_000, &inc, 5).unwrap();
    for _ in 0..100 {
        h = rap_step(&h, &field).unwrap();
    }
    let eta = h.increments();
    let n = eta.len() as f64;
    let m = eta.iter().sum::<f64>() / n;
    let v = eta.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = eta.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    let (em, ev) = (theta / lambda, theta / lambda / lambda);
    assert!((m - em).abs() < 4.0 * (v / n).sqrt(), "mean {m} vs {em}");
    assert!((v - ev).abs() < 4.0 * ((m4 - v * v) / n).sqrt(), "var {v} vs {ev}");
}

#[test]
fn decomposition_identity_per_sample() {
    let law = dirichlet3();
    let inc = IncrementLaw::Gamma { shape: 2.0, rate: 1.0 };
    let pts = [SpaceTimePoint::new(1.0, 0.0), SpaceTimePoint::new(0.5, -1.0)];
    let (mu, _) = inc.moments();
    for seed in 0..5 {
        let out = simulate_rap_current(&law, &inc, 100, &pts, seed, true).unwrap();
        for s in &out {
            let h = s.height.unwrap();
            assert!((h - (mu * s.h + s.s)).abs() < 1e-9 * (1.0 + h.abs()), "{h} vs {}", mu * s.h + s.s);
            let ybar = (h - mu * s.r * 10.0) / 100f64.powf(0.25);
            assert!((ybar - s.ybar).abs() < 1e-9);
        }
    }
}

#[test]
fn hbar_second_moment_exact_and_limit() {
    let law = WeightLaw::beta(1.0, 2.0).unwrap();
    let k = PerturbedKernel::new(&law, 100).unwrap();
    let target = k.kappa * (law.sigma1_sq / PI).sqrt();
    let exact = hbar_second_moment(&law, &k, 10_000, 1.0);
    assert!((exact / target - 1.0).abs() < 0.1);
    // Monte Carlo at small n against the exact finite-n value.
    let n = 400;
    let acc = run_replicas(&Accumulator::new(["h2"]), 4000, SeedPolicy::new(3), |seed| {
        let s = simulate_rap_current(&law, &IncrementLaw::Constant { slope: 1.0 }, n, &[SpaceTimePoint::new(1.0, 0.0)], seed, false)?;
        Ok(vec![s[0].hbar * s[0].hbar])
    })
    .unwrap();
    let m = acc.estimate().unwrap().mean_of("h2");
    assert!(m.within(hbar_second_moment(&law, &k, n, 1.0), 4.0), "{m:?}");
}

#[test]
fn fbm_covariance_shape() {
    // Beta(1,2) weights with Gamma(2, λ) increments: Cov Ȳ ∝ √s + √t − √|t−s| at r = 0.
    let law = WeightLaw::beta(1.0, 2.0).unwrap();
    let inc = IncrementLaw::Gamma { shape: 2.0, rate: 1.0 };
    let n = 10_000;
    let times = [0.25, 0.5, 1.0];
    let pts: Vec<SpaceTimePoint> = times.iter().map(|&t| SpaceTimePoint::new(t, 0.0)).collect();
    let names: Vec<String> = (0..3)
        .map(|i| format!("m{i}"))
        .chain((0..3).flat_map(|i| (0..=i).map(move |j| format!("c{i}{j}"))))
        .collect();
    let acc = run_replicas(&Accumulator::new(names), 800, SeedPolicy::new(8), |seed| {
        let c = rap_conditional_moments(&law, &inc, n, &pts, seed)?;
        let mut row = c.mean.clone();
        for i in 0..3 {
            for j in 0..=i {
                row.push(c.cov[i][j]);
            }
        }
        Ok(row)
    })
    .unwrap();
    let est = acc.estimate().unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..3 {
        for j in 0..=i {
            let total = est.cov_of(&format!("m{i}"), &format!("m{j}")).value + est.mean_of(&format!("c{i}{j}")).value;
            xs.push(fbm_shape(times[i], times[j]));
            ys.push(total);
        }
    }
    let c1 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / xs.iter().map(|x| x * x).sum::<f64>();
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - c1 * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 > 0.98, "R² = {r2}");
    // Here μ̄²κ = σ₀², so the limit is the Poisson-walk fBM covariance scaled by σ₀².
    let expect = poisson_fbm_cov(2.0, law.sigma1_sq, 1.0, 1.0);
    assert!((c1 * fbm_shape(1.0, 1.0) / expect - 1.0).abs() < 0.15, "c1 = {c1}");
}
