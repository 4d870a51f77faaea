//! Random average process: kappa for a weight law and the scaled height fluctuation.

use currentlab::gauss::SpaceTimePoint;
use currentlab::harness::{run_replicas, Accumulator, SeedPolicy};
use currentlab::rap::{hbar_second_moment, kappa_const, simulate_rap_current, IncrementLaw, PerturbedKernel, WeightLaw};

fn main() -> currentlab::Result<()> {
    let law = WeightLaw::beta(2.0, 5.0)?;
    let k = kappa_const(&law, 64)?;
    println!("sigma_D^2 {:.6}, beta {:.6}, kappa {:.6}", k.sigma_d_sq, k.beta, k.kappa);
    let kernel = PerturbedKernel::new(&law, 100)?;
    let n = 2500;
    let exact = hbar_second_moment(&law, &kernel, n, 1.0);
    let inc = IncrementLaw::Constant { slope: 1.0 };
    let acc = run_replicas(&Accumulator::new(["h2"]), 200, SeedPolicy::new(3), |seed| {
        let s = simulate_rap_current(&law, &inc, n, &[SpaceTimePoint::new(1.0, 0.0)], seed, false)?;
        Ok(vec![s[0].hbar * s[0].hbar])
    })?;
    let mc = acc.estimate()?.mean_of("h2");
    println!("E[Hbar^2] at n={n}: exact {exact:.4}, sampled {:.4} ± {:.4}", mc.value, mc.se);
    Ok(())
}
