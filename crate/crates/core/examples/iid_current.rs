//! Independent walks: exact finite-n current moments next to a Monte Carlo estimate.

use currentlab::gauss::SpaceTimePoint;
use currentlab::harness::{run_replicas, Accumulator, SeedPolicy};
use currentlab::iid::{exact_current_moments, CurrentSim, InitialLaw, JumpKernel, LatticeWindow};

fn main() -> currentlab::Result<()> {
    let kernel = JumpKernel::new(&[(-1, 0.3), (1, 0.5), (2, 0.2)])?;
    let law = InitialLaw::Bernoulli { rho: 0.4 };
    let n = 900;
    let pts = [SpaceTimePoint::new(1.0, 0.0), SpaceTimePoint::new(2.0, 0.5)];
    let exact = exact_current_moments(&kernel, &law, n, &pts)?;
    let sim = CurrentSim::new(&kernel, &law, n, &pts, LatticeWindow::covering(&kernel, n, &pts)?)?;
    let acc = run_replicas(&Accumulator::new(["a", "b"]), 5000, SeedPolicy::new(7), |seed| {
        Ok(sim.sample(seed).values.iter().map(|&v| v as f64).collect())
    })?;
    let est = acc.estimate()?;
    for (i, name) in ["a", "b"].iter().enumerate() {
        let (m, v) = (est.mean_of(name), est.var_of(name));
        println!(
            "point {i}: mean {:.2} ± {:.2} (exact {:.2}), var {:.1} ± {:.1} (exact {:.1})",
            m.value, m.se, exact.means[i], v.value, v.se, exact.cov[i][i]
        );
    }
    Ok(())
}
