//! Stationary exclusion: current variance against the second class particle.

use currentlab::asep::{identity_suite, IdentityConfig};
use currentlab::gauss::AsepParams;

fn main() -> currentlab::Result<()> {
    let params = AsepParams::new(0.75, 0.25, 0.5)?;
    let cfg = IdentityConfig { t: 30.0, z: None, sites: vec![-2, 0, 2], replicas: 4000, seed: 11, goal1_radius: None };
    let r = identity_suite(&params, &cfg)?;
    println!("Var J        {:.3} ± {:.3}", r.var_current.value, r.var_current.se);
    println!("rho(1-rho)E|Q-z| {:.3} ± {:.3}", r.scaled_abs_q.value, r.scaled_abs_q.se);
    println!("E Q/t        {:.4} ± {:.4} (speed {:.4})", r.speed.value, r.speed.se, r.char_speed);
    for s in &r.sites {
        println!("site {:>3}: cov {:.4}, scaled P(Q=j) {:.4}", s.j, s.cov.value, s.scaled_prob.value);
    }
    Ok(())
}
