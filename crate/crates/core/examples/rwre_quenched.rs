//! Walks in a random environment: quenched mean current and its random shift.

use currentlab::rwre::{env_speed, quenched_current_mean, z_correction, EnvLaw, Environment};

fn main() -> currentlab::Result<()> {
    let law = EnvLaw::two_point_default();
    println!("speed {:.6}", env_speed(&law)?);
    let (mu, n, t, r) = (1.0, 4000u64, 1.0, 0.5);
    let steps = n as i64;
    for seed in 0..5 {
        let env = Environment::sample(&law, seed, -3 * steps - 200, 3 * steps + 200);
        let y = quenched_current_mean(&env, &law, mu, n, t, r, 1e-12)?;
        let z = z_correction(&env, &law, n, t, 1e-12)?;
        let rn = (n as f64).sqrt();
        println!("env {seed}: E^w Y = {y:.3}, shift -mu r sqrt(n) - mu Z = {:.3}", -mu * r * rn - mu * z);
    }
    Ok(())
}
