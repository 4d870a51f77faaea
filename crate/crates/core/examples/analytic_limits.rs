//! Limiting covariances of the scaled current for a few space-time points.

use currentlab::gauss::{rap_cov, z_cov, ModelMoments, SpaceTimePoint};

fn main() -> currentlab::Result<()> {
    let pts = [SpaceTimePoint::new(0.5, 0.0), SpaceTimePoint::new(1.0, 0.0), SpaceTimePoint::new(1.0, 1.0)];
    // Poisson(1) occupations, nearest-neighbour symmetric jumps.
    let m = ModelMoments::new(1.0, 1.0, 1.0)?;
    let rap = m.with_kappa(0.5)?;
    println!("{:>12} {:>12} {:>12} {:>12}", "a", "b", "walks", "rap");
    for a in &pts {
        for b in &pts {
            println!(
                "{:>12} {:>12} {:>12.6} {:>12.6}",
                format!("({}, {})", a.t, a.r),
                format!("({}, {})", b.t, b.r),
                z_cov(*a, *b, &m)?,
                rap_cov(*a, *b, &rap)?
            );
        }
    }
    Ok(())
}
