//! Zero-range with a concave saturating rate: stationary constants and label tails.

use currentlab::zrp::{invariant_measure, label_tails, RateFn};

fn main() -> currentlab::Result<()> {
    let g = RateFn::exp_saturating(1.0, 1.0)?;
    let nu = invariant_measure(&g, 1.0)?;
    println!("fugacity {:.6}, variance {:.6}, flux {:.6}, speed {:.6}", nu.phi, nu.variance(), nu.flux(), nu.char_speed());
    for p in label_tails(&g, 1.0, 0.5, 20.0, 6, 4000, 9)? {
        println!("k={}: P(y>=k) {:.4}, P(z<=-k) {:.4}, r^k {:.4}", p.k, p.y_tail.value, p.z_tail.value, p.bound);
    }
    Ok(())
}
