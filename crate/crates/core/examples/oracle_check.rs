//! Exact generator checks on small lattices.

use currentlab::oracle::{asep_basic_diff, asep_concavity_diff, exact_pq, FiniteModel, Generator, Lattice};

fn main() -> currentlab::Result<()> {
    let ring = FiniteModel::Asep { p: 0.7, q: 0.3, lattice: Lattice::Ring { len: 5 }, particles: 2 };
    let g = Generator::build(&ring)?;
    let start = g.delta(&[1, 1, 0, 0, 0])?;
    for t in [0.5, 1.0, 4.0] {
        let law = g.transient_law(&start, t)?;
        let spread = law.iter().cloned().fold(0.0f64, f64::max) - law.iter().cloned().fold(1.0f64, f64::min);
        println!("t={t}: {} states, max - min probability {spread:.5}", g.len());
    }
    let (p, q) = exact_pq(7, 10);
    let mut diffs = vec![asep_basic_diff(p, q)];
    diffs.extend(asep_concavity_diff(p, q));
    for d in diffs {
        println!("{}: {} entries, {} mismatches", d.name, d.entries, d.mismatches.len());
    }
    Ok(())
}
