//! Running a JSON experiment description and writing the CSV rows to stdout.

use currentlab::experiment::{parse_config, run, write_csv, Command};

fn main() -> currentlab::Result<()> {
    let cfg = parse_config(
        r#"{"name": "zrp-demo",
            "model": {"kind": "zrp", "rate": {"family": "exp-saturating", "a": 1, "b": 1}, "rho": 1},
            "observables": [{"kind": "current", "points": [{"t": 10, "x": 0}, {"t": 10, "x": 3}]}],
            "replicas": 500, "seed": 2}"#,
    )?;
    let rows = run(Command::Analytic, &cfg)?.into_iter().chain(run(Command::Simulate, &cfg)?).collect::<Vec<_>>();
    write_csv(&rows, std::io::stdout().lock(), false)
}
