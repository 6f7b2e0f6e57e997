//! Runs every brute-force comparison suite and reports the worst deviation.

use scanssc::oracle::{run_suite, Suite};

fn main() -> scanssc::Result<()> {
    let trials = std::env::args().nth(1).map_or(200, |s| s.parse().expect("trials"));
    for suite in Suite::ALL {
        let o = run_suite(suite, trials, 42, None)?;
        println!(
            "{suite:<9} worst {:.2e} (trial {}), tolerance {:.0e}: {}",
            o.worst.deviation,
            o.worst.trial,
            o.tolerance,
            if o.passed() { "pass" } else { "FAIL" }
        );
    }
    Ok(())
}
