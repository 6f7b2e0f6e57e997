//! Finite-difference checks of every gradient path on the tiny default
//! configuration, and the same check with a deliberately broken backward.

use scanssc::autodiff::GradCheckOptions;
use scanssc::checks::{faulty_tape_factory, run_suite, suite_options, tiny_config, CheckModule};

fn main() -> scanssc::Result<()> {
    let cfg = tiny_config();
    for g in run_suite(&cfg, None, &suite_options(0))? {
        println!("{:<12} {:<18} {:.2e}", g.module.name(), g.case, g.report.max_rel_error);
    }
    let broken = GradCheckOptions {
        tape_factory: faulty_tape_factory("softmax").expect("known op"),
        ..suite_options(0)
    };
    for g in run_suite(&cfg, Some(CheckModule::Objective), &broken)? {
        println!("with a corrupted softmax backward: {} {:.2e}", g.case, g.report.max_rel_error);
    }
    Ok(())
}
