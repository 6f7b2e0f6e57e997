//! Fits the scan model to one synthetic corridor scene.
//!
//! ```text
//! cargo run --release --example train_toy [steps] [out_dir]
//! ```

use std::path::PathBuf;

use scanssc::config::RunConfig;
use scanssc::synth::{generate, Preset};
use scanssc::train::{train_toy, write_outputs};

fn main() -> scanssc::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    if let Some(steps) = args.next() {
        cfg.steps = steps.parse().expect("steps must be an integer");
    }
    let table = cfg.class_table()?;
    let gt = generate(Preset::Corridor, cfg.target_dims, table.num_classes(), cfg.seed)?;

    let outcome = train_toy(&cfg, &gt, |step, r| {
        if step % 20 == 0 {
            println!(
                "step {step:4}  total {:.4}  ce {:.4}  geo {:.4}  sem {:.4}  scan {:.4}",
                r.total,
                r.ce,
                r.scal_geo,
                r.scal_sem,
                r.scan_dep + r.scan_wid + r.scan_hgt
            );
        }
    })?;
    println!(
        "loss {:.4} -> {:.4} ({:.1}%), mIoU {:?} -> {:?}",
        outcome.initial_total(),
        outcome.final_total(),
        100.0 * outcome.final_total() / outcome.initial_total(),
        outcome.initial_metrics.miou,
        outcome.final_metrics.miou
    );
    if let Some(dir) = args.next() {
        let dir = PathBuf::from(dir);
        write_outputs(&dir, &outcome, &gt, &table)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
