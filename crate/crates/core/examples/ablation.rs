//! Short toy runs of the component ablations: single branches, all branches
//! without the scan loss, single scan-loss axes, the scan loss alone, and
//! the full model.

use scanssc::config::RunConfig;
use scanssc::synth::{generate, Preset};
use scanssc::train::train_toy;

fn main() -> scanssc::Result<()> {
    let steps = std::env::args().nth(1).map_or(60, |s| s.parse().expect("steps"));
    let off = [false; 3];
    let one = |k: usize| {
        let mut v = [false; 3];
        v[k] = true;
        v
    };
    let rows: Vec<(&str, [bool; 3], [bool; 3])> = vec![
        ("baseline", off, off),
        ("(a) depth branch", one(0), off),
        ("(b) width branch", one(1), off),
        ("(c) height branch", one(2), off),
        ("(d) all branches", [true; 3], off),
        ("(e) depth loss", off, one(0)),
        ("(f) width loss", off, one(1)),
        ("(g) height loss", off, one(2)),
        ("(h) all losses", off, [true; 3]),
        ("full", [true; 3], [true; 3]),
    ];
    let gt = generate(Preset::Corridor, [16, 16, 4], 20, 0)?;
    println!("{:<20} {:>10} {:>10} {:>8}", "config", "loss0", "lossN", "mIoU");
    for (name, branches, losses) in rows {
        let cfg = RunConfig {
            branches,
            scan_loss: losses,
            steps,
            ..RunConfig::default()
        };
        let o = train_toy(&cfg, &gt, |_, _| {})?;
        println!(
            "{name:<20} {:>10.4} {:>10.4} {:>8.4}",
            o.initial_total(),
            o.final_total(),
            o.final_metrics.miou.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
