//! Axis-wise evaluation of a degraded prediction: per-bin curves and the
//! four-segment tables, printed as CSV.

use rand::{Rng, SeedableRng};
use scanssc::metrics::{axis_bin_report, segment_report};
use scanssc::report::{bin_csv, segment_csv};
use scanssc::synth::{generate, Preset};
use scanssc::voxel::{Axis, LabeledGrid};

fn main() -> scanssc::Result<()> {
    let gt = generate(Preset::Corridor, [32, 16, 8], 20, 4)?;
    // Drop occupied voxels with a probability that grows with depth.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let pred = LabeledGrid::from_fn(gt.dims(), |x, y, z| {
        let l = gt.get(x, y, z);
        if l != 0 && rng.gen_bool(x as f64 / 40.0) {
            0
        } else {
            l
        }
    });
    for axis in Axis::ALL {
        println!("{axis} segments");
        print!("{}", segment_csv(&segment_report(&pred, &gt, axis, 20, 255)?));
    }
    println!("depth bins");
    print!("{}", bin_csv(&axis_bin_report(&pred, &gt, Axis::Depth, 8, 20, 255)?));
    Ok(())
}
