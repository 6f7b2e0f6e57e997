//! Prints the three cascade masks at their default margins, a margin sweep
//! for depth, and the flipped variants.
//!
//! ```text
//! cargo run --example masks [length]
//! ```

use scanssc::masks::{build_depth_mask, MaskSpec};
use scanssc::voxel::Axis;

fn main() -> scanssc::Result<()> {
    let length: usize = std::env::args().nth(1).map_or(8, |s| s.parse().expect("length"));
    for axis in Axis::ALL {
        let spec = MaskSpec::canonical(axis);
        let mask = spec.build(length)?;
        println!("{axis} (margin {}), '#' = blocked", spec.margin_ratio);
        print!("{}", mask.to_ascii());
        println!("flipped:");
        print!("{}\n", mask.flip().to_ascii());
    }
    for r in [0.0, 0.25, 0.5, 1.0] {
        let m = build_depth_mask(length, r)?;
        println!("depth margin {r}: {} allowed pairs", m.allowed_count());
    }
    Ok(())
}
