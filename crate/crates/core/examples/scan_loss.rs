//! Cumulative averages along each axis and the resulting scan loss on a small
//! labelled grid with a few ignored voxels.

use scanssc::scan_loss::{cumulative_average, cumulative_targets, scan_loss_value, ScanLossConfig};
use scanssc::voxel::{Axis, ClassTable, LabeledGrid, LogitGrid};
use scanssc::Tensor;

fn main() -> scanssc::Result<()> {
    let table = ClassTable::generic(3)?;
    // A 4×1×1 column: two class-1 voxels in front, an ignored one, class 2 at the back.
    let y = LabeledGrid::new([4, 1, 1], vec![1, 1, 255, 2])?;
    let g = LogitGrid::new(Tensor::from_fn(&[4, 1, 1, 3], |i| (i % 3 == (i / 3) % 3) as u8 as f64))?;

    for flipped in [false, true] {
        let c = cumulative_average(&g, Axis::Depth, flipped);
        let t = cumulative_targets(&y, Axis::Depth, &table, flipped)?;
        println!("depth, flipped = {flipped}");
        for x in 0..4 {
            let row = |t: &Tensor| (0..3).map(|k| format!("{:.3}", t.get(&[x, 0, 0, k]))).collect::<Vec<_>>().join(" ");
            println!("  x={x}  avg logits [{}]  target [{}]  mass {}", row(&c.values), row(&t.distributions), t.valid_mass[x]);
        }
    }

    let v = scan_loss_value(&g, &y, &table, &ScanLossConfig::default())?;
    println!("scan loss: dep {:.4} wid {:.4} hgt {:.4} total {:.4}", v.dep, v.wid, v.hgt, v.total);
    Ok(())
}
