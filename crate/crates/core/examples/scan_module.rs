//! Forward pass of the full model on a random proposal volume: three axis
//! branches, spatial mixing, fusion and the upsampling head.

use rand::SeedableRng;
use scanssc::autodiff::{ParamSet, Tape};
use scanssc::scan::{fuse_tri_features, scan_branches, ScanConfig, ScanSscModel};
use scanssc::voxel::{GridDims, LogitGrid};
use scanssc::Tensor;

fn main() -> scanssc::Result<()> {
    let dims = GridDims::new([16, 16, 4], [8, 8, 2], 8)?;
    let mut ps = ParamSet::new();
    let model = ScanSscModel::new(&mut ps, dims, 20, ScanConfig::new(8), 7)?;
    println!("{} parameter tensors, {} scalars", ps.len(), ps.scalar_count());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let f = Tensor::random_uniform(&[8, 8, 2, 8], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let bound = ps.bind_constant(&mut tape);
    let fv = tape.constant(f);

    let branches = scan_branches(&mut tape, &bound, fv, &model.masks, &model.scan, &model.config)?;
    let (_, weights) = fuse_tri_features(&mut tape, &bound, branches, &model.scan.fusion)?;
    let w = tape.value(weights);
    let n = w.numel() / 3;
    let mean = |k: usize| w.data().iter().skip(k).step_by(3).sum::<f64>() / n as f64;
    println!("mean fusion weights: depth {:.3}, width {:.3}, height {:.3}", mean(0), mean(1), mean(2));

    let logits = model.forward(&mut tape, &bound, fv)?;
    let grid = LogitGrid::new(tape.value(logits).clone())?;
    println!("logits {:?} x {} classes", grid.dims(), grid.num_classes());
    let pred = grid.argmax();
    let occupied = pred.labels().iter().filter(|&&l| l != 0).count();
    println!("untrained prediction occupies {occupied} of {} voxels", pred.labels().len());
    Ok(())
}
