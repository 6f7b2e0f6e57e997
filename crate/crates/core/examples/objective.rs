//! Evaluates the full objective on random logits and prints the LossReport
//! JSON, then the same scene with the scan loss switched off.

use rand::SeedableRng;
use scanssc::objective::{loss_report, ObjectiveConfig};
use scanssc::synth::{generate, Preset};
use scanssc::voxel::{ClassTable, LogitGrid};
use scanssc::Tensor;

fn main() -> scanssc::Result<()> {
    let table = ClassTable::semantic_kitti();
    let y = generate(Preset::Corridor, [8, 8, 4], table.num_classes(), 2)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let g = LogitGrid::new(Tensor::random_uniform(&[8, 8, 4, 20], -2.0, 2.0, &mut rng))?;

    let mut cfg = ObjectiveConfig::default();
    let full = loss_report(&g, &y, &table, &cfg, 0.0)?;
    println!("{}", full.to_json());
    println!("hand sum {:.12}, total {:.12}", full.hand_sum(&cfg.weights), full.total);

    cfg.weights.lambda_scan = 0.0;
    let base = loss_report(&g, &y, &table, &cfg, 0.0)?;
    println!("without scan loss: total {:.6}", base.total);
    Ok(())
}
