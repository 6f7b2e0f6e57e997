//! Toy training and the synthetic scenes it runs on.

use scanssc::config::RunConfig;
use scanssc::synth::{generate, occupancy_by_height, Preset};
use scanssc::train::train_toy;

fn short(steps: usize) -> RunConfig {
    RunConfig {
        target_dims: [8, 8, 4],
        proposal_dims: [4, 4, 2],
        steps,
        ..RunConfig::default()
    }
}

#[test]
fn scan_weight_changes_the_trajectory() {
    let cfg = short(15);
    let gt = generate(Preset::Corridor, cfg.target_dims, 20, 1).unwrap();
    let with = train_toy(&cfg, &gt, |_, _| {}).unwrap();
    let without = train_toy(&RunConfig { lambda_scan: 0.0, ..cfg.clone() }, &gt, |_, _| {}).unwrap();
    assert!(without.reports.iter().all(|r| r.total == r.ce + r.scal_geo + r.scal_sem + cfg.lambda_d * r.depth));
    let ce_with: Vec<f64> = with.reports.iter().map(|r| r.ce).collect();
    let ce_without: Vec<f64> = without.reports.iter().map(|r| r.ce).collect();
    assert_eq!(ce_with[0], ce_without[0]);
    assert_ne!(ce_with[1..], ce_without[1..]);
}

#[test]
fn loss_falls_on_a_small_scene() {
    let cfg = short(60);
    let gt = generate(Preset::Blocks, cfg.target_dims, 20, 2).unwrap();
    let mut seen = 0;
    let o = train_toy(&cfg, &gt, |step, _| {
        assert_eq!(step, seen);
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 61);
    assert!(o.final_total() < o.initial_total());
}

#[test]
fn corridor_occupancy_never_rises_with_height() {
    for seed in 0..8 {
        let g = generate(Preset::Corridor, [16, 16, 8], 20, seed).unwrap();
        let occ = occupancy_by_height(&g);
        assert_eq!(occ.len(), 8);
        assert!(occ.windows(2).all(|w| w[1] <= w[0]), "seed {seed}: {occ:?}");
        assert!(occ[0] > 0.0);
    }
}

#[test]
fn scenes_depend_only_on_the_seed() {
    for p in [Preset::Corridor, Preset::Blocks, Preset::Random] {
        let a = generate(p, [12, 10, 4], 20, 5).unwrap();
        assert_eq!(a, generate(p, [12, 10, 4], 20, 5).unwrap());
        assert_ne!(a, generate(p, [12, 10, 4], 20, 6).unwrap());
    }
    assert!(generate(Preset::Corridor, [8, 8, 4], 4, 0).is_err());
}

#[test]
fn config_text_round_trips() {
    let mut cfg = RunConfig::default();
    cfg.margins = [0.25, 0.5, 0.0];
    cfg.module_flip = [true, false, true];
    cfg.loss_flip = [false, true, false];
    cfg.lambda_scan = 0.5;
    cfg.learning_rate = 0.0125;
    assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert!(RunConfig::parse("no_such_key = 1").is_err());
    assert!(RunConfig::parse("steps = many").is_err());
}
