//! Gradient-check suites: every tape primitive, the scan-loss path, the
//! objective, the prediction head and the full model.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    grad_check, BackwardFault, Bound, GradCheckOptions, GradCheckReport, Padding, ParamSet, Tape, Var,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::objective::total_loss;
use crate::scan::{predict_head, HeadParams, ScanSscModel};
use crate::scan_loss::{scan_loss_total, ScanLossConfig};
use crate::tensor::{matrix, Tensor};
use crate::voxel::{ClassTable, GridDims, LabeledGrid};

/// Pass threshold of the command-line check.
pub const DEFAULT_THRESHOLD: f64 = 1e-3;

/// Largest grid and channel count the suite accepts.
pub const MAX_EXTENT: usize = 4;
pub const MAX_CHANNELS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CheckModule {
    Primitives,
    ScanLoss,
    Objective,
    Head,
    ScanModule,
}

impl CheckModule {
    pub const ALL: [CheckModule; 5] = [
        CheckModule::Primitives,
        CheckModule::ScanLoss,
        CheckModule::Objective,
        CheckModule::Head,
        CheckModule::ScanModule,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckModule::Primitives => "primitives",
            CheckModule::ScanLoss => "scan-loss",
            CheckModule::Objective => "objective",
            CheckModule::Head => "head",
            CheckModule::ScanModule => "scan-module",
        }
    }
}

impl fmt::Display for CheckModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckModule::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown module {s:?}; expected one of primitives, scan-loss, objective, head, scan-module")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupResult {
    pub module: CheckModule,
    pub case: String,
    pub report: GradCheckReport,
}

/// The tiny configuration used when no config file is given: a 4×4×2 grid
/// at both resolutions, eight channels and five classes.
pub fn tiny_config() -> RunConfig {
    RunConfig {
        target_dims: [4, 4, 2],
        proposal_dims: [4, 4, 2],
        channels: 8,
        num_classes: 5,
        ..RunConfig::default()
    }
}

fn check_tiny(cfg: &RunConfig) -> Result<()> {
    if cfg.target_dims.iter().chain(&cfg.proposal_dims).any(|&e| e > MAX_EXTENT) || cfg.channels > MAX_CHANNELS {
        return Err(Error::config(format!(
            "gradient checks need grids of at most {MAX_EXTENT} per axis and at most {MAX_CHANNELS} channels"
        )));
    }
    if cfg.num_classes == 0 || cfg.num_classes > 8 {
        return Err(Error::config("gradient checks need num_classes between 2 and 8"));
    }
    Ok(())
}

fn random_labels(dims: [usize; 3], p: usize, ignore_frac: f64, rng: &mut ChaCha8Rng) -> LabeledGrid {
    LabeledGrid::from_fn(dims, |_, _, _| {
        if rng.gen_bool(ignore_frac) {
            255
        } else {
            rng.gen_range(0..p) as u16
        }
    })
}

fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::random_uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type Primitive = (&'static str, Vec<Vec<usize>>, fn(&mut Tape, &[Var]) -> Result<Var>);

fn primitive_cases() -> Vec<Primitive> {
    vec![
        ("add", vec![vec![2, 3], vec![1, 3]], |t, v| t.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 1]], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![1, 3]], |t, v| t.mul(v[0], v[1])),
        ("div", vec![vec![2, 3], vec![2, 3]], |t, v| {
            let d = t.exp(v[1]);
            t.div(v[0], d)
        }),
        ("scale", vec![vec![4]], |t, v| Ok(t.scale(v[0], -2.5))),
        ("add_scalar", vec![vec![4]], |t, v| {
            let a = t.add_scalar(v[0], 0.5);
            t.mul(a, a)
        }),
        ("relu", vec![vec![3, 3]], |t, v| Ok(t.relu(v[0]))),
        ("log", vec![vec![5]], |t, v| {
            let e = t.exp(v[0]);
            Ok(t.log(e))
        }),
        ("exp", vec![vec![5]], |t, v| Ok(t.exp(v[0]))),
        ("sum_axis", vec![vec![2, 3, 2]], |t, v| t.sum_axis(v[0], 1)),
        ("mean", vec![vec![2, 3, 2]], |t, v| t.mean(v[0], 2)),
        ("matmul", vec![vec![2, 3, 4], vec![2, 4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("linear", vec![vec![2, 3, 4], vec![4, 5], vec![5]], |t, v| t.linear(v[0], v[1], v[2])),
        ("softmax", vec![vec![2, 5]], |t, v| t.softmax(v[0], 1)),
        ("log_softmax", vec![vec![3, 4]], |t, v| t.log_softmax(v[0], 0)),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("concat", vec![vec![2, 2], vec![2, 3]], |t, v| t.concat(&[v[0], v[1]], 1)),
        ("slice", vec![vec![3, 4]], |t, v| t.slice(v[0], 1, 1, 2)),
        ("reshape", vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4])),
        ("permute", vec![vec![2, 3, 4]], |t, v| t.permute(v[0], &[2, 0, 1])),
        ("apply_along", vec![vec![2, 3, 2]], |t, v| {
            let m = matrix(5, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 2.0));
            t.apply_along(v[0], 1, Arc::new(m))
        }),
        ("conv3d_zero", vec![vec![3, 2, 2, 2], vec![3, 3, 3, 2, 3]], |t, v| t.conv3d(v[0], v[1], Padding::Zero)),
        ("conv3d_reflect", vec![vec![3, 3, 2, 2], vec![3, 3, 3, 2, 2]], |t, v| {
            t.conv3d(v[0], v[1], Padding::Reflect)
        }),
    ]
}

fn primitives(opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let mut out = Vec::new();
    for (k, (name, shapes, op)) in primitive_cases().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let mut ps = ParamSet::new();
        for (i, s) in shapes.iter().enumerate() {
            ps.add(format!("{name}.in{i}"), Tensor::random_uniform(s, -1.5, 1.5, &mut rng));
        }
        let ids: Vec<_> = ps.ids().collect();
        let seed = opts.seed ^ (k as u64 + 1);
        let f = |t: &mut Tape, b: &Bound| -> Result<Var> {
            let vars: Vec<Var> = ids.iter().map(|&id| b.var(id)).collect();
            let y = op(t, &vars)?;
            weighted_sum(t, y, seed)
        };
        out.push((name.to_string(), grad_check(f, &ps, opts)?));
    }
    Ok(out)
}

fn scan_loss_cases(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<Vec<(String, GradCheckReport)>> {
    let table = ClassTable::generic(cfg.num_classes)?;
    let dims = cfg.target_dims;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5ca7);
    let y = random_labels(dims, table.num_classes(), 0.2, &mut rng);
    let mut ps = ParamSet::new();
    ps.add("logits", Tensor::random_uniform(&[dims[0], dims[1], dims[2], table.num_classes()], -2.0, 2.0, &mut rng));
    let mut out = Vec::new();
    for (case, flipped) in [("canonical", [false; 3]), ("flipped", [true; 3])] {
        let sc = ScanLossConfig {
            enabled: [true; 3],
            flipped,
        };
        let f = |t: &mut Tape, b: &Bound| -> Result<Var> {
            let l = b.var(ps.ids().next().unwrap());
            Ok(scan_loss_total(t, l, &y, &table, &sc)?.total)
        };
        out.push((case.to_string(), grad_check(f, &ps, opts)?));
    }
    Ok(out)
}

fn objective_case(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let table = ClassTable::generic(cfg.num_classes)?;
    // Logit grids of 3×4×2 keep the objective check independent of the model.
    let dims = [3, 4, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0b1e);
    let y = random_labels(dims, table.num_classes(), 0.1, &mut rng);
    let mut ps = ParamSet::new();
    let id = ps.add("logits", Tensor::random_uniform(&[3, 4, 2, table.num_classes()], -2.0, 2.0, &mut rng));
    let obj = cfg.objective_config();
    grad_check(
        |t, b| Ok(total_loss(t, b.var(id), &y, &table, &obj, cfg.depth_term)?.total),
        &ps,
        opts,
    )
}

fn head_case(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let c = cfg.channels;
    let p = cfg.num_classes;
    let dims = GridDims::new([4, 4, 2], [2, 2, 1], c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4ead);
    let mut ps = ParamSet::new();
    let f_id = ps.add("input", Tensor::random_uniform(&[2, 2, 1, c], -1.0, 1.0, &mut rng));
    let head = HeadParams::init(&mut ps, c, p, &mut rng);
    let seed = opts.seed;
    grad_check(
        |t, b| {
            let y = predict_head(t, b, b.var(f_id), &head, &dims, cfg.padding, 1e-5)?;
            weighted_sum(t, y, seed)
        },
        &ps,
        opts,
    )
}

fn model_case(cfg: &RunConfig, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let dims = cfg.grid_dims()?;
    let table = cfg.class_table()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x3ca1);
    let y = random_labels(dims.target, table.num_classes(), 0.1, &mut rng);
    let mut ps = ParamSet::new();
    let [x, yy, z] = dims.proposal;
    let f_id = ps.add("input", Tensor::random_uniform(&[x, yy, z, cfg.channels], -1.0, 1.0, &mut rng));
    let mut scfg = cfg.scan_config();
    // A larger residual gain keeps every branch visibly in the gradient.
    scfg.residual_init_gain = 0.5;
    let model = ScanSscModel::new(&mut ps, dims, table.num_classes(), scfg, cfg.seed)?;
    let obj = cfg.objective_config();
    grad_check(
        |t, b| {
            let logits = model.forward(t, b, b.var(f_id))?;
            Ok(total_loss(t, logits, &y, &table, &obj, cfg.depth_term)?.total)
        },
        &ps,
        opts,
    )
}

/// Runs the selected modules (all when `only` is `None`).
pub fn run_suite(cfg: &RunConfig, only: Option<CheckModule>, opts: &GradCheckOptions) -> Result<Vec<GroupResult>> {
    check_tiny(cfg)?;
    let mut out = Vec::new();
    let mut push = |module, list: Vec<(String, GradCheckReport)>| {
        for (case, report) in list {
            out.push(GroupResult { module, case, report });
        }
    };
    for m in CheckModule::ALL {
        if only.is_some_and(|o| o != m) {
            continue;
        }
        log::info!("gradient check: {m}");
        match m {
            CheckModule::Primitives => push(m, primitives(opts)?),
            CheckModule::ScanLoss => push(m, scan_loss_cases(cfg, opts)?),
            CheckModule::Objective => push(m, vec![("total_loss".into(), objective_case(cfg, opts)?)]),
            CheckModule::Head => push(m, vec![("predict_head".into(), head_case(cfg, opts)?)]),
            CheckModule::ScanModule => push(m, vec![("model_total_loss".into(), model_case(cfg, opts)?)]),
        }
    }
    Ok(out)
}

/// Options for the command-line suite: full checks except for the model,
/// whose parameter tensors are sampled.
pub fn suite_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions {
        seed,
        max_coords_per_param: Some(24),
        ..GradCheckOptions::default()
    }
}

macro_rules! fault_factories {
    ($($name:literal => $f:ident),* $(,)?) => {
        $(fn $f() -> Tape {
            Tape::with_fault(BackwardFault { op: $name, factor: 1.5 })
        })*

        /// A tape factory whose backward rule for `op` is scaled by 1.5.
        pub fn faulty_tape_factory(op: &str) -> Option<fn() -> Tape> {
            match op {
                $($name => Some($f as fn() -> Tape),)*
                _ => None,
            }
        }

        pub const FAULTABLE_OPS: &[&str] = &[$($name),*];
    };
}

fault_factories! {
    "add" => fault_add,
    "mul" => fault_mul,
    "div" => fault_div,
    "log" => fault_log,
    "softmax" => fault_softmax,
    "log_softmax" => fault_log_softmax,
    "layer_norm" => fault_layer_norm,
    "matmul" => fault_matmul,
    "apply_along" => fault_apply_along,
    "conv3d" => fault_conv3d,
    "relu" => fault_relu,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass_tight() {
        let r = run_suite(&tiny_config(), Some(CheckModule::Primitives), &GradCheckOptions::default()).unwrap();
        for g in &r {
            assert!(g.report.max_rel_error < 1e-6, "{} {}", g.case, g.report.max_rel_error);
        }
    }

    #[test]
    fn scan_loss_scoped() {
        let r = run_suite(&tiny_config(), Some(CheckModule::ScanLoss), &GradCheckOptions::default()).unwrap();
        assert!(r.iter().all(|g| g.module == CheckModule::ScanLoss));
        assert!(r.iter().all(|g| g.report.max_rel_error < 1e-6));
    }

    #[test]
    fn fault_is_caught() {
        let opts = GradCheckOptions {
            tape_factory: faulty_tape_factory("log_softmax").unwrap(),
            ..GradCheckOptions::default()
        };
        let r = run_suite(&tiny_config(), Some(CheckModule::ScanLoss), &opts).unwrap();
        assert!(r.iter().all(|g| g.report.max_rel_error > 1e-2));
    }

    #[test]
    fn rejects_large_config() {
        let cfg = RunConfig::default();
        assert!(run_suite(&cfg, None, &GradCheckOptions::default()).is_err());
    }
}
