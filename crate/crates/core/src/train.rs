//! Overfitting one scene: a learnable proposal-grid feature volume and every
//! module parameter are fitted by gradient descent with momentum.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamSet, Tape};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats;
use crate::metrics::{confusion_counts, metrics_from_counts, Metrics};
use crate::objective::{total_loss, LossReport};
use crate::report;
use crate::scan::ScanSscModel;
use crate::tensor::Tensor;
use crate::voxel::{ClassTable, LabeledGrid, LogitGrid};

/// Model, parameters and the learnable input volume.
pub struct ToySetup {
    pub params: ParamSet,
    pub features: ParamId,
    pub model: ScanSscModel,
    pub table: ClassTable,
}

impl ToySetup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = cfg.grid_dims()?;
        let table = cfg.class_table()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f00d);
        let [x, y, z] = dims.proposal;
        let features = params.add(
            "input.features",
            Tensor::random_uniform(&[x, y, z, cfg.channels], -cfg.feature_init, cfg.feature_init, &mut rng),
        );
        let model = ScanSscModel::new(&mut params, dims, table.num_classes(), cfg.scan_config(), cfg.seed)?;
        Ok(ToySetup {
            params,
            features,
            model,
            table,
        })
    }

    pub fn logits(&self) -> Result<LogitGrid> {
        let mut tape = Tape::new();
        let bound = self.params.bind_constant(&mut tape);
        let y = self.model.forward(&mut tape, &bound, bound.var(self.features))?;
        LogitGrid::new(tape.value(y).clone())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// One report per evaluated state: index `k` follows `k` updates.
    pub reports: Vec<LossReport>,
    pub initial_metrics: Metrics,
    pub final_metrics: Metrics,
    pub final_logits: LogitGrid,
}

impl TrainOutcome {
    pub fn initial_total(&self) -> f64 {
        self.reports[0].total
    }

    pub fn final_total(&self) -> f64 {
        self.reports.last().expect("at least the initial state").total
    }
}

pub fn grid_metrics(pred: &LabeledGrid, gt: &LabeledGrid, table: &ClassTable) -> Result<Metrics> {
    let d = gt.dims();
    let c = confusion_counts(pred, gt, &[0..d[0], 0..d[1], 0..d[2]], table.num_classes(), table.ignore_label())?;
    Ok(metrics_from_counts(&c))
}

/// Runs `cfg.steps` updates on `gt`, calling `on_step` with every report.
/// A non-finite loss or gradient stops training with [`Error::Diverged`].
pub fn train_toy(
    cfg: &RunConfig,
    gt: &LabeledGrid,
    mut on_step: impl FnMut(usize, &LossReport),
) -> Result<TrainOutcome> {
    let mut setup = ToySetup::new(cfg)?;
    let dims = cfg.grid_dims()?;
    if gt.dims() != dims.target {
        return Err(Error::config(format!(
            "ground truth is {:?} but the config targets {:?}",
            gt.dims(),
            dims.target
        )));
    }
    gt.validate(&setup.table)?;
    let objective = cfg.objective_config();
    let mut velocity: Vec<Tensor> = setup.params.ids().map(|id| Tensor::zeros(setup.params.get(id).shape())).collect();
    let mut reports = Vec::with_capacity(cfg.steps + 1);
    let mut initial_metrics = None;
    let mut last_logits = None;

    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let bound = setup.params.bind(&mut tape);
        let logits = setup.model.forward(&mut tape, &bound, bound.var(setup.features))?;
        let obj = match total_loss(&mut tape, logits, gt, &setup.table, &objective, cfg.depth_term) {
            Ok(o) => o,
            Err(Error::NonFinite { context, .. }) => {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite {context}"),
                })
            }
            Err(e) => return Err(e),
        };
        log::debug!("step {step}: total {:.6}", obj.report.total);
        on_step(step, &obj.report);
        reports.push(obj.report);
        let grid = LogitGrid::new(tape.value(logits).clone())?;
        if step == 0 {
            initial_metrics = Some(grid_metrics(&grid.argmax(), gt, &setup.table)?);
        }
        if step == cfg.steps {
            last_logits = Some(grid);
            break;
        }
        let grads = tape.backward(obj.total)?;
        let grads = setup.params.gradients(&bound, &grads);
        for ((id, g), v) in setup.params.ids().collect::<Vec<_>>().into_iter().zip(&grads).zip(&mut velocity) {
            if let Some(i) = g.first_non_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("non-finite gradient of {} at {i}", setup.params.name(id)),
                });
            }
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = cfg.momentum * *vi + gi;
            }
            for (p, vi) in setup.params.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *p -= cfg.learning_rate * vi;
            }
        }
    }
    let final_logits = last_logits.expect("loop ends on the last step");
    let final_metrics = grid_metrics(&final_logits.argmax(), gt, &setup.table)?;
    Ok(TrainOutcome {
        reports,
        initial_metrics: initial_metrics.expect("step 0 always runs"),
        final_metrics,
        final_logits,
    })
}

/// The per-step reports as JSON lines.
pub fn reports_jsonl(reports: &[LossReport]) -> String {
    reports.iter().map(|r| r.to_json() + "\n").collect()
}

/// Writes `losses.jsonl`, `final.sscl`, `final_pred.sscg`, `metrics.json` and
/// per-axis segment CSVs into `dir`.
pub fn write_outputs(dir: &Path, outcome: &TrainOutcome, gt: &LabeledGrid, table: &ClassTable) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    formats::write_file(&dir.join("losses.jsonl"), reports_jsonl(&outcome.reports).as_bytes())?;
    formats::write_logits(&dir.join("final.sscl"), &outcome.final_logits)?;
    let pred = outcome.final_logits.argmax();
    formats::write_grid(&dir.join("final_pred.sscg"), &pred)?;
    let summary = serde_json::json!({
        "initial": outcome.initial_metrics,
        "final": outcome.final_metrics,
        "initial_total": outcome.initial_total(),
        "final_total": outcome.final_total(),
    });
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    formats::write_file(&dir.join("metrics.json"), json.as_bytes())?;
    for axis in crate::voxel::Axis::ALL {
        if gt.dims()[axis.index()] >= crate::metrics::SEGMENTS {
            let seg = crate::metrics::segment_report(&pred, gt, axis, table.num_classes(), table.ignore_label())?;
            formats::write_file(
                &dir.join(format!("segments_{}.csv", axis.short_name())),
                report::segment_csv(&seg).as_bytes(),
            )?;
        }
    }
    Ok(())
}
