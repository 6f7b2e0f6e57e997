//! The composite training objective
//! `ce + scal_geo + scal_sem + λ_d·depth + λ_scan·(scan_dep + scan_wid + scan_hgt)`.
//!
//! The affinity (scal) losses follow the MonoScene formulation on softmax
//! probabilities: `-ln` of precision, recall and specificity ratios. The
//! geometric variant reduces the prediction to empty vs occupied (class 0 is
//! empty); the semantic variant runs per class and averages over classes
//! present in the ground truth.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scan_loss::{scan_loss_total, ScanLossConfig};
use crate::tensor::Tensor;
use crate::voxel::{ClassTable, LabeledGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_scan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_d: 0.001,
            lambda_scan: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_d", self.lambda_d), ("lambda_scan", self.lambda_scan)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar value of every term. Disabled scan axes report 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub scal_geo: f64,
    pub scal_sem: f64,
    pub depth: f64,
    pub scan_dep: f64,
    pub scan_wid: f64,
    pub scan_hgt: f64,
    pub total: f64,
}

impl LossReport {
    /// Recomputes the weighted sum from the individual terms.
    pub fn hand_sum(&self, w: &LossWeights) -> f64 {
        self.ce
            + self.scal_geo
            + self.scal_sem
            + w.lambda_d * self.depth
            + w.lambda_scan * (self.scan_dep + self.scan_wid + self.scan_hgt)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct of floats")
    }
}

fn check_dims(tape: &Tape, logits: Var, y: &LabeledGrid, table: &ClassTable, op: &'static str) -> Result<()> {
    let s = tape.shape(logits);
    let d = y.dims();
    if s.len() != 4 || s[..3] != d || s[3] != table.num_classes() {
        return Err(Error::shape(op, s, &[d[0], d[1], d[2], table.num_classes()]));
    }
    y.validate(table)
}

/// Mean over labelled voxels of `-w_y · log softmax(l)_y`. With no labelled
/// voxel the result is a constant 0.
pub fn ce_loss(
    tape: &mut Tape,
    logits: Var,
    y: &LabeledGrid,
    table: &ClassTable,
    class_weights: Option<&[f64]>,
) -> Result<Var> {
    check_dims(tape, logits, y, table, "ce_loss")?;
    let p = table.num_classes();
    if let Some(w) = class_weights {
        if w.len() != p {
            return Err(Error::config(format!("{} class weights for {p} classes", w.len())));
        }
    }
    let ignore = table.ignore_label();
    let mut coef = Tensor::zeros(tape.shape(logits));
    let mut valid = 0usize;
    for (v, &l) in y.labels().iter().enumerate() {
        if l != ignore {
            valid += 1;
            coef.data_mut()[v * p + l as usize] = class_weights.map_or(1.0, |w| w[l as usize]);
        }
    }
    if valid == 0 {
        log::warn!("cross-entropy: no labelled voxels, term set to 0");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let ls = tape.log_softmax(logits, 3)?;
    let c = tape.constant(coef);
    let prod = tape.mul(ls, c)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -1.0 / valid as f64))
}

fn neg_log_ratio(tape: &mut Tape, num: Var, den: Var) -> Result<Var> {
    let r = tape.div(num, den)?;
    let l = tape.log(r);
    Ok(tape.scale(l, -1.0))
}

fn accumulate(tape: &mut Tape, acc: Option<Var>, term: Var) -> Result<Option<Var>> {
    Ok(Some(match acc {
        None => term,
        Some(a) => tape.add(a, term)?,
    }))
}

/// Geometric and semantic affinity losses.
///
/// A ratio is only used when the ground truth makes it meaningful: the
/// precision and recall terms need at least one voxel of the positive set,
/// the specificity term at least one voxel of the negative set.
pub fn scal_losses(tape: &mut Tape, logits: Var, y: &LabeledGrid, table: &ClassTable) -> Result<(Var, Var)> {
    check_dims(tape, logits, y, table, "scal_losses")?;
    let p = table.num_classes();
    let ignore = table.ignore_label();
    let n = y.labels().len();
    let probs = tape.softmax(logits, 3)?;
    let probs = tape.reshape(probs, &[n, p])?;
    let valid = Tensor::from_fn(&[n, 1], |i| (y.labels()[i] != ignore) as u8 as f64);
    let valid_count = valid.sum();

    // Geometric: occupied = any class other than 0.
    let occ = Tensor::from_fn(&[n, 1], |i| {
        let l = y.labels()[i];
        (l != ignore && l != 0) as u8 as f64
    });
    let occ_count = occ.sum();
    let free = Tensor::from_fn(&[n, 1], |i| (y.labels()[i] == 0) as u8 as f64);
    let empty_p = tape.slice(probs, 1, 0, 1)?;
    let nonempty_p = {
        let neg = tape.scale(empty_p, -1.0);
        tape.add_scalar(neg, 1.0)
    };
    let mut geo = None;
    if occ_count > 0.0 {
        let occ_v = tape.constant(occ.clone());
        let valid_v = tape.constant(valid.clone());
        let inter = tape.mul(nonempty_p, occ_v)?;
        let inter = tape.sum(inter);
        let pred_mass = tape.mul(nonempty_p, valid_v)?;
        let pred_mass = tape.sum(pred_mass);
        let precision = neg_log_ratio(tape, inter, pred_mass)?;
        geo = accumulate(tape, geo, precision)?;
        let occ_total = tape.constant(Tensor::scalar(occ_count));
        let recall = neg_log_ratio(tape, inter, occ_total)?;
        geo = accumulate(tape, geo, recall)?;
    }
    if valid_count - occ_count > 0.0 {
        let free_v = tape.constant(free.clone());
        let tn = tape.mul(empty_p, free_v)?;
        let tn = tape.sum(tn);
        let free_total = tape.constant(Tensor::scalar(valid_count - occ_count));
        let spec = neg_log_ratio(tape, tn, free_total)?;
        geo = accumulate(tape, geo, spec)?;
    }
    let geo = geo.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));

    // Semantic: one-vs-rest per class present in the ground truth.
    let mut sem = None;
    let mut counted = 0usize;
    for c in 0..p {
        let t = Tensor::from_fn(&[n, 1], |i| (y.labels()[i] == c as u16) as u8 as f64);
        let t_count = t.sum();
        if t_count == 0.0 {
            continue;
        }
        counted += 1;
        let pc = tape.slice(probs, 1, c, 1)?;
        let t_v = tape.constant(t.clone());
        let valid_v = tape.constant(valid.clone());
        let inter = tape.mul(pc, t_v)?;
        let inter = tape.sum(inter);
        let mass = tape.mul(pc, valid_v)?;
        let mass = tape.sum(mass);
        let precision = neg_log_ratio(tape, inter, mass)?;
        let mut term = precision;
        let t_total = tape.constant(Tensor::scalar(t_count));
        let recall = neg_log_ratio(tape, inter, t_total)?;
        term = tape.add(term, recall)?;
        let rest_count = valid_count - t_count;
        if rest_count > 0.0 {
            let rest = Tensor::from_fn(&[n, 1], |i| valid.data()[i] * (1.0 - t.data()[i]));
            let rest_v = tape.constant(rest);
            let not_pc = {
                let neg = tape.scale(pc, -1.0);
                tape.add_scalar(neg, 1.0)
            };
            let tn = tape.mul(not_pc, rest_v)?;
            let tn = tape.sum(tn);
            let rest_total = tape.constant(Tensor::scalar(rest_count));
            let spec = neg_log_ratio(tape, tn, rest_total)?;
            term = tape.add(term, spec)?;
        }
        sem = accumulate(tape, sem, term)?;
    }
    let sem = match sem {
        Some(s) => tape.scale(s, 1.0 / counted as f64),
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok((geo, sem))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub scan: ScanLossConfig,
    /// Weight the cross-entropy with the class table's frequency weights.
    pub class_weighted_ce: bool,
}

/// The total as a tape variable together with its term values.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub report: LossReport,
}

/// Records the full objective on `tape`. `depth_term` is an externally
/// computed scalar (0 when no depth estimator is attached).
pub fn total_loss(
    tape: &mut Tape,
    logits: Var,
    y: &LabeledGrid,
    table: &ClassTable,
    cfg: &ObjectiveConfig,
    depth_term: f64,
) -> Result<Objective> {
    cfg.weights.validate()?;
    if !depth_term.is_finite() {
        return Err(Error::config(format!("depth term must be finite, got {depth_term}")));
    }
    let weights = if cfg.class_weighted_ce {
        Some(table.frequency_weights().ok_or_else(|| {
            Error::config("class-weighted cross-entropy requested but the class table has no weights")
        })?)
    } else {
        None
    };
    let ce = ce_loss(tape, logits, y, table, weights)?;
    let (geo, sem) = scal_losses(tape, logits, y, table)?;
    let scan = scan_loss_total(tape, logits, y, table, &cfg.scan)?;

    let mut total = tape.add(ce, geo)?;
    total = tape.add(total, sem)?;
    total = tape.add_scalar(total, cfg.weights.lambda_d * depth_term);
    if cfg.weights.lambda_scan != 0.0 {
        let s = tape.scale(scan.total, cfg.weights.lambda_scan);
        total = tape.add(total, s)?;
    }
    let val = |v: Var| tape.value(v).item();
    let term = |t: Option<Var>| t.map_or(0.0, val);
    let report = LossReport {
        ce: val(ce),
        scal_geo: val(geo),
        scal_sem: val(sem),
        depth: depth_term,
        scan_dep: term(scan.terms[0]),
        scan_wid: term(scan.terms[1]),
        scan_hgt: term(scan.terms[2]),
        total: val(total),
    };
    if let Some(i) = tape.value(total).first_non_finite() {
        return Err(Error::NonFinite {
            context: "total loss".into(),
            index: i,
        });
    }
    Ok(Objective { total, report })
}

/// Term values for a fixed logit grid.
pub fn loss_report(
    g: &crate::voxel::LogitGrid,
    y: &LabeledGrid,
    table: &ClassTable,
    cfg: &ObjectiveConfig,
    depth_term: f64,
) -> Result<LossReport> {
    let mut tape = Tape::new();
    let l = tape.constant(g.tensor().clone());
    Ok(total_loss(&mut tape, l, y, table, cfg, depth_term)?.report)
}
