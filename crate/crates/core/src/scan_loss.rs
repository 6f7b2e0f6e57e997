//! Scan Loss: cross-entropy between axis-wise cumulatively averaged logits
//! and identically accumulated ground-truth class distributions.
//!
//! Accumulation runs from far voxels toward near ones:
//!
//! * depth: position `x` averages slices `x..X` (from the back);
//! * width: positions left of the centre (`y < ⌊Y/2⌋`, 0-based) average
//!   `0..=y`, the rest average `y..Y` (from each side toward the centre);
//! * height: position `z` averages `0..=z` (from the bottom).
//!
//! A flipped axis mirrors its windows. The logit side averages every voxel;
//! the target side skips ignore-labelled voxels, and positions whose window
//! holds no labelled voxel are left out of the loss.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::{Axis, ClassTable, LabeledGrid, LogitGrid};

/// Index window averaged into position `pos` along an axis of extent `n`.
pub fn accumulation_window(axis: Axis, n: usize, pos: usize, flipped: bool) -> Range<usize> {
    if flipped {
        let w = accumulation_window(axis, n, n - 1 - pos, false);
        return n - w.end..n - w.start;
    }
    match axis {
        Axis::Depth => pos..n,
        Axis::Width => {
            if pos < n / 2 {
                0..pos + 1
            } else {
                pos..n
            }
        }
        Axis::Height => 0..pos + 1,
    }
}

/// The averaging operator along one axis as an `[n, n]` matrix.
pub fn cumulative_matrix(axis: Axis, n: usize, flipped: bool) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let w = accumulation_window(axis, n, i, flipped);
        let v = 1.0 / w.len() as f64;
        for j in w {
            m.data_mut()[i * n + j] = v;
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeLogits {
    pub axis: Axis,
    pub flipped: bool,
    pub values: Tensor,
}

/// Cumulative average of a `[X, Y, Z, P]` logit grid along `axis`.
pub fn cumulative_average(g: &LogitGrid, axis: Axis, flipped: bool) -> CumulativeLogits {
    let n = g.dims()[axis.index()];
    let values = g
        .tensor()
        .apply_along(axis.index(), &cumulative_matrix(axis, n, flipped))
        .expect("matrix matches axis extent");
    CumulativeLogits {
        axis,
        flipped,
        values,
    }
}

pub fn cumulative_average_depth(g: &LogitGrid) -> CumulativeLogits {
    cumulative_average(g, Axis::Depth, false)
}

pub fn cumulative_average_width(g: &LogitGrid) -> CumulativeLogits {
    cumulative_average(g, Axis::Width, false)
}

pub fn cumulative_average_height(g: &LogitGrid) -> CumulativeLogits {
    cumulative_average(g, Axis::Height, false)
}

/// Records the cumulative average of a logit tensor on `tape`.
pub fn cumulative_average_var(tape: &mut Tape, logits: Var, axis: Axis, flipped: bool) -> Result<Var> {
    let n = tape.shape(logits)[axis.index()];
    tape.apply_along(logits, axis.index(), Arc::new(cumulative_matrix(axis, n, flipped)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CumulativeTargets {
    pub axis: Axis,
    pub flipped: bool,
    /// `[X, Y, Z, P]`; rows with zero valid mass are all zero.
    pub distributions: Tensor,
    /// Number of labelled voxels in each position's window, `x`-major.
    pub valid_mass: Vec<u32>,
}

impl CumulativeTargets {
    pub fn valid_positions(&self) -> usize {
        self.valid_mass.iter().filter(|&&m| m > 0).count()
    }
}

/// Accumulated class distributions of `y` along `axis`, averaging one-hot
/// vectors of labelled voxels only.
pub fn cumulative_targets(
    y: &LabeledGrid,
    axis: Axis,
    table: &ClassTable,
    flipped: bool,
) -> Result<CumulativeTargets> {
    y.validate(table)?;
    let p = table.num_classes();
    let dims = y.dims();
    let a = axis.index();
    let n = dims[a];
    let ignore = table.ignore_label();
    let mut dist = Tensor::zeros(&[dims[0], dims[1], dims[2], p]);
    let mut mass = vec![0u32; y.labels().len()];
    // Prefix counts along the axis: prefix[k][c] = #voxels of class c in 0..k.
    let mut prefix = vec![0u32; (n + 1) * p];
    let mut other = [0usize; 2];
    let others: Vec<usize> = (0..3).filter(|&d| d != a).collect();
    for u in 0..dims[others[0]] {
        for v in 0..dims[others[1]] {
            other[0] = u;
            other[1] = v;
            let voxel = |k: usize| {
                let mut idx = [0usize; 3];
                idx[a] = k;
                idx[others[0]] = other[0];
                idx[others[1]] = other[1];
                y.index(idx[0], idx[1], idx[2])
            };
            prefix[..p].fill(0);
            for k in 0..n {
                let (head, tail) = prefix.split_at_mut((k + 1) * p);
                let row = &mut tail[..p];
                row.copy_from_slice(&head[k * p..]);
                let l = y.labels()[voxel(k)];
                if l != ignore {
                    row[l as usize] += 1;
                }
            }
            for k in 0..n {
                let w = accumulation_window(axis, n, k, flipped);
                let vi = voxel(k);
                let counts: Vec<u32> = (0..p)
                    .map(|c| prefix[w.end * p + c] - prefix[w.start * p + c])
                    .collect();
                let total: u32 = counts.iter().sum();
                mass[vi] = total;
                if total > 0 {
                    let row = &mut dist.data_mut()[vi * p..(vi + 1) * p];
                    for (r, &cnt) in row.iter_mut().zip(&counts) {
                        *r = cnt as f64 / total as f64;
                    }
                }
            }
        }
    }
    Ok(CumulativeTargets {
        axis,
        flipped,
        distributions: dist,
        valid_mass: mass,
    })
}

/// Soft-target cross-entropy `-Σ_c t_c log softmax(l)_c`, averaged over
/// positions with non-zero valid mass. Returns a constant 0 (with a warning)
/// when no position is valid.
pub fn scan_ce(tape: &mut Tape, cumulative_logits: Var, targets: &CumulativeTargets) -> Result<Var> {
    let shape = tape.shape(cumulative_logits).to_vec();
    if shape != targets.distributions.shape() {
        return Err(Error::shape("scan_ce", &shape, targets.distributions.shape()));
    }
    let valid = targets.valid_positions();
    if valid == 0 {
        log::warn!("scan loss ({}): no labelled voxels, term set to 0", targets.axis);
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let rank = shape.len();
    let ls = tape.log_softmax(cumulative_logits, rank - 1)?;
    let t = tape.constant(targets.distributions.clone());
    let prod = tape.mul(ls, t)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -1.0 / valid as f64))
}

/// Per-axis enable and direction switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanLossConfig {
    pub enabled: [bool; 3],
    pub flipped: [bool; 3],
}

impl Default for ScanLossConfig {
    fn default() -> Self {
        ScanLossConfig {
            enabled: [true; 3],
            flipped: [false; 3],
        }
    }
}

/// Per-axis terms on a tape; disabled axes are `None`.
#[derive(Clone, Copy, Debug)]
pub struct ScanLossVars {
    pub terms: [Option<Var>; 3],
    pub total: Var,
}

/// `L_scan = Σ_axis CE(cumavg(logits), cumavg(targets))` over enabled axes.
pub fn scan_loss_total(
    tape: &mut Tape,
    logits: Var,
    y: &LabeledGrid,
    table: &ClassTable,
    cfg: &ScanLossConfig,
) -> Result<ScanLossVars> {
    let s = tape.shape(logits);
    if s.len() != 4 || s[..3] != y.dims() || s[3] != table.num_classes() {
        return Err(Error::shape(
            "scan_loss_total",
            s,
            &[y.dims()[0], y.dims()[1], y.dims()[2], table.num_classes()],
        ));
    }
    let mut terms = [None; 3];
    let mut total: Option<Var> = None;
    for axis in Axis::ALL {
        let a = axis.index();
        if !cfg.enabled[a] {
            continue;
        }
        let cl = cumulative_average_var(tape, logits, axis, cfg.flipped[a])?;
        let ct = cumulative_targets(y, axis, table, cfg.flipped[a])?;
        let term = scan_ce(tape, cl, &ct)?;
        terms[a] = Some(term);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let total = total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    Ok(ScanLossVars { terms, total })
}

/// Values of the per-axis terms and their sum for a fixed logit grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanLossValue {
    pub dep: f64,
    pub wid: f64,
    pub hgt: f64,
    pub total: f64,
}

pub fn scan_loss_value(
    g: &LogitGrid,
    y: &LabeledGrid,
    table: &ClassTable,
    cfg: &ScanLossConfig,
) -> Result<ScanLossValue> {
    let mut tape = Tape::new();
    let l = tape.constant(g.tensor().clone());
    let v = scan_loss_total(&mut tape, l, y, table, cfg)?;
    let get = |t: Option<Var>| t.map_or(0.0, |t| tape.value(t).item());
    Ok(ScanLossValue {
        dep: get(v.terms[0]),
        wid: get(v.terms[1]),
        hgt: get(v.terms[2]),
        total: tape.value(v.total).item(),
    })
}
