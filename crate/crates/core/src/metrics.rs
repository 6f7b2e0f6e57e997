//! Axis-binned SSC evaluation: occupancy recall and IoU plus semantic mIoU,
//! computed per slab of an axis and per quarter segment.
//!
//! Counts are pooled before ratios are taken, so a segment's metrics do not
//! depend on how it was binned. A ratio with a zero denominator is `None`
//! (serialized as `null`).

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{Axis, LabeledGrid};

/// Number of equal index segments in a [`SegmentReport`].
pub const SEGMENTS: usize = 4;

/// Default bin counts for the depth, width and height axes.
pub const DEFAULT_BINS: [usize; 3] = [256, 256, 32];

/// Per-class and occupancy confusion counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub occ_tp: u64,
    pub occ_fp: u64,
    pub occ_fn: u64,
    /// Labelled ground-truth voxels that are occupied.
    pub occupied_gt: u64,
}

impl ConfusionCounts {
    pub fn zeros(num_classes: usize) -> Self {
        ConfusionCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            occ_tp: 0,
            occ_fp: 0,
            occ_fn: 0,
            occupied_gt: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.fp.iter_mut().zip(&other.fp) {
            *a += b;
        }
        for (a, b) in self.fn_.iter_mut().zip(&other.fn_) {
            *a += b;
        }
        self.occ_tp += other.occ_tp;
        self.occ_fp += other.occ_fp;
        self.occ_fn += other.occ_fn;
        self.occupied_gt += other.occupied_gt;
    }

    fn record(&mut self, pred: u16, gt: u16) {
        let (p, g) = (pred as usize, gt as usize);
        if p == g {
            self.tp[g] += 1;
        } else {
            if p < self.fp.len() {
                self.fp[p] += 1;
            }
            self.fn_[g] += 1;
        }
        match (pred != 0, gt != 0) {
            (true, true) => self.occ_tp += 1,
            (true, false) => self.occ_fp += 1,
            (false, true) => self.occ_fn += 1,
            (false, false) => {}
        }
        if gt != 0 {
            self.occupied_gt += 1;
        }
    }
}

/// Counts over the box `region` (per-axis index ranges). Ground-truth voxels
/// carrying `ignore_label` are skipped; a predicted ignore label counts as
/// occupied but matches no class.
pub fn confusion_counts(
    pred: &LabeledGrid,
    gt: &LabeledGrid,
    region: &[Range<usize>; 3],
    num_classes: usize,
    ignore_label: u16,
) -> Result<ConfusionCounts> {
    let d = gt.dims();
    if pred.dims() != d {
        return Err(Error::shape("confusion_counts", &pred.dims(), &d));
    }
    for (a, r) in region.iter().enumerate() {
        if r.start > r.end || r.end > d[a] {
            return Err(Error::config(format!("region {r:?} outside axis extent {}", d[a])));
        }
    }
    let mut c = ConfusionCounts::zeros(num_classes);
    for x in region[0].clone() {
        for y in region[1].clone() {
            for z in region[2].clone() {
                let g = gt.get(x, y, z);
                if g == ignore_label {
                    continue;
                }
                if g as usize >= num_classes {
                    return Err(Error::Format(format!("ground-truth label {g} at ({x},{y},{z}) out of range")));
                }
                let p = pred.get(x, y, z);
                if p != ignore_label && p as usize >= num_classes {
                    return Err(Error::Format(format!("predicted label {p} at ({x},{y},{z}) out of range")));
                }
                c.record(p, g);
            }
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: Option<f64>,
    pub iou: Option<f64>,
    pub miou: Option<f64>,
}

/// Per-class IoU for classes `1..P`; `None` when a class is absent from both
/// prediction and ground truth.
pub fn class_ious(c: &ConfusionCounts) -> Vec<Option<f64>> {
    (1..c.num_classes())
        .map(|k| ratio(c.tp[k], c.tp[k] + c.fp[k] + c.fn_[k]))
        .collect()
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> Metrics {
    let ious: Vec<f64> = class_ious(c).into_iter().flatten().collect();
    Metrics {
        recall: ratio(c.occ_tp, c.occ_tp + c.occ_fn),
        iou: ratio(c.occ_tp, c.occ_tp + c.occ_fp + c.occ_fn),
        miou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    /// Axis index range of the bin, 0-based and end-exclusive.
    pub start: usize,
    pub end: usize,
    pub metrics: Metrics,
    pub occupied_gt_count: u64,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBinReport {
    pub axis: Axis,
    pub bin_count: usize,
    pub bins: Vec<BinRow>,
}

/// Index ranges of `bin_count` bins of width `⌈n / bin_count⌉`; the last bin
/// may be short and trailing empty bins are dropped.
pub fn bin_ranges(n: usize, bin_count: usize) -> Result<Vec<Range<usize>>> {
    if bin_count < 1 {
        return Err(Error::config("bin count must be at least 1"));
    }
    let width = n.div_ceil(bin_count).max(1);
    Ok((0..bin_count)
        .map(|b| (b * width).min(n)..((b + 1) * width).min(n))
        .filter(|r| !r.is_empty())
        .collect())
}

/// The four quarter ranges `⌊k·n/4⌋..⌊(k+1)·n/4⌋`.
pub fn segment_ranges(n: usize) -> Result<[Range<usize>; SEGMENTS]> {
    if n < SEGMENTS {
        return Err(Error::config(format!("segment report needs axis extent >= 4, got {n}")));
    }
    Ok(std::array::from_fn(|k| k * n / SEGMENTS..(k + 1) * n / SEGMENTS))
}

fn slab(dims: [usize; 3], axis: Axis, r: Range<usize>) -> [Range<usize>; 3] {
    let mut region = [0..dims[0], 0..dims[1], 0..dims[2]];
    region[axis.index()] = r;
    region
}

fn rows(
    pred: &LabeledGrid,
    gt: &LabeledGrid,
    axis: Axis,
    ranges: Vec<Range<usize>>,
    num_classes: usize,
    ignore_label: u16,
) -> Result<Vec<BinRow>> {
    let dims = gt.dims();
    ranges
        .into_par_iter()
        .map(|r| {
            let counts = confusion_counts(pred, gt, &slab(dims, axis, r.clone()), num_classes, ignore_label)?;
            Ok(BinRow {
                start: r.start,
                end: r.end,
                metrics: metrics_from_counts(&counts),
                occupied_gt_count: counts.occupied_gt,
                counts,
            })
        })
        .collect()
}

pub fn axis_bin_report(
    pred: &LabeledGrid,
    gt: &LabeledGrid,
    axis: Axis,
    bin_count: usize,
    num_classes: usize,
    ignore_label: u16,
) -> Result<AxisBinReport> {
    let ranges = bin_ranges(gt.dims()[axis.index()], bin_count)?;
    Ok(AxisBinReport {
        axis,
        bin_count,
        bins: rows(pred, gt, axis, ranges, num_classes, ignore_label)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub axis: Axis,
    pub rows: Vec<BinRow>,
}

pub fn segment_report(
    pred: &LabeledGrid,
    gt: &LabeledGrid,
    axis: Axis,
    num_classes: usize,
    ignore_label: u16,
) -> Result<SegmentReport> {
    let ranges = segment_ranges(gt.dims()[axis.index()])?.to_vec();
    Ok(SegmentReport {
        axis,
        rows: rows(pred, gt, axis, ranges, num_classes, ignore_label)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(seed: u64) -> LabeledGrid {
        LabeledGrid::from_fn([4, 4, 2], |x, y, z| ((x * 5 + y * 3 + z * 7 + seed as usize) % 4) as u16)
    }

    #[test]
    fn perfect_prediction() {
        let g = grid(1);
        let c = confusion_counts(&g, &g, &[0..4, 0..4, 0..2], 4, 255).unwrap();
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
        let m = metrics_from_counts(&c);
        assert_eq!((m.recall, m.iou, m.miou), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn all_empty_prediction() {
        let g = grid(2);
        let pred = LabeledGrid::filled([4, 4, 2], 0);
        let c = confusion_counts(&pred, &g, &[0..4, 0..4, 0..2], 4, 255).unwrap();
        let n = g.labels().iter().filter(|&&l| l != 0).count() as u64;
        assert_eq!((c.occ_fn, c.occ_tp), (n, 0));
    }

    #[test]
    fn empty_slab_is_null() {
        let g = LabeledGrid::filled([1, 1, 4], 0);
        let m = metrics_from_counts(&confusion_counts(&g, &g, &[0..1, 0..1, 0..4], 3, 255).unwrap());
        assert_eq!(m, Metrics::default());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"recall":null,"iou":null,"miou":null}"#);
    }

    #[test]
    fn ignored_gt_skipped() {
        let gt = LabeledGrid::new([2, 1, 1], vec![255, 1]).unwrap();
        let pred = LabeledGrid::new([2, 1, 1], vec![2, 1]).unwrap();
        let c = confusion_counts(&pred, &gt, &[0..2, 0..1, 0..1], 3, 255).unwrap();
        assert_eq!((c.occ_tp, c.occ_fp, c.fp[2]), (1, 0, 0));
    }

    #[test]
    fn segments_of_eight() {
        assert_eq!(segment_ranges(8).unwrap(), [0..2, 2..4, 4..6, 6..8]);
        assert_eq!(segment_ranges(5).unwrap(), [0..1, 1..2, 2..3, 3..5]);
        assert!(segment_ranges(3).is_err());
    }

    #[test]
    fn bins_tile_axis() {
        assert_eq!(bin_ranges(10, 4).unwrap(), vec![0..3, 3..6, 6..9, 9..10]);
        assert_eq!(bin_ranges(4, 1).unwrap(), vec![0..4]);
        assert_eq!(bin_ranges(2, 5).unwrap(), vec![0..1, 1..2]);
        assert!(bin_ranges(4, 0).is_err());
    }

    #[test]
    fn bins_conserve_counts() {
        let (p, g) = (grid(3), grid(5));
        for axis in Axis::ALL {
            let r = axis_bin_report(&p, &g, axis, 3, 4, 255).unwrap();
            let mut sum = ConfusionCounts::zeros(4);
            for b in &r.bins {
                sum.merge(&b.counts);
            }
            assert_eq!(sum, confusion_counts(&p, &g, &[0..4, 0..4, 0..2], 4, 255).unwrap());
        }
    }
}
