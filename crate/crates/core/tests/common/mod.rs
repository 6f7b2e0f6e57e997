//! Brute-force references shared by the integration tests. Everything here is
//! written from the definitions with plain loops and does not call into the
//! crate's own reference code.

#![allow(dead_code)]

use rand::Rng;
use scanssc::voxel::{Axis, LabeledGrid};
use scanssc::Tensor;

pub const IGNORE: u16 = 255;

/// Whether slice `k` is averaged into position `pos` along an axis of `n`
/// slices, canonical direction.
pub fn in_window(axis: Axis, n: usize, pos: usize, k: usize) -> bool {
    match axis {
        Axis::Depth => k >= pos,
        Axis::Height => k <= pos,
        Axis::Width => {
            if 2 * pos < n - n % 2 {
                k <= pos
            } else {
                k >= pos
            }
        }
    }
}

/// Same window with the axis direction reversed.
pub fn in_window_dir(axis: Axis, n: usize, pos: usize, k: usize, flipped: bool) -> bool {
    if flipped {
        in_window(axis, n, n - 1 - pos, n - 1 - k)
    } else {
        in_window(axis, n, pos, k)
    }
}

pub fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3]]
}

/// Double-loop cumulative average of a `[X, Y, Z, P]` tensor.
pub fn brute_cumavg(g: &Tensor, axis: Axis, flipped: bool) -> Tensor {
    let d = dims4(g);
    let a = axis.index();
    let n = d[a];
    let mut out = Tensor::zeros(&d);
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                let idx = [x, y, z];
                for c in 0..d[3] {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for k in 0..n {
                        if in_window_dir(axis, n, idx[a], k, flipped) {
                            let mut j = idx;
                            j[a] = k;
                            sum += g.get(&[j[0], j[1], j[2], c]);
                            count += 1;
                        }
                    }
                    out.set(&[x, y, z, c], sum / count as f64);
                }
            }
        }
    }
    out
}

/// Accumulated target distribution and labelled-voxel count at every voxel.
pub fn brute_targets(y: &LabeledGrid, p: usize, axis: Axis, flipped: bool) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = y.dims();
    let a = axis.index();
    let n = d[a];
    let mut dist = Vec::new();
    let mut mass = Vec::new();
    for x in 0..d[0] {
        for yy in 0..d[1] {
            for z in 0..d[2] {
                let idx = [x, yy, z];
                let mut counts = vec![0usize; p];
                for k in 0..n {
                    if in_window_dir(axis, n, idx[a], k, flipped) {
                        let mut j = idx;
                        j[a] = k;
                        let l = y.get(j[0], j[1], j[2]);
                        if l != IGNORE {
                            counts[l as usize] += 1;
                        }
                    }
                }
                let total: usize = counts.iter().sum();
                dist.push(
                    counts
                        .iter()
                        .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
                        .collect(),
                );
                mass.push(total);
            }
        }
    }
    (dist, mass)
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn row(t: &Tensor, x: usize, y: usize, z: usize) -> Vec<f64> {
    let p = t.shape()[3];
    (0..p).map(|c| t.get(&[x, y, z, c])).collect()
}

/// Soft cross-entropy of the cumulative logits against the cumulative
/// targets, averaged over positions whose window holds a labelled voxel.
pub fn brute_scan_term(g: &Tensor, y: &LabeledGrid, axis: Axis, flipped: bool) -> f64 {
    let d = dims4(g);
    let avg = brute_cumavg(g, axis, flipped);
    let (dist, mass) = brute_targets(y, d[3], axis, flipped);
    let mut sum = 0.0;
    let mut valid = 0usize;
    let mut v = 0;
    for x in 0..d[0] {
        for yy in 0..d[1] {
            for z in 0..d[2] {
                if mass[v] > 0 {
                    let ls = log_softmax(&row(&avg, x, yy, z));
                    sum -= dist[v].iter().zip(&ls).map(|(t, l)| t * l).sum::<f64>();
                    valid += 1;
                }
                v += 1;
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        sum / valid as f64
    }
}

/// Random labels in `0..p`, each voxel replaced by the ignore label with
/// probability `ignore_rate`.
pub fn random_labels(rng: &mut impl Rng, dims: [usize; 3], p: usize, ignore_rate: f64) -> LabeledGrid {
    LabeledGrid::from_fn(dims, |_, _, _| {
        if rng.gen_bool(ignore_rate) {
            IGNORE
        } else {
            rng.gen_range(0..p as u16)
        }
    })
}

pub fn random_dims(rng: &mut impl Rng, max: [usize; 3]) -> [usize; 3] {
    [rng.gen_range(1..=max[0]), rng.gen_range(1..=max[1]), rng.gen_range(1..=max[2])]
}
