//! Voxel grids, class tables and axis conventions.
//!
//! Grids are indexed `[x, y, z]` = (depth, width, height) with indices running
//! front to back, left to right and bottom to top. Feature and logit volumes
//! are channel-last (`[X, Y, Z, C]`), stored row-major.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matrix, Tensor};

pub const DEFAULT_IGNORE_LABEL: u16 = 255;

/// The 19 benchmark classes in the order they are tabulated, preceded by `empty`.
pub const SEMANTIC_KITTI_CLASSES: [&str; 20] = [
    "empty",
    "road",
    "sidewalk",
    "parking",
    "other-ground",
    "building",
    "car",
    "truck",
    "bicycle",
    "motorcycle",
    "other-vehicle",
    "vegetation",
    "trunk",
    "terrain",
    "person",
    "bicyclist",
    "motorcyclist",
    "fence",
    "pole",
    "traffic-sign",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Depth,
    Width,
    Height,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Depth, Axis::Width, Axis::Height];

    /// Position of this axis in `[x, y, z]`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Axis::Depth => "dep",
            Axis::Width => "wid",
            Axis::Height => "hgt",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Depth => "depth",
            Axis::Width => "width",
            Axis::Height => "height",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dep" | "depth" | "x" => Ok(Axis::Depth),
            "wid" | "width" | "y" => Ok(Axis::Width),
            "hgt" | "height" | "z" => Ok(Axis::Height),
            other => Err(Error::config(format!("unknown axis '{other}'"))),
        }
    }
}

/// One axis together with its orientation switch.
///
/// Canonical near-to-far orientation: depth front to back (ascending index),
/// width centre to sides, height top to bottom in scene terms. The attention
/// cascade on the height axis lets a query see itself and higher indices.
/// `flipped` mirrors the axis (index `i -> L-1-i`) for direction ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisDirection {
    pub axis: Axis,
    pub flipped: bool,
}

impl AxisDirection {
    pub fn canonical(axis: Axis) -> Self {
        AxisDirection {
            axis,
            flipped: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassTable {
    names: Vec<String>,
    ignore_label: u16,
    frequency_weights: Option<Vec<f64>>,
}

impl ClassTable {
    pub fn new(names: Vec<String>, ignore_label: u16) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::config("a class table needs at least 2 classes"));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::config(format!("duplicate class name '{n}'")));
            }
        }
        if (ignore_label as usize) < names.len() {
            return Err(Error::config(format!(
                "ignore label {ignore_label} collides with a class index"
            )));
        }
        Ok(ClassTable {
            names,
            ignore_label,
            frequency_weights: None,
        })
    }

    pub fn semantic_kitti() -> Self {
        Self::new(
            SEMANTIC_KITTI_CLASSES.iter().map(|s| s.to_string()).collect(),
            DEFAULT_IGNORE_LABEL,
        )
        .expect("valid default table")
    }

    /// `P` generic classes named `class{i}` (index 0 = `empty`).
    pub fn generic(p: usize) -> Result<Self> {
        let names = (0..p)
            .map(|i| if i == 0 { "empty".to_string() } else { format!("class{i}") })
            .collect();
        Self::new(names, DEFAULT_IGNORE_LABEL)
    }

    pub fn with_frequency_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.names.len() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("frequency weights must be one positive value per class"));
        }
        self.frequency_weights = Some(weights);
        Ok(self)
    }

    /// Inverse-log-frequency weights `1 / ln(1.02 + f_c)` from per-class voxel
    /// counts (classes with zero count receive the weight of `f = 0`).
    pub fn with_weights_from_counts(self, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.len() != self.names.len() || total == 0 {
            return Err(Error::config("class counts must cover every class and be non-empty"));
        }
        let w = counts
            .iter()
            .map(|&c| 1.0 / (1.02 + c as f64 / total as f64).ln())
            .collect();
        self.with_frequency_weights(w)
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ignore_label(&self) -> u16 {
        self.ignore_label
    }

    pub fn frequency_weights(&self) -> Option<&[f64]> {
        self.frequency_weights.as_deref()
    }

    pub fn is_valid_label(&self, l: u16) -> bool {
        (l as usize) < self.names.len() || l == self.ignore_label
    }
}

/// Target and proposal grid extents plus the feature channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub target: [usize; 3],
    pub proposal: [usize; 3],
    pub channels: usize,
}

impl Default for GridDims {
    fn default() -> Self {
        GridDims {
            target: [256, 256, 32],
            proposal: [128, 128, 16],
            channels: 128,
        }
    }
}

impl GridDims {
    pub fn new(target: [usize; 3], proposal: [usize; 3], channels: usize) -> Result<Self> {
        let d = GridDims {
            target,
            proposal,
            channels,
        };
        d.upsample_factors()?;
        if channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        Ok(d)
    }

    /// Integer target/proposal ratio per axis.
    pub fn upsample_factors(&self) -> Result<[usize; 3]> {
        let mut f = [0; 3];
        for a in 0..3 {
            let (t, p) = (self.target[a], self.proposal[a]);
            if t == 0 || p == 0 || t % p != 0 {
                return Err(Error::config(format!(
                    "target extent {t} is not a positive integer multiple of proposal extent {p} on axis {a}"
                )));
            }
            f[a] = t / p;
        }
        Ok(f)
    }
}

/// Dense grid of class labels (or the ignore label), `x`-major then `y` then `z`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledGrid {
    dims: [usize; 3],
    labels: Vec<u16>,
}

impl LabeledGrid {
    pub fn new(dims: [usize; 3], labels: Vec<u16>) -> Result<Self> {
        if dims.contains(&0) || dims.iter().product::<usize>() != labels.len() {
            return Err(Error::config(format!(
                "grid {dims:?} needs {} labels, got {}",
                dims.iter().product::<usize>(),
                labels.len()
            )));
        }
        Ok(LabeledGrid { dims, labels })
    }

    pub fn filled(dims: [usize; 3], label: u16) -> Self {
        Self::new(dims, vec![label; dims.iter().product()]).expect("positive dims")
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> u16) -> Self {
        let mut labels = Vec::with_capacity(dims.iter().product());
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    labels.push(f(x, y, z));
                }
            }
        }
        LabeledGrid { dims, labels }
    }

    /// Checks every label against `table`.
    pub fn validate(&self, table: &ClassTable) -> Result<()> {
        match self.labels.iter().position(|&l| !table.is_valid_label(l)) {
            Some(i) => Err(Error::config(format!(
                "label {} at voxel {i} is neither a class nor the ignore label",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u16) {
        let i = self.index(x, y, z);
        self.labels[i] = label;
    }

    pub fn reverse_axis(&self, axis: Axis) -> Self {
        let d = self.dims;
        Self::from_fn(d, |x, y, z| {
            let mut p = [x, y, z];
            p[axis.index()] = d[axis.index()] - 1 - p[axis.index()];
            self.get(p[0], p[1], p[2])
        })
    }
}

/// Per-voxel class logits, `[X, Y, Z, P]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitGrid {
    tensor: Tensor,
}

impl LogitGrid {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::config(format!("logit grid must be rank 4, got {:?}", tensor.shape())));
        }
        if let Some(i) = tensor.first_non_finite() {
            return Err(Error::NonFinite {
                context: "logit grid".into(),
                index: i,
            });
        }
        Ok(LogitGrid { tensor })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2]]
    }

    pub fn num_classes(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    /// Per-voxel argmax (lowest index wins ties).
    pub fn argmax(&self) -> LabeledGrid {
        let p = self.num_classes();
        let labels = self
            .tensor
            .data()
            .chunks(p)
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best as u16
            })
            .collect();
        LabeledGrid::new(self.dims(), labels).expect("dims match")
    }
}

/// Per-voxel features over the proposal grid, `[X̂, Ŷ, Ẑ, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    tensor: Tensor,
}

impl FeatureVolume {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::config(format!(
                "feature volume must be rank 4, got {:?}",
                tensor.shape()
            )));
        }
        if let Some(i) = tensor.first_non_finite() {
            return Err(Error::NonFinite {
                context: "feature volume".into(),
                index: i,
            });
        }
        Ok(FeatureVolume { tensor })
    }

    pub fn dims(&self) -> [usize; 3] {
        let s = self.tensor.shape();
        [s[0], s[1], s[2]]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }
}

/// How a `[X, Y, Z, C]` volume is laid out as `[batch, sequence, C]` for
/// attention along one axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AxisLayout {
    pub axis: Axis,
    /// Permutation taking `[X, Y, Z, C]` to `[other, other, scanned, C]`.
    pub forward_perm: [usize; 4],
    pub inverse_perm: [usize; 4],
    pub permuted_shape: [usize; 4],
    pub seq_shape: [usize; 3],
}

impl AxisLayout {
    pub fn new(axis: Axis, dims: [usize; 3], channels: usize) -> Self {
        let [x, y, z] = dims;
        let (fwd, inv, permuted) = match axis {
            Axis::Depth => ([1, 2, 0, 3], [2, 0, 1, 3], [y, z, x, channels]),
            Axis::Width => ([0, 2, 1, 3], [0, 2, 1, 3], [x, z, y, channels]),
            Axis::Height => ([0, 1, 2, 3], [0, 1, 2, 3], [x, y, z, channels]),
        };
        AxisLayout {
            axis,
            forward_perm: fwd,
            inverse_perm: inv,
            permuted_shape: permuted,
            seq_shape: [permuted[0] * permuted[1], permuted[2], channels],
        }
    }

    pub fn batch(&self) -> usize {
        self.seq_shape[0]
    }

    pub fn sequence_len(&self) -> usize {
        self.seq_shape[1]
    }
}

/// `[X, Y, Z, C] -> [batch, L, C]` for attention along `axis`.
///
/// For depth, voxel `(x, y, z)` lands at batch `y·Ẑ + z`, sequence `x`.
pub fn flatten_for_axis(volume: &Tensor, axis: Axis) -> Result<Tensor> {
    let s = volume.shape();
    if s.len() != 4 {
        return Err(Error::config("flatten_for_axis expects a [X, Y, Z, C] volume"));
    }
    let layout = AxisLayout::new(axis, [s[0], s[1], s[2]], s[3]);
    volume.permute(&layout.forward_perm)?.reshape(&layout.seq_shape)
}

/// Inverse of [`flatten_for_axis`].
pub fn unflatten_for_axis(seq: &Tensor, axis: Axis, dims: [usize; 3]) -> Result<Tensor> {
    let c = *seq.shape().last().unwrap_or(&0);
    let layout = AxisLayout::new(axis, dims, c);
    if seq.shape() != layout.seq_shape {
        return Err(Error::shape("unflatten_for_axis", seq.shape(), &layout.seq_shape));
    }
    seq.reshape(&layout.permuted_shape)?.permute(&layout.inverse_perm)
}

/// Linear-interpolation resampling matrix `[n_in·factor, n_in]` with
/// half-pixel (align-corners = false) sample positions, clamped at the edges.
pub fn upsample_matrix(n_in: usize, factor: usize) -> Tensor {
    let n_out = n_in * factor;
    let mut m = Tensor::zeros(&[n_out, n_in]);
    for o in 0..n_out {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        let w = s - i0 as f64;
        let row = &mut m.data_mut()[o * n_in..(o + 1) * n_in];
        row[i0] += 1.0 - w;
        row[i1] += w;
    }
    m
}

/// Per-axis resampling matrices for a trilinear upsample by `factors`.
pub fn trilinear_matrices(dims: [usize; 3], factors: [usize; 3]) -> [Arc<Tensor>; 3] {
    [0, 1, 2].map(|a| Arc::new(upsample_matrix(dims[a], factors[a])))
}

/// Trilinear upsampling of a channel-last volume `[X, Y, Z, C]` by integer
/// per-axis factors.
pub fn upsample_trilinear(volume: &Tensor, factors: [usize; 3]) -> Result<Tensor> {
    let s = volume.shape();
    if s.len() != 4 {
        return Err(Error::config("upsample_trilinear expects a [X, Y, Z, C] volume"));
    }
    if factors.contains(&0) {
        return Err(Error::config("upsample factors must be positive integers"));
    }
    let mats = trilinear_matrices([s[0], s[1], s[2]], factors);
    let mut out = volume.clone();
    for (a, m) in mats.iter().enumerate() {
        if factors[a] != 1 {
            out = out.apply_along(a, m)?;
        }
    }
    Ok(out)
}

/// Trilinear upsampling from proposal to target resolution.
pub fn upsample_to_target(volume: &Tensor, dims: &GridDims) -> Result<Tensor> {
    upsample_trilinear(volume, dims.upsample_factors()?)
}

/// Dense averaging matrix `[ceil(n/2), n]` for 2× pooling (a trailing odd
/// cell averages alone).
pub fn pool2_matrix(n: usize) -> Tensor {
    let out = n.div_ceil(2);
    matrix(out, n, |i, j| {
        let count = if 2 * i + 1 < n { 2.0 } else { 1.0 };
        if j / 2 == i {
            1.0 / count
        } else {
            0.0
        }
    })
}

/// Nearest-neighbour 2× upsampling matrix `[n, ceil(n/2)]`.
pub fn nearest2_matrix(n: usize) -> Tensor {
    matrix(n, n.div_ceil(2), |i, j| if i / 2 == j { 1.0 } else { 0.0 })
}
