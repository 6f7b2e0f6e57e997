//! Axis-specific cascade attention masks.
//!
//! A mask is an `L×L` boolean matrix where `blocked(i, j)` forbids query `i`
//! from attending key `j`. Indices are 0-based and follow the grid layout:
//! front to back, left to right, bottom to top.
//!
//! * depth: a query sees itself and every voxel in front of it
//!   (`blocked ⇔ j > i`, a strict upper triangle).
//! * width: the axis is split at `c = ⌊L/2⌋`; a query sees keys on its own
//!   side that lie between itself and the centre. The allowed region is two
//!   triangles meeting at the centre (the hourglass).
//! * height: a query sees itself and every voxel above it
//!   (`blocked ⇔ j < i`, a strict lower triangle).
//!
//! The margin region is the first `⌊ratio·L⌋` indices in near-to-far order
//! (front for depth, `⌊ratio·L⌋` on each side of the centre for width, top
//! for height). Blocks are cleared for pairs where both query and key lie in
//! the margin.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::voxel::Axis;

pub const DEFAULT_DEPTH_MARGIN: f64 = 0.5;
pub const DEFAULT_WIDTH_MARGIN: f64 = 0.25;
pub const DEFAULT_HEIGHT_MARGIN: f64 = 0.0;

pub fn default_margin(axis: Axis) -> f64 {
    match axis {
        Axis::Depth => DEFAULT_DEPTH_MARGIN,
        Axis::Width => DEFAULT_WIDTH_MARGIN,
        Axis::Height => DEFAULT_HEIGHT_MARGIN,
    }
}

/// Shape of the width mask outside the margin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum WidthGeometry {
    /// Same-side cascade: keys between the query and the centre, own side only.
    #[default]
    Hourglass,
    /// Any key at most as far from the centre line as the query, either side.
    DistanceRank,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    length: usize,
    blocked: Vec<bool>,
    axis: Axis,
    margin_ratio: f64,
    flipped: bool,
}

fn validate(length: usize, margin_ratio: f64) -> Result<()> {
    if length == 0 {
        return Err(Error::config("mask length must be at least 1"));
    }
    if !(0.0..=1.0).contains(&margin_ratio) {
        return Err(Error::config(format!("margin ratio {margin_ratio} outside [0, 1]")));
    }
    Ok(())
}

fn margin_count(length: usize, ratio: f64) -> usize {
    // Small epsilon keeps e.g. 0.3·10 from flooring to 2.
    ((ratio * length as f64) + 1e-9).floor() as usize
}

impl AttentionMask {
    fn from_fn(
        length: usize,
        axis: Axis,
        margin_ratio: f64,
        blocked: impl Fn(usize, usize) -> bool,
        in_margin: impl Fn(usize) -> bool,
    ) -> Self {
        let mut b = vec![false; length * length];
        for i in 0..length {
            for j in 0..length {
                b[i * length + j] = blocked(i, j) && !(in_margin(i) && in_margin(j));
            }
        }
        AttentionMask {
            length,
            blocked: b,
            axis,
            margin_ratio,
            flipped: false,
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn margin_ratio(&self) -> f64 {
        self.margin_ratio
    }

    pub fn is_flipped(&self) -> bool {
        self.flipped
    }

    pub fn blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.length + j]
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        !self.blocked(i, j)
    }

    /// Allowed keys of query `i`, ascending.
    pub fn allowed_keys(&self, i: usize) -> Vec<usize> {
        (0..self.length).filter(|&j| self.allowed(i, j)).collect()
    }

    pub fn allowed_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    /// Reflection `blocked'(i, j) = blocked(L-1-i, L-1-j)`; an involution.
    pub fn flip(&self) -> Self {
        let l = self.length;
        let mut b = vec![false; l * l];
        for i in 0..l {
            for j in 0..l {
                b[i * l + j] = self.blocked(l - 1 - i, l - 1 - j);
            }
        }
        AttentionMask {
            length: l,
            blocked: b,
            axis: self.axis,
            margin_ratio: self.margin_ratio,
            flipped: !self.flipped,
        }
    }

    /// Additive attention bias `[L, L]`: 0 where allowed, `-inf` where blocked.
    pub fn bias(&self) -> Tensor {
        Tensor::from_fn(&[self.length, self.length], |k| {
            if self.blocked[k] {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        })
    }

    /// One line per query row: `#` blocked, `.` allowed.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.length * (self.length + 1));
        for i in 0..self.length {
            for j in 0..self.length {
                s.push(if self.blocked(i, j) { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Binary PGM (P5); blocked cells black, allowed cells white, each cell
    /// drawn as a `cell × cell` square.
    pub fn write_pgm<W: Write>(&self, mut w: W, cell: usize) -> io::Result<()> {
        let cell = cell.max(1);
        let side = self.length * cell;
        let mut header = String::new();
        let _ = write!(header, "P5\n{side} {side}\n255\n");
        w.write_all(header.as_bytes())?;
        let mut row = Vec::with_capacity(side);
        for i in 0..self.length {
            row.clear();
            for j in 0..self.length {
                let v = if self.blocked(i, j) { 0u8 } else { 255u8 };
                row.extend(std::iter::repeat_n(v, cell));
            }
            for _ in 0..cell {
                w.write_all(&row)?;
            }
        }
        Ok(())
    }
}

/// `blocked(i, j) ⇔ j > i`, with the front `⌊ratio·L⌋` indices as margin.
pub fn build_depth_mask(length: usize, margin_ratio: f64) -> Result<AttentionMask> {
    validate(length, margin_ratio)?;
    let m = margin_count(length, margin_ratio);
    Ok(AttentionMask::from_fn(
        length,
        Axis::Depth,
        margin_ratio,
        |i, j| j > i,
        |i| i < m,
    ))
}

/// Hourglass width mask with `⌊ratio·L⌋` margin indices on each side of the centre.
pub fn build_width_mask(length: usize, margin_ratio: f64) -> Result<AttentionMask> {
    build_width_mask_with(length, margin_ratio, WidthGeometry::Hourglass)
}

pub fn build_width_mask_with(
    length: usize,
    margin_ratio: f64,
    geometry: WidthGeometry,
) -> Result<AttentionMask> {
    validate(length, margin_ratio)?;
    let c = length / 2;
    let m = margin_count(length, margin_ratio);
    let lo = c.saturating_sub(m);
    let hi = (c + m).min(length);
    let blocked = move |i: usize, j: usize| match geometry {
        WidthGeometry::Hourglass => {
            let allowed = if i < c { i <= j && j < c } else { c <= j && j <= i };
            !allowed
        }
        WidthGeometry::DistanceRank => {
            // Twice the distance to the centre line at c - 1/2.
            let d = |k: usize| (2 * k as isize - 2 * c as isize + 1).unsigned_abs();
            d(j) > d(i)
        }
    };
    Ok(AttentionMask::from_fn(
        length,
        Axis::Width,
        margin_ratio,
        blocked,
        |i| (lo..hi).contains(&i),
    ))
}

/// `blocked(i, j) ⇔ j < i`, with the top `⌊ratio·L⌋` indices as margin.
pub fn build_height_mask(length: usize, margin_ratio: f64) -> Result<AttentionMask> {
    validate(length, margin_ratio)?;
    let m = margin_count(length, margin_ratio);
    Ok(AttentionMask::from_fn(
        length,
        Axis::Height,
        margin_ratio,
        |i, j| j < i,
        move |i| i >= length - m,
    ))
}

/// Full mask specification for one axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub axis: Axis,
    pub margin_ratio: f64,
    pub flipped: bool,
    pub width_geometry: WidthGeometry,
}

impl MaskSpec {
    pub fn canonical(axis: Axis) -> Self {
        MaskSpec {
            axis,
            margin_ratio: default_margin(axis),
            flipped: false,
            width_geometry: WidthGeometry::Hourglass,
        }
    }

    pub fn build(&self, length: usize) -> Result<AttentionMask> {
        let m = match self.axis {
            Axis::Depth => build_depth_mask(length, self.margin_ratio)?,
            Axis::Width => build_width_mask_with(length, self.margin_ratio, self.width_geometry)?,
            Axis::Height => build_height_mask(length, self.margin_ratio)?,
        };
        Ok(if self.flipped { m.flip() } else { m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(m: &AttentionMask) -> Vec<Vec<usize>> {
        (0..m.length()).map(|i| m.allowed_keys(i)).collect()
    }

    #[test]
    fn depth_l4_strict_upper_triangle() {
        let m = build_depth_mask(4, 0.0).unwrap();
        assert_eq!(m.to_ascii(), ".###\n..##\n...#\n....\n");
    }

    #[test]
    fn depth_l4_half_margin() {
        let m = build_depth_mask(4, 0.5).unwrap();
        assert_eq!(m.to_ascii(), "..##\n..##\n...#\n....\n");
    }

    #[test]
    fn length_one_has_no_blocks() {
        for axis in Axis::ALL {
            let m = MaskSpec::canonical(axis).build(1).unwrap();
            assert_eq!(m.allowed_count(), 1);
        }
    }

    #[test]
    fn width_l4_hourglass() {
        let m = build_width_mask(4, 0.0).unwrap();
        assert_eq!(rows(&m), vec![vec![0, 1], vec![1], vec![2], vec![2, 3]]);
        let m2 = build_width_mask(2, 0.0).unwrap();
        assert_eq!(rows(&m2), vec![vec![0], vec![1]]);
    }

    #[test]
    fn width_l4_quarter_margin() {
        let m = build_width_mask(4, 0.25).unwrap();
        assert_eq!(rows(&m), vec![vec![0, 1], vec![1, 2], vec![1, 2], vec![2, 3]]);
    }

    #[test]
    fn width_odd_puts_middle_right() {
        let m = build_width_mask(3, 0.0).unwrap();
        assert_eq!(rows(&m), vec![vec![0], vec![1], vec![1, 2]]);
    }

    #[test]
    fn height_l3_lower_triangle() {
        let m = build_height_mask(3, 0.0).unwrap();
        assert_eq!(m.to_ascii(), "...\n#..\n##.\n");
    }

    #[test]
    fn height_half_margin_is_top() {
        let m = build_height_mask(4, 0.5).unwrap();
        assert_eq!(rows(&m), vec![vec![0, 1, 2, 3], vec![1, 2, 3], vec![2, 3], vec![2, 3]]);
    }

    #[test]
    fn flip_depth_is_lower_triangle() {
        let f = build_depth_mask(3, 0.0).unwrap().flip();
        assert_eq!(f.blocked, build_height_mask(3, 0.0).unwrap().blocked);
        assert!(f.is_flipped());
        assert_eq!(f.flip(), build_depth_mask(3, 0.0).unwrap());
    }

    #[test]
    fn distance_rank_allows_cross_side() {
        let m = build_width_mask_with(4, 0.0, WidthGeometry::DistanceRank).unwrap();
        assert_eq!(rows(&m), vec![vec![0, 1, 2, 3], vec![1, 2], vec![1, 2], vec![0, 1, 2, 3]]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(build_depth_mask(0, 0.0).is_err());
        assert!(build_width_mask(4, 1.5).is_err());
    }

    #[test]
    fn bias_and_pgm() {
        let m = build_depth_mask(2, 0.0).unwrap();
        assert_eq!(m.bias().data(), &[0.0, f64::NEG_INFINITY, 0.0, 0.0]);
        let mut buf = Vec::new();
        m.write_pgm(&mut buf, 2).unwrap();
        assert!(buf.starts_with(b"P5\n4 4\n255\n"));
        assert_eq!(buf.len(), 11 + 16);
    }
}
