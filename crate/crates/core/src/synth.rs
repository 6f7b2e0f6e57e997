//! Deterministic synthetic scenes.
//!
//! `corridor` is a street seen from `x = 0`: road and sidewalks at `z = 0`,
//! building walls along both width edges, and cars on the road receding in
//! depth. Every structure stands on the ground, so the occupied fraction never
//! grows with height.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::voxel::LabeledGrid;

pub const ROAD: u16 = 1;
pub const SIDEWALK: u16 = 2;
pub const BUILDING: u16 = 5;
pub const CAR: u16 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Corridor,
    Blocks,
    Random,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corridor" => Ok(Preset::Corridor),
            "blocks" => Ok(Preset::Blocks),
            "random" => Ok(Preset::Random),
            _ => Err(Error::config(format!("unknown preset {s:?} (corridor, blocks, random)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Corridor => "corridor",
            Preset::Blocks => "blocks",
            Preset::Random => "random",
        })
    }
}

pub fn generate(preset: Preset, dims: [usize; 3], num_classes: usize, seed: u64) -> Result<LabeledGrid> {
    if dims.contains(&0) {
        return Err(Error::config(format!("dims must be positive, got {dims:?}")));
    }
    if num_classes < 2 {
        return Err(Error::config("need at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match preset {
        Preset::Corridor => corridor(dims, num_classes, &mut rng),
        Preset::Blocks => Ok(blocks(dims, num_classes, &mut rng)),
        Preset::Random => Ok(LabeledGrid::from_fn(dims, |_, _, _| rng.gen_range(0..num_classes) as u16)),
    }
}

fn fill_box(g: &mut LabeledGrid, lo: [usize; 3], hi: [usize; 3], label: u16) {
    for x in lo[0]..hi[0] {
        for y in lo[1]..hi[1] {
            for z in lo[2]..hi[2] {
                g.set(x, y, z, label);
            }
        }
    }
}

fn corridor(dims: [usize; 3], num_classes: usize, rng: &mut ChaCha8Rng) -> Result<LabeledGrid> {
    if num_classes <= CAR as usize {
        return Err(Error::config(format!(
            "corridor uses labels up to {CAR}; need at least {} classes",
            CAR + 1
        )));
    }
    let [dx, dy, dz] = dims;
    let mut g = LabeledGrid::filled(dims, 0);
    let road = dy / 4..dy - dy / 4;
    for x in 0..dx {
        for y in 0..dy {
            g.set(x, y, 0, if road.contains(&y) { ROAD } else { SIDEWALK });
        }
    }
    if dz == 1 {
        return Ok(g);
    }
    // Walls: one building per 4-slice stretch of depth with its own height.
    let wall = (dy / 8).max(1).min(road.start);
    let mut x = 0;
    while x < dx {
        let len = 4.min(dx - x);
        let h = rng.gen_range(dz.div_ceil(2)..=dz);
        fill_box(&mut g, [x, 0, 1], [x + len, wall, h], BUILDING);
        let h = rng.gen_range(dz.div_ceil(2)..=dz);
        fill_box(&mut g, [x, dy - wall, 1], [x + len, dy, h], BUILDING);
        x += len;
    }
    // Cars: roughly one per 5 slices of depth, alternating lanes.
    let car_len = (dx / 8).clamp(1, 3);
    let car_w = (road.len() / 4).max(1);
    let car_h = 2.min(dz);
    let mut x = rng.gen_range(0..3.min(dx));
    while x + car_len <= dx {
        let y0 = rng.gen_range(road.start..=road.end - car_w);
        fill_box(&mut g, [x, y0, 1], [x + car_len, y0 + car_w, car_h], CAR);
        x += car_len + rng.gen_range(2..5);
    }
    Ok(g)
}

fn blocks(dims: [usize; 3], num_classes: usize, rng: &mut ChaCha8Rng) -> LabeledGrid {
    let mut g = LabeledGrid::filled(dims, 0);
    let volume: usize = dims.iter().product();
    let count = (volume / 64).clamp(1, 32);
    for _ in 0..count {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            let size = rng.gen_range(1..=dims[a].div_ceil(2));
            lo[a] = rng.gen_range(0..=dims[a] - size);
            hi[a] = lo[a] + size;
        }
        let label = rng.gen_range(1..num_classes) as u16;
        fill_box(&mut g, lo, hi, label);
    }
    g
}

/// Fraction of occupied voxels in each height slice.
pub fn occupancy_by_height(g: &LabeledGrid) -> Vec<f64> {
    let [dx, dy, dz] = g.dims();
    (0..dz)
        .map(|z| {
            let mut occ = 0usize;
            for x in 0..dx {
                for y in 0..dy {
                    occ += (g.get(x, y, z) != 0) as usize;
                }
            }
            occ as f64 / (dx * dy) as f64
        })
        .collect()
}
