//! Brute-force reference implementations and randomized comparison suites.
//!
//! Each trial draws its inputs from a seed derived from the suite seed and
//! the trial index, so the worst trial can be written to a repro file and
//! replayed exactly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{ParamSet, Tape};
use crate::error::{Error, Result};
use crate::masks::{MaskSpec, WidthGeometry};
use crate::scan::{fuse_tri_features, FusionParams};
use crate::scan_loss::{cumulative_average, scan_loss_value, ScanLossConfig};
use crate::tensor::Tensor;
use crate::voxel::{Axis, ClassTable, LabeledGrid, LogitGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Masks,
    Scanloss,
    Cumavg,
    Fusion,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Masks, Suite::Scanloss, Suite::Cumavg, Suite::Fusion];

    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Masks | Suite::Cumavg | Suite::Fusion => 1e-12,
            Suite::Scanloss => 1e-10,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Suite::Masks => "masks",
            Suite::Scanloss => "scanloss",
            Suite::Cumavg => "cumavg",
            Suite::Fusion => "fusion",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::config(format!("unknown suite {s:?}; expected masks, scanloss, cumavg or fusion")))
    }
}

/// Seed of trial `trial` within a run seeded with `seed`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(trial.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

/// Outcome of one trial: the deviation and a JSON description of the inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trial {
    pub trial: u64,
    pub trial_seed: u64,
    pub deviation: f64,
    pub input: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub seed: u64,
    pub trials: u64,
    pub tolerance: f64,
    pub worst: Trial,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.worst.deviation <= self.tolerance
    }
}

// ---------------------------------------------------------------- masks

/// Reference mask: allowed keys are enumerated by walking from the query
/// toward the near end (or the centre, for width).
pub fn reference_blocked(spec: &MaskSpec, length: usize) -> Vec<bool> {
    let l = length;
    let m = (spec.margin_ratio * l as f64 + 1e-9).floor() as usize;
    let mut allowed = vec![false; l * l];
    let mut margin = vec![false; l];
    let c = l / 2;
    for i in 0..l {
        match spec.axis {
            Axis::Depth => {
                let mut j = i as isize;
                while j >= 0 {
                    allowed[i * l + j as usize] = true;
                    j -= 1;
                }
                margin[i] = i < m;
            }
            Axis::Height => {
                for j in i..l {
                    allowed[i * l + j] = true;
                }
                margin[i] = i + m >= l;
            }
            Axis::Width => {
                match spec.width_geometry {
                    WidthGeometry::Hourglass => {
                        let mut j = i;
                        if i < c {
                            while j < c {
                                allowed[i * l + j] = true;
                                j += 1;
                            }
                        } else {
                            loop {
                                allowed[i * l + j] = true;
                                if j == c {
                                    break;
                                }
                                j -= 1;
                            }
                        }
                    }
                    WidthGeometry::DistanceRank => {
                        let dist = |k: usize| ((k as f64 + 0.5) - c as f64).abs();
                        for j in 0..l {
                            allowed[i * l + j] = dist(j) <= dist(i);
                        }
                    }
                }
                margin[i] = i + m >= c && i < c + m;
            }
        }
    }
    let mut blocked: Vec<bool> = (0..l * l)
        .map(|k| !allowed[k] && !(margin[k / l] && margin[k % l]))
        .collect();
    if spec.flipped {
        blocked = (0..l * l)
            .map(|k| blocked[(l - 1 - k / l) * l + (l - 1 - k % l)])
            .collect();
    }
    blocked
}

fn masks_trial(rng: &mut ChaCha8Rng) -> Result<(f64, serde_json::Value)> {
    let axis = Axis::ALL[rng.gen_range(0..3)];
    let length = rng.gen_range(1..=32);
    let margin_ratio = [0.0, 0.25, 0.5][rng.gen_range(0..3)];
    let spec = MaskSpec {
        axis,
        margin_ratio,
        flipped: rng.gen_bool(0.5),
        width_geometry: if rng.gen_bool(0.8) {
            WidthGeometry::Hourglass
        } else {
            WidthGeometry::DistanceRank
        },
    };
    let mask = spec.build(length)?;
    let reference = reference_blocked(&spec, length);
    let mut mismatches = 0usize;
    for i in 0..length {
        for j in 0..length {
            mismatches += (mask.blocked(i, j) != reference[i * length + j]) as usize;
        }
    }
    let input = json!({
        "axis": axis, "length": length, "margin_ratio": margin_ratio,
        "flipped": spec.flipped, "width_geometry": spec.width_geometry,
    });
    Ok((mismatches as f64, input))
}

// ---------------------------------------------------------------- cumulative averages

/// Reference window test: whether index `k` is averaged into position `pos`.
fn in_window(axis: Axis, n: usize, pos: usize, k: usize, flipped: bool) -> bool {
    if flipped {
        return in_window(axis, n, n - 1 - pos, n - 1 - k, false);
    }
    match axis {
        Axis::Depth => k >= pos,
        Axis::Height => k <= pos,
        Axis::Width => {
            if pos + 1 <= n / 2 {
                k <= pos
            } else {
                k >= pos
            }
        }
    }
}

/// Double-loop reference cumulative average.
pub fn reference_cumavg(g: &Tensor, axis: Axis, flipped: bool) -> Tensor {
    let s = g.shape().to_vec();
    let a = axis.index();
    let n = s[a];
    let mut out = Tensor::zeros(&s);
    for x in 0..s[0] {
        for y in 0..s[1] {
            for z in 0..s[2] {
                let pos = [x, y, z][a];
                for c in 0..s[3] {
                    let mut sum = 0.0;
                    let mut cnt = 0usize;
                    for k in 0..n {
                        if in_window(axis, n, pos, k, flipped) {
                            let mut idx = [x, y, z];
                            idx[a] = k;
                            sum += g.get(&[idx[0], idx[1], idx[2], c]);
                            cnt += 1;
                        }
                    }
                    out.set(&[x, y, z, c], sum / cnt as f64);
                }
            }
        }
    }
    out
}

fn random_dims(rng: &mut ChaCha8Rng, max: [usize; 4]) -> [usize; 4] {
    [
        rng.gen_range(1..=max[0]),
        rng.gen_range(1..=max[1]),
        rng.gen_range(1..=max[2]),
        rng.gen_range(2..=max[3]),
    ]
}

fn cumavg_trial(rng: &mut ChaCha8Rng) -> Result<(f64, serde_json::Value)> {
    let d = random_dims(rng, [8, 8, 4, 6]);
    let g = LogitGrid::new(Tensor::random_uniform(&d, -3.0, 3.0, rng))?;
    let flipped = rng.gen_bool(0.3);
    let mut dev = 0.0f64;
    for axis in Axis::ALL {
        let fast = cumulative_average(&g, axis, flipped).values;
        dev = dev.max(fast.max_abs_diff(&reference_cumavg(g.tensor(), axis, flipped)));
    }
    Ok((dev, json!({ "dims": d, "flipped": flipped, "logits": g.tensor().data() })))
}

// ---------------------------------------------------------------- scan loss

/// Per-axis reference terms, written as direct window loops.
pub fn reference_scan_terms(g: &Tensor, y: &LabeledGrid, ignore: u16, flipped: [bool; 3]) -> [f64; 3] {
    let s = g.shape();
    let p = s[3];
    let mut terms = [0.0; 3];
    for axis in Axis::ALL {
        let a = axis.index();
        let n = s[a];
        let mut total = 0.0;
        let mut valid = 0usize;
        for x in 0..s[0] {
            for yy in 0..s[1] {
                for z in 0..s[2] {
                    let pos = [x, yy, z][a];
                    let mut avg = vec![0.0; p];
                    let mut cnt = 0usize;
                    let mut hist = vec![0usize; p];
                    let mut mass = 0usize;
                    for k in 0..n {
                        if !in_window(axis, n, pos, k, flipped[a]) {
                            continue;
                        }
                        let mut idx = [x, yy, z];
                        idx[a] = k;
                        for (c, v) in avg.iter_mut().enumerate() {
                            *v += g.get(&[idx[0], idx[1], idx[2], c]);
                        }
                        cnt += 1;
                        let l = y.get(idx[0], idx[1], idx[2]);
                        if l != ignore {
                            hist[l as usize] += 1;
                            mass += 1;
                        }
                    }
                    if mass == 0 {
                        continue;
                    }
                    for v in avg.iter_mut() {
                        *v /= cnt as f64;
                    }
                    let mx = avg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = mx + avg.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                    let ce: f64 = (0..p).map(|c| -(hist[c] as f64 / mass as f64) * (avg[c] - lse)).sum();
                    total += ce;
                    valid += 1;
                }
            }
        }
        terms[a] = if valid > 0 { total / valid as f64 } else { 0.0 };
    }
    terms
}

fn scanloss_trial(rng: &mut ChaCha8Rng) -> Result<(f64, serde_json::Value)> {
    let d = random_dims(rng, [6, 6, 4, 6]);
    let table = ClassTable::generic(d[3])?;
    let g = LogitGrid::new(Tensor::random_uniform(&d, -3.0, 3.0, rng))?;
    let y = LabeledGrid::from_fn([d[0], d[1], d[2]], |_, _, _| {
        if rng.gen_bool(0.2) {
            table.ignore_label()
        } else {
            rng.gen_range(0..d[3]) as u16
        }
    });
    let flipped = [rng.gen_bool(0.3), rng.gen_bool(0.3), rng.gen_bool(0.3)];
    let v = scan_loss_value(&g, &y, &table, &ScanLossConfig { enabled: [true; 3], flipped })?;
    let r = reference_scan_terms(g.tensor(), &y, table.ignore_label(), flipped);
    let dev = (v.dep - r[0]).abs().max((v.wid - r[1]).abs()).max((v.hgt - r[2]).abs());
    Ok((
        dev,
        json!({ "dims": d, "flipped": flipped, "logits": g.tensor().data(), "labels": y.labels() }),
    ))
}

// ---------------------------------------------------------------- fusion

fn fusion_trial(rng: &mut ChaCha8Rng) -> Result<(f64, serde_json::Value)> {
    let d = random_dims(rng, [4, 4, 3, 6]);
    let mut ps = ParamSet::new();
    let fp = FusionParams::init(&mut ps, d[3], rng);
    // Wider than the default init so the weights are far from uniform.
    for id in [fp.weight, fp.bias] {
        let t = ps.get_mut(id);
        *t = Tensor::random_uniform(t.shape(), -4.0, 4.0, rng);
    }
    let feats: Vec<Tensor> = (0..3).map(|_| Tensor::random_uniform(&d, -5.0, 5.0, rng)).collect();
    let mut tape = Tape::new();
    let bound = ps.bind_constant(&mut tape);
    let vars = [
        tape.constant(feats[0].clone()),
        tape.constant(feats[1].clone()),
        tape.constant(feats[2].clone()),
    ];
    let (out, w) = fuse_tri_features(&mut tape, &bound, vars, &fp)?;
    let mut dev = 0.0f64;
    for row in tape.value(w).data().chunks(3) {
        dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
        if row.iter().any(|&v| v < 0.0) {
            dev = f64::INFINITY;
        }
    }
    for (i, &o) in tape.value(out).data().iter().enumerate() {
        let vals = [feats[0].data()[i], feats[1].data()[i], feats[2].data()[i]];
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        dev = dev.max(lo - o).max(o - hi);
    }
    Ok((
        dev,
        json!({
            "dims": d,
            "weight": ps.get(fp.weight).data(),
            "bias": ps.get(fp.bias).data(),
            "features": feats.iter().map(|f| f.data().to_vec()).collect::<Vec<_>>(),
        }),
    ))
}

/// Runs one trial of `suite` from its trial seed.
pub fn run_trial(suite: Suite, trial: u64, seed: u64) -> Result<Trial> {
    let ts = trial_seed(seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(ts);
    let (deviation, input) = match suite {
        Suite::Masks => masks_trial(&mut rng)?,
        Suite::Cumavg => cumavg_trial(&mut rng)?,
        Suite::Scanloss => scanloss_trial(&mut rng)?,
        Suite::Fusion => fusion_trial(&mut rng)?,
    };
    Ok(Trial {
        trial,
        trial_seed: ts,
        deviation,
        input,
    })
}

/// Runs `trials` trials and keeps the worst one (the lowest index on ties).
pub fn run_suite(suite: Suite, trials: u64, seed: u64, tolerance: Option<f64>) -> Result<SuiteOutcome> {
    if trials < 1 {
        return Err(Error::config("oracle needs at least one trial"));
    }
    let results: Vec<Trial> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(suite, t, seed))
        .collect::<Result<_>>()?;
    let worst = results
        .into_iter()
        .reduce(|a, b| if b.deviation > a.deviation || b.deviation.is_nan() { b } else { a })
        .expect("at least one trial");
    Ok(SuiteOutcome {
        suite,
        seed,
        trials,
        tolerance: tolerance.unwrap_or(suite.tolerance()),
        worst,
    })
}

pub fn write_repro(path: &Path, outcome: &SuiteOutcome) -> Result<()> {
    let text = serde_json::to_string_pretty(outcome)? + "\n";
    crate::formats::write_file(path, text.as_bytes())
}

/// Re-runs the trial stored in a repro file and returns the recorded and the
/// recomputed outcome.
pub fn replay(path: &Path) -> Result<(SuiteOutcome, Trial)> {
    let stored: SuiteOutcome = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let again = run_trial(stored.suite, stored.worst.trial, stored.seed)?;
    Ok((stored, again))
}
