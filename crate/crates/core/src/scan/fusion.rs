use super::params::FusionParams;
use crate::autodiff::{Bound, Tape, Var};
use crate::error::{Error, Result};

/// Voxelwise convex combination of the three branch volumes.
///
/// `W = softmax(Linear(concat(f_dep, f_wid, f_hgt)))` gives three weights per
/// voxel; the output is `Σᵢ Wᵢ ⊗ fᵢ` with each weight broadcast over channels.
/// Returns `(fused, weights)`, weights shaped `[X, Y, Z, 3]`.
pub fn fuse_tri_features(
    tape: &mut Tape,
    bound: &Bound,
    features: [Var; 3],
    p: &FusionParams,
) -> Result<(Var, Var)> {
    let s0 = tape.shape(features[0]).to_vec();
    for &f in &features[1..] {
        if tape.shape(f) != s0.as_slice() {
            return Err(Error::Config(format!(
                "fusion inputs differ in shape: {:?} vs {:?}",
                s0,
                tape.shape(f)
            )));
        }
    }
    let rank = s0.len();
    let cat = tape.concat(&features, rank - 1)?;
    let logits = tape.linear(cat, bound.var(p.weight), bound.var(p.bias))?;
    let weights = tape.softmax(logits, rank - 1)?;
    let mut acc = None;
    for (i, &f) in features.iter().enumerate() {
        let w = tape.slice(weights, rank - 1, i, 1)?;
        let term = tape.mul(f, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok((acc.expect("three inputs"), weights))
}
