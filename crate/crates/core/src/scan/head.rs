use std::sync::Arc;

use super::params::HeadParams;
use crate::autodiff::{Bound, Padding, Tape, Var};
use crate::error::Result;
use crate::voxel::{upsample_matrix, GridDims};

/// `Upsample(Linear(Norm(Conv3D(f))))`: proposal-grid features `[X̂, Ŷ, Ẑ, C]`
/// to target-grid logits `[X, Y, Z, P]`.
pub fn predict_head(
    tape: &mut Tape,
    bound: &Bound,
    f: Var,
    p: &HeadParams,
    dims: &GridDims,
    padding: Padding,
    eps: f64,
) -> Result<Var> {
    let factors = dims.upsample_factors()?;
    let h = tape.conv3d(f, bound.var(p.conv_w), padding)?;
    let c = tape.shape(h)[3];
    let b = tape.reshape(bound.var(p.conv_b), &[1, 1, 1, c])?;
    let h = tape.add(h, b)?;
    let h = tape.layer_norm(h, bound.var(p.norm_gamma), bound.var(p.norm_beta), eps)?;
    let mut y = tape.linear(h, bound.var(p.linear_w), bound.var(p.linear_b))?;
    for (axis, &factor) in factors.iter().enumerate() {
        if factor != 1 {
            let n = tape.shape(y)[axis];
            y = tape.apply_along(y, axis, Arc::new(upsample_matrix(n, factor)))?;
        }
    }
    Ok(y)
}
