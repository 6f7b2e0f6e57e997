use std::sync::Arc;

use super::params::{MixerParams, ResidualUnitParams};
use super::MixerConfig;
use crate::autodiff::{Bound, Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::voxel::{nearest2_matrix, pool2_matrix};

fn conv_bias(tape: &mut Tape, bound: &Bound, x: Var, w: crate::autodiff::ParamId, b: crate::autodiff::ParamId, padding: Padding) -> Result<Var> {
    let y = tape.conv3d(x, bound.var(w), padding)?;
    let c = tape.shape(y)[3];
    let bias = tape.reshape(bound.var(b), &[1, 1, 1, c])?;
    tape.add(y, bias)
}

/// `conv2(relu(conv1(x)))` without the skip connection.
fn residual_branch(tape: &mut Tape, bound: &Bound, x: Var, u: &ResidualUnitParams, padding: Padding) -> Result<Var> {
    let h = conv_bias(tape, bound, x, u.conv1_w, u.conv1_b, padding)?;
    let h = tape.relu(h);
    conv_bias(tape, bound, h, u.conv2_w, u.conv2_b, padding)
}

/// Spatial mixing network over a `[X̂, Ŷ, Ẑ, C]` volume.
///
/// Residual 3D-conv units extract local structure; the pyramid level average
/// pools by 2 on every axis, runs one more unit at the coarse scale and adds
/// the nearest-upsampled result back. With all weights zero the network is
/// the identity.
pub fn spatial_mix(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    p: &MixerParams,
    cfg: &MixerConfig,
) -> Result<Var> {
    let dims = tape.shape(x).to_vec();
    if dims.len() != 4 {
        return Err(Error::config(format!("spatial mixing expects [X, Y, Z, C], got {dims:?}")));
    }
    let mut h = x;
    for u in &p.units {
        let r = residual_branch(tape, bound, h, u, cfg.padding)?;
        h = tape.add(h, r)?;
    }
    if let Some(unit) = &p.pyramid {
        if dims[..3].iter().any(|&e| e < 2) {
            return Err(Error::config(format!(
                "pyramid level needs every extent >= 2, got {:?}; disable the pyramid for this grid",
                &dims[..3]
            )));
        }
        let mut coarse = h;
        for a in 0..3 {
            coarse = tape.apply_along(coarse, a, Arc::new(pool2_matrix(dims[a])))?;
        }
        let mut up = residual_branch(tape, bound, coarse, unit, cfg.padding)?;
        for a in 0..3 {
            up = tape.apply_along(up, a, Arc::new(nearest2_matrix(dims[a])))?;
        }
        h = tape.add(h, up)?;
    }
    Ok(h)
}
