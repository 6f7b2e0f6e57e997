//! The Scan Module: three parallel axis-wise scan blocks, a spatial mixing
//! network per axis, voxelwise tri-feature fusion, and the semantic
//! prediction head.
//!
//! Every forward function records onto a [`Tape`](crate::autodiff::Tape) and
//! reads parameters through a [`Bound`](crate::autodiff::Bound) view of a
//! [`ParamSet`](crate::autodiff::ParamSet).

mod block;
mod fusion;
mod head;
mod mixer;
mod params;

pub use block::scan_block;
pub use fusion::fuse_tri_features;
pub use head::predict_head;
pub use mixer::spatial_mix;
pub use params::{
    FusionParams, HeadParams, MixerParams, ResidualUnitParams, ScanBlockParams, ScanModuleParams,
};

use crate::autodiff::{Bound, Padding, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::masks::{AttentionMask, MaskSpec};
use crate::voxel::{Axis, AxisLayout, GridDims};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixerConfig {
    pub residual_units: usize,
    pub pyramid: bool,
    pub padding: Padding,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig {
            residual_units: 2,
            pyramid: true,
            padding: Padding::Zero,
        }
    }
}

/// Architecture switches for the Scan Module and head.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub channels: usize,
    pub heads: usize,
    pub ffn_multiplier: usize,
    pub mixer: MixerConfig,
    /// Padding of the prediction-head convolution.
    pub head_padding: Padding,
    pub share_branch_params: bool,
    /// Per-axis branch switches in `[depth, width, height]` order. A disabled
    /// branch passes its input volume straight to the fusion.
    pub branches: [bool; 3],
    pub masks: [MaskSpec; 3],
    pub layer_norm_eps: f64,
    /// Scale applied to the fan-in init of the last layer of each residual
    /// branch; small values start the module close to the identity.
    pub residual_init_gain: f64,
}

impl ScanConfig {
    pub fn new(channels: usize) -> Self {
        ScanConfig {
            channels,
            heads: 1,
            ffn_multiplier: 4,
            mixer: MixerConfig::default(),
            head_padding: Padding::Zero,
            share_branch_params: false,
            branches: [true; 3],
            masks: Axis::ALL.map(MaskSpec::canonical),
            layer_norm_eps: 1e-5,
            residual_init_gain: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.heads == 0 || self.channels % self.heads != 0 {
            return Err(Error::config(format!(
                "channels {} must be a positive multiple of head count {}",
                self.channels, self.heads
            )));
        }
        if self.ffn_multiplier == 0 {
            return Err(Error::config("ffn multiplier must be positive"));
        }
        Ok(())
    }

    /// Builds the three masks for a proposal grid of `dims`.
    pub fn build_masks(&self, dims: [usize; 3]) -> Result<[AttentionMask; 3]> {
        Ok([
            self.masks[0].build(dims[0])?,
            self.masks[1].build(dims[1])?,
            self.masks[2].build(dims[2])?,
        ])
    }
}

/// Runs the three axis branches and fuses them. With every branch disabled
/// the module is the identity.
///
/// `f` is `[X̂, Ŷ, Ẑ, C]`. Each enabled branch flattens along its axis, applies
/// the scan block with that axis' mask, restores the volume and applies the
/// spatial mixing network.
pub fn scan_module_forward(
    tape: &mut Tape,
    bound: &Bound,
    f: Var,
    masks: &[AttentionMask; 3],
    params: &ScanModuleParams,
    cfg: &ScanConfig,
) -> Result<Var> {
    if !cfg.branches.iter().any(|&b| b) {
        return Ok(f);
    }
    let branches = scan_branches(tape, bound, f, masks, params, cfg)?;
    let (out, _) = fuse_tri_features(tape, bound, branches, &params.fusion)?;
    Ok(out)
}

/// Per-axis branch outputs (before fusion), `[depth, width, height]`.
pub fn scan_branches(
    tape: &mut Tape,
    bound: &Bound,
    f: Var,
    masks: &[AttentionMask; 3],
    params: &ScanModuleParams,
    cfg: &ScanConfig,
) -> Result<[Var; 3]> {
    let mut out = [f; 3];
    for axis in Axis::ALL {
        let a = axis.index();
        if !cfg.branches[a] {
            continue;
        }
        let scanned = scan_axis(tape, bound, f, axis, &masks[a], &params.blocks[a], cfg)?;
        out[a] = spatial_mix(tape, bound, scanned, &params.mixers[a], &cfg.mixer)?;
    }
    Ok(out)
}

/// Flatten → scan block → unflatten for one axis (the pre-mixing feature).
pub fn scan_axis(
    tape: &mut Tape,
    bound: &Bound,
    f: Var,
    axis: Axis,
    mask: &AttentionMask,
    params: &ScanBlockParams,
    cfg: &ScanConfig,
) -> Result<Var> {
    let s = tape.shape(f).to_vec();
    if s.len() != 4 {
        return Err(Error::shape("scan_axis", &s, &[0, 0, 0, cfg.channels]));
    }
    let layout = AxisLayout::new(axis, [s[0], s[1], s[2]], s[3]);
    let p = tape.permute(f, &layout.forward_perm)?;
    let seq = tape.reshape(p, &layout.seq_shape)?;
    let y = scan_block(tape, bound, seq, mask, params, cfg.heads, cfg.layer_norm_eps)?;
    let y = tape.reshape(y, &layout.permuted_shape)?;
    tape.permute(y, &layout.inverse_perm)
}

/// Scan Module plus prediction head over a fixed grid.
#[derive(Clone, Debug)]
pub struct ScanSscModel {
    pub dims: GridDims,
    pub num_classes: usize,
    pub config: ScanConfig,
    pub masks: [AttentionMask; 3],
    pub scan: ScanModuleParams,
    pub head: HeadParams,
}

impl ScanSscModel {
    /// Registers freshly initialised parameters in `params`.
    pub fn new(
        params: &mut ParamSet,
        dims: GridDims,
        num_classes: usize,
        config: ScanConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if dims.channels != config.channels {
            return Err(Error::config(format!(
                "grid channels {} differ from module channels {}",
                dims.channels, config.channels
            )));
        }
        dims.upsample_factors()?;
        if config.mixer.pyramid && dims.proposal.iter().any(|&e| e < 2) {
            return Err(Error::config(
                "spatial mixing pyramid needs every proposal extent >= 2; disable the pyramid for thinner grids",
            ));
        }
        let masks = config.build_masks(dims.proposal)?;
        let mut rng = params::init_rng(seed);
        let scan = ScanModuleParams::init(params, &config, &mut rng);
        let head = HeadParams::init(params, config.channels, num_classes, &mut rng);
        Ok(ScanSscModel {
            dims,
            num_classes,
            config,
            masks,
            scan,
            head,
        })
    }

    /// Logits `[X, Y, Z, P]` for an input feature volume `[X̂, Ŷ, Ẑ, C]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, f: Var) -> Result<Var> {
        let fused = scan_module_forward(tape, bound, f, &self.masks, &self.scan, &self.config)?;
        predict_head(tape, bound, fused, &self.head, &self.dims, self.config.head_padding, self.config.layer_norm_eps)
    }
}
