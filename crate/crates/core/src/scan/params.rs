use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ScanConfig;
use crate::autodiff::{ParamId, ParamSet};
use crate::tensor::Tensor;
use crate::voxel::Axis;

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `±gain/√fan_in`.
fn fan_in(shape: &[usize], fan: usize, gain: f64, rng: &mut impl Rng) -> Tensor {
    let bound = gain / (fan as f64).sqrt();
    Tensor::random_uniform(shape, -bound, bound, rng)
}

/// Pre-norm attention + FFN block parameters for one axis.
#[derive(Clone, Debug)]
pub struct ScanBlockParams {
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub query_w: ParamId,
    pub query_b: ParamId,
    pub key_w: ParamId,
    pub key_b: ParamId,
    pub value_w: ParamId,
    pub value_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
    pub ffn1_w: ParamId,
    pub ffn1_b: ParamId,
    pub ffn2_w: ParamId,
    pub ffn2_b: ParamId,
}

impl ScanBlockParams {
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        c: usize,
        hidden: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut add = |name: &str, t: Tensor| ps.add(format!("{prefix}.{name}"), t);
        ScanBlockParams {
            norm1_gamma: add("norm1.gamma", Tensor::ones(&[c])),
            norm1_beta: add("norm1.beta", Tensor::zeros(&[c])),
            query_w: add("query.w", fan_in(&[c, c], c, 1.0, rng)),
            query_b: add("query.b", Tensor::zeros(&[c])),
            key_w: add("key.w", fan_in(&[c, c], c, 1.0, rng)),
            key_b: add("key.b", Tensor::zeros(&[c])),
            value_w: add("value.w", fan_in(&[c, c], c, 1.0, rng)),
            value_b: add("value.b", Tensor::zeros(&[c])),
            out_w: add("out.w", fan_in(&[c, c], c, gain, rng)),
            out_b: add("out.b", Tensor::zeros(&[c])),
            norm2_gamma: add("norm2.gamma", Tensor::ones(&[c])),
            norm2_beta: add("norm2.beta", Tensor::zeros(&[c])),
            ffn1_w: add("ffn1.w", fan_in(&[c, hidden], c, 1.0, rng)),
            ffn1_b: add("ffn1.b", Tensor::zeros(&[hidden])),
            ffn2_w: add("ffn2.w", fan_in(&[hidden, c], hidden, gain, rng)),
            ffn2_b: add("ffn2.b", Tensor::zeros(&[c])),
        }
    }

    pub fn all(&self) -> [ParamId; 16] {
        [
            self.norm1_gamma,
            self.norm1_beta,
            self.query_w,
            self.query_b,
            self.key_w,
            self.key_b,
            self.value_w,
            self.value_b,
            self.out_w,
            self.out_b,
            self.norm2_gamma,
            self.norm2_beta,
            self.ffn1_w,
            self.ffn1_b,
            self.ffn2_w,
            self.ffn2_b,
        ]
    }
}

/// `h + conv2(relu(conv1(h)))`.
#[derive(Clone, Debug)]
pub struct ResidualUnitParams {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
}

impl ResidualUnitParams {
    fn init(ps: &mut ParamSet, prefix: &str, c: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let fan = 27 * c;
        ResidualUnitParams {
            conv1_w: ps.add(format!("{prefix}.conv1.w"), fan_in(&[3, 3, 3, c, c], fan, 1.0, rng)),
            conv1_b: ps.add(format!("{prefix}.conv1.b"), Tensor::zeros(&[c])),
            conv2_w: ps.add(format!("{prefix}.conv2.w"), fan_in(&[3, 3, 3, c, c], fan, gain, rng)),
            conv2_b: ps.add(format!("{prefix}.conv2.b"), Tensor::zeros(&[c])),
        }
    }
}

/// Spatial mixing network: residual conv units, then an optional coarse
/// pyramid level that is pooled, processed and added back.
#[derive(Clone, Debug)]
pub struct MixerParams {
    pub units: Vec<ResidualUnitParams>,
    pub pyramid: Option<ResidualUnitParams>,
}

impl MixerParams {
    pub fn init(ps: &mut ParamSet, prefix: &str, cfg: &ScanConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        let gain = cfg.residual_init_gain;
        MixerParams {
            units: (0..cfg.mixer.residual_units)
                .map(|u| ResidualUnitParams::init(ps, &format!("{prefix}.unit{u}"), c, gain, rng))
                .collect(),
            pyramid: cfg
                .mixer
                .pyramid
                .then(|| ResidualUnitParams::init(ps, &format!("{prefix}.pyramid"), c, gain, rng)),
        }
    }

    pub fn all(&self) -> Vec<ParamId> {
        self.units
            .iter()
            .chain(self.pyramid.iter())
            .flat_map(|u| [u.conv1_w, u.conv1_b, u.conv2_w, u.conv2_b])
            .collect()
    }
}

/// Linear `3C → 3` producing the per-voxel branch weights.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl FusionParams {
    pub fn init(ps: &mut ParamSet, c: usize, rng: &mut impl Rng) -> Self {
        FusionParams {
            weight: ps.add("fusion.w", fan_in(&[3 * c, 3], 3 * c, 1.0, rng)),
            bias: ps.add("fusion.b", Tensor::zeros(&[3])),
        }
    }
}

/// Conv3D (3×3×3) → layer norm → linear `C → P`.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub norm_gamma: ParamId,
    pub norm_beta: ParamId,
    pub linear_w: ParamId,
    pub linear_b: ParamId,
}

impl HeadParams {
    pub fn init(ps: &mut ParamSet, c: usize, p: usize, rng: &mut impl Rng) -> Self {
        HeadParams {
            conv_w: ps.add("head.conv.w", fan_in(&[3, 3, 3, c, c], 27 * c, 1.0, rng)),
            conv_b: ps.add("head.conv.b", Tensor::zeros(&[c])),
            norm_gamma: ps.add("head.norm.gamma", Tensor::ones(&[c])),
            norm_beta: ps.add("head.norm.beta", Tensor::zeros(&[c])),
            linear_w: ps.add("head.linear.w", fan_in(&[c, p], c, 1.0, rng)),
            linear_b: ps.add("head.linear.b", Tensor::zeros(&[p])),
        }
    }

    pub fn all(&self) -> [ParamId; 6] {
        [
            self.conv_w,
            self.conv_b,
            self.norm_gamma,
            self.norm_beta,
            self.linear_w,
            self.linear_b,
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ScanModuleParams {
    /// `[depth, width, height]`; identical ids when branch parameters are shared.
    pub blocks: [ScanBlockParams; 3],
    pub mixers: [MixerParams; 3],
    pub fusion: FusionParams,
}

impl ScanModuleParams {
    pub fn init(ps: &mut ParamSet, cfg: &ScanConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        let hidden = c * cfg.ffn_multiplier;
        let gain = cfg.residual_init_gain;
        let (blocks, mixers) = if cfg.share_branch_params {
            let b = ScanBlockParams::init(ps, "shared.block", c, hidden, gain, rng);
            let m = MixerParams::init(ps, "shared.mixer", cfg, rng);
            ([b.clone(), b.clone(), b], [m.clone(), m.clone(), m])
        } else {
            let blocks = Axis::ALL.map(|a| {
                ScanBlockParams::init(ps, &format!("{}.block", a.short_name()), c, hidden, gain, rng)
            });
            let mixers = Axis::ALL.map(|a| MixerParams::init(ps, &format!("{}.mixer", a.short_name()), cfg, rng));
            (blocks, mixers)
        };
        let fusion = FusionParams::init(ps, c, rng);
        ScanModuleParams {
            blocks,
            mixers,
            fusion,
        }
    }
}
