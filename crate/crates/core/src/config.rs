//! Run configuration in a flat `key = value` text format. `#` starts a
//! comment; triples are comma-separated in depth, width, height order.
//!
//! ```text
//! target_dims = 16,16,4
//! proposal_dims = 8,8,2
//! channels = 8
//! margins = 0.5,0.25,0
//! scan_loss = true,true,true
//! lambda_scan = 1
//! steps = 200
//! ```
//!
//! Unknown and repeated keys are rejected, and the loaded values are checked
//! against every module precondition.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Padding;
use crate::error::{Error, Result};
use crate::masks::MaskSpec;
use crate::objective::{LossWeights, ObjectiveConfig};
use crate::scan::{MixerConfig, ScanConfig};
use crate::scan_loss::ScanLossConfig;
use crate::voxel::{Axis, ClassTable, GridDims};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub target_dims: [usize; 3],
    pub proposal_dims: [usize; 3],
    pub channels: usize,
    pub heads: usize,
    /// `0` selects the 20-class SemanticKITTI table, otherwise generic names.
    pub num_classes: usize,
    pub margins: [f64; 3],
    /// Mirrors the attention masks of the scan branches.
    pub module_flip: [bool; 3],
    /// Mirrors the accumulation direction of the scan loss.
    pub loss_flip: [bool; 3],
    pub branches: [bool; 3],
    pub scan_loss: [bool; 3],
    pub lambda_d: f64,
    pub lambda_scan: f64,
    pub depth_term: f64,
    pub class_weighted_ce: bool,
    pub residual_units: usize,
    pub pyramid: bool,
    pub padding: Padding,
    pub share_branch_params: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Scale of the uniform init of the learnable input volume.
    pub feature_init: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        RunConfig {
            target_dims: [16, 16, 4],
            proposal_dims: [8, 8, 2],
            channels: 8,
            heads: 1,
            num_classes: 0,
            margins: Axis::ALL.map(crate::masks::default_margin),
            module_flip: [false; 3],
            loss_flip: [false; 3],
            branches: [true; 3],
            scan_loss: [true; 3],
            lambda_d: w.lambda_d,
            lambda_scan: w.lambda_scan,
            depth_term: 0.0,
            class_weighted_ce: false,
            residual_units: 2,
            pyramid: true,
            padding: Padding::Zero,
            share_branch_params: false,
            seed: 0,
            learning_rate: 0.05,
            momentum: 0.9,
            steps: 200,
            feature_init: 1.0,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_triple<T: FromStr + Copy>(key: &str, v: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = v.split(',').map(|p| parse_value(key, p)).collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::config(format!("{key}: expected three comma-separated values, got {v:?}")))
}

fn parse_padding(key: &str, v: &str) -> Result<Padding> {
    match v.trim() {
        "zero" => Ok(Padding::Zero),
        "reflect" => Ok(Padding::Reflect),
        _ => Err(Error::config(format!("{key}: expected zero or reflect, got {v:?}"))),
    }
}

fn triple<T: std::fmt::Display>(t: &[T; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected 'key = value', got {raw:?}", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: repeated key {key}", no + 1)));
            }
            match key {
                "target_dims" => c.target_dims = parse_triple(key, v)?,
                "proposal_dims" => c.proposal_dims = parse_triple(key, v)?,
                "channels" => c.channels = parse_value(key, v)?,
                "heads" => c.heads = parse_value(key, v)?,
                "num_classes" => c.num_classes = parse_value(key, v)?,
                "margins" => c.margins = parse_triple(key, v)?,
                "module_flip" => c.module_flip = parse_triple(key, v)?,
                "loss_flip" => c.loss_flip = parse_triple(key, v)?,
                "branches" => c.branches = parse_triple(key, v)?,
                "scan_loss" => c.scan_loss = parse_triple(key, v)?,
                "lambda_d" => c.lambda_d = parse_value(key, v)?,
                "lambda_scan" => c.lambda_scan = parse_value(key, v)?,
                "depth_term" => c.depth_term = parse_value(key, v)?,
                "class_weighted_ce" => c.class_weighted_ce = parse_value(key, v)?,
                "residual_units" => c.residual_units = parse_value(key, v)?,
                "pyramid" => c.pyramid = parse_value(key, v)?,
                "padding" => c.padding = parse_padding(key, v)?,
                "share_branch_params" => c.share_branch_params = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "learning_rate" => c.learning_rate = parse_value(key, v)?,
                "momentum" => c.momentum = parse_value(key, v)?,
                "steps" => c.steps = parse_value(key, v)?,
                "feature_init" => c.feature_init = parse_value(key, v)?,
                _ => return Err(Error::config(format!("line {}: unknown key {key}", no + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes every key; `parse(to_text())` returns an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let pad = match self.padding {
            Padding::Zero => "zero",
            Padding::Reflect => "reflect",
        };
        let _ = writeln!(s, "target_dims = {}", triple(&self.target_dims));
        let _ = writeln!(s, "proposal_dims = {}", triple(&self.proposal_dims));
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "margins = {}", triple(&self.margins));
        let _ = writeln!(s, "module_flip = {}", triple(&self.module_flip));
        let _ = writeln!(s, "loss_flip = {}", triple(&self.loss_flip));
        let _ = writeln!(s, "branches = {}", triple(&self.branches));
        let _ = writeln!(s, "scan_loss = {}", triple(&self.scan_loss));
        let _ = writeln!(s, "lambda_d = {}", self.lambda_d);
        let _ = writeln!(s, "lambda_scan = {}", self.lambda_scan);
        let _ = writeln!(s, "depth_term = {}", self.depth_term);
        let _ = writeln!(s, "class_weighted_ce = {}", self.class_weighted_ce);
        let _ = writeln!(s, "residual_units = {}", self.residual_units);
        let _ = writeln!(s, "pyramid = {}", self.pyramid);
        let _ = writeln!(s, "padding = {pad}");
        let _ = writeln!(s, "share_branch_params = {}", self.share_branch_params);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "feature_init = {}", self.feature_init);
        s
    }

    pub fn grid_dims(&self) -> Result<GridDims> {
        GridDims::new(self.target_dims, self.proposal_dims, self.channels)
    }

    pub fn class_table(&self) -> Result<ClassTable> {
        match self.num_classes {
            0 => Ok(ClassTable::semantic_kitti()),
            p => ClassTable::generic(p),
        }
    }

    pub fn scan_config(&self) -> ScanConfig {
        let mut s = ScanConfig::new(self.channels);
        s.heads = self.heads;
        s.mixer = MixerConfig {
            residual_units: self.residual_units,
            pyramid: self.pyramid,
            padding: self.padding,
        };
        s.head_padding = self.padding;
        s.share_branch_params = self.share_branch_params;
        s.branches = self.branches;
        s.masks = Axis::ALL.map(|a| MaskSpec {
            margin_ratio: self.margins[a.index()],
            flipped: self.module_flip[a.index()],
            ..MaskSpec::canonical(a)
        });
        s
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            weights: LossWeights {
                lambda_d: self.lambda_d,
                lambda_scan: self.lambda_scan,
            },
            scan: ScanLossConfig {
                enabled: self.scan_loss,
                flipped: self.loss_flip,
            },
            class_weighted_ce: self.class_weighted_ce,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.grid_dims()?;
        let table = self.class_table()?;
        if self.class_weighted_ce && table.frequency_weights().is_none() {
            return Err(Error::config(
                "class_weighted_ce needs class frequencies, which a generated run config does not carry",
            ));
        }
        let scan = self.scan_config();
        scan.validate()?;
        scan.build_masks(dims.proposal)?;
        if self.pyramid && self.proposal_dims.iter().any(|&e| e < 2) {
            return Err(Error::config("pyramid = true needs every proposal extent >= 2"));
        }
        self.objective_config().weights.validate()?;
        if !self.depth_term.is_finite() {
            return Err(Error::config("depth_term must be finite"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.feature_init.is_finite() && self.feature_init >= 0.0) {
            return Err(Error::config("feature_init must be nonnegative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_overrides() {
        let c = RunConfig::parse("# toy\nsteps = 3 # short\n\nmodule_flip = true,false,false\npadding = reflect\n").unwrap();
        assert_eq!(c.steps, 3);
        assert_eq!(c.module_flip, [true, false, false]);
        assert_eq!(c.padding, Padding::Reflect);
        assert!(c.scan_config().masks[0].flipped);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "stepz = 3",
            "steps = 3\nsteps = 4",
            "margins = 0.5,0.25",
            "margins = 1.5,0.25,0",
            "channels = 6\nheads = 4",
            "proposal_dims = 8,8,1",
            "target_dims = 15,16,4",
            "momentum = 1",
            "lambda_scan = -1",
            "no equals sign",
        ] {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn thin_grid_without_pyramid() {
        assert!(RunConfig::parse("proposal_dims = 8,8,1\ntarget_dims = 16,16,2\npyramid = false").is_ok());
    }
}
