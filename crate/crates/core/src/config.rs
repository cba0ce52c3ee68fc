//! Pipeline configuration and its `key=value` override format.

use serde::{Deserialize, Serialize};

use crate::depth_targets::{
    PropagationConfig, DEFAULT_MAX_DEPTH, DEFAULT_NARROW_PATCH, DEFAULT_SIGMA_HI, DEFAULT_SIGMA_LO,
    DEFAULT_WIDE_PATCH,
};
use crate::error::{Error, Result};
use crate::keypoint_targets::DEFAULT_MIN_IOU;
use crate::losses::Lambdas;

pub const DEFAULT_STRIDE: u32 = 4;
pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_N_CLASSES: usize = 3;

/// Where a default value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefaultOrigin {
    /// Constant stated by the method.
    Published,
    /// Chosen for this tool.
    Chosen,
}

/// `(key, default, origin, description)` for every configurable field.
pub const FIELDS: &[(&str, &str, DefaultOrigin, &str)] = &[
    (
        "stride",
        "4",
        DefaultOrigin::Chosen,
        "pixels per target-grid cell",
    ),
    (
        "max_depth",
        "60",
        DefaultOrigin::Published,
        "depth cutoff in meters (strict <)",
    ),
    (
        "sigma_lo",
        "0.3",
        DefaultOrigin::Published,
        "sigma below this propagates to the wide patch",
    ),
    (
        "sigma_hi",
        "0.7",
        DefaultOrigin::Published,
        "sigma up to this propagates to the narrow patch",
    ),
    (
        "wide_patch",
        "5",
        DefaultOrigin::Published,
        "wide patch side length (odd)",
    ),
    (
        "narrow_patch",
        "3",
        DefaultOrigin::Published,
        "narrow patch side length (odd)",
    ),
    (
        "propagated_weight",
        "1.0",
        DefaultOrigin::Chosen,
        "supervision weight of propagated cells",
    ),
    (
        "score_threshold",
        "0.3",
        DefaultOrigin::Chosen,
        "pseudo-label boxes scoring below this are dropped",
    ),
    (
        "min_iou",
        "0.7",
        DefaultOrigin::Chosen,
        "IoU used for the size-adaptive heatmap radius",
    ),
    (
        "n_classes",
        "3",
        DefaultOrigin::Chosen,
        "number of detection classes",
    ),
    ("seed", "0", DefaultOrigin::Chosen, "random seed"),
    (
        "lambda_depth",
        "1.0",
        DefaultOrigin::Chosen,
        "weight of the depth term",
    ),
    (
        "lambda_corner",
        "1.0",
        DefaultOrigin::Chosen,
        "weight of the corner heatmap term",
    ),
    (
        "lambda_center",
        "1.0",
        DefaultOrigin::Chosen,
        "weight of the center heatmap term",
    ),
    (
        "lambda_size",
        "1.0",
        DefaultOrigin::Chosen,
        "weight of the size term",
    ),
    (
        "lambda_offset",
        "1.0",
        DefaultOrigin::Chosen,
        "weight of the offset term",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stride: u32,
    pub max_depth: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub wide_patch: usize,
    pub narrow_patch: usize,
    pub propagated_weight: f64,
    pub score_threshold: f64,
    pub min_iou: f64,
    pub n_classes: usize,
    pub seed: u64,
    pub lambdas: Lambdas,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            stride: DEFAULT_STRIDE,
            max_depth: DEFAULT_MAX_DEPTH,
            sigma_lo: DEFAULT_SIGMA_LO,
            sigma_hi: DEFAULT_SIGMA_HI,
            wide_patch: DEFAULT_WIDE_PATCH,
            narrow_patch: DEFAULT_NARROW_PATCH,
            propagated_weight: 1.0,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            min_iou: DEFAULT_MIN_IOU,
            n_classes: DEFAULT_N_CLASSES,
            seed: 0,
            lambdas: Lambdas::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid value `{value}` for `{key}`"),
    })
}

impl PipelineConfig {
    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            sigma_lo: self.sigma_lo,
            sigma_hi: self.sigma_hi,
            wide_patch: self.wide_patch,
            narrow_patch: self.narrow_patch,
            propagated_weight: self.propagated_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidStride);
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "max_depth {} must be positive",
                self.max_depth
            )));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score_threshold {} outside [0, 1]",
                self.score_threshold
            )));
        }
        if !(self.min_iou > 0.0 && self.min_iou < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "min_iou {} outside (0, 1)",
                self.min_iou
            )));
        }
        if self.n_classes == 0 {
            return Err(Error::InvalidConfig("n_classes must be at least 1".into()));
        }
        self.propagation().validate()
    }

    /// Sets one field by its `FIELDS` key. `line` is used for diagnostics.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "stride" => self.stride = parse_num(key, value, line)?,
            "max_depth" => self.max_depth = parse_num(key, value, line)?,
            "sigma_lo" => self.sigma_lo = parse_num(key, value, line)?,
            "sigma_hi" => self.sigma_hi = parse_num(key, value, line)?,
            "wide_patch" => self.wide_patch = parse_num(key, value, line)?,
            "narrow_patch" => self.narrow_patch = parse_num(key, value, line)?,
            "propagated_weight" => self.propagated_weight = parse_num(key, value, line)?,
            "score_threshold" => self.score_threshold = parse_num(key, value, line)?,
            "min_iou" => self.min_iou = parse_num(key, value, line)?,
            "n_classes" => self.n_classes = parse_num(key, value, line)?,
            "seed" => self.seed = parse_num(key, value, line)?,
            "lambda_depth" => self.lambdas.depth = parse_num(key, value, line)?,
            "lambda_corner" => self.lambdas.corner = parse_num(key, value, line)?,
            "lambda_center" => self.lambdas.center = parse_num(key, value, line)?,
            "lambda_size" => self.lambdas.size = parse_num(key, value, line)?,
            "lambda_offset" => self.lambdas.offset = parse_num(key, value, line)?,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_overrides(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected key=value, got `{line}`"),
                });
            };
            self.set(key.trim(), value.trim(), i + 1)?;
        }
        Ok(())
    }
}
