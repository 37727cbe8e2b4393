use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::polar::GUIDANCE_CHANNELS;
use crate::ppfb::{DEFAULT_DROPOUT, DEFAULT_LAMBDA};

/// Upper clamp on predicted depth, mm.
pub const D_MAX: f64 = 10_000.0;
/// Lower clamp keeping predictions strictly positive, mm.
pub const D_MIN: f64 = 1e-3;

/// Which parts of the fusion design a model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    /// Pretrained backbone with a fusion block at every stage.
    Ppft,
    /// Backbone only, random init, guidance and depth concatenated at the input.
    NoPpft,
    /// Like `Ppft`, with AoLP and DoLP replaced by intensity copies.
    RgbGuidance,
    /// Pretrained backbone with guidance concatenated at the input, no fusion blocks.
    EarlyFusion,
    /// Pretrained backbone with a single fusion block at the first stage.
    ShallowPpfb,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Ppft,
        Ablation::NoPpft,
        Ablation::RgbGuidance,
        Ablation::EarlyFusion,
        Ablation::ShallowPpfb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Ppft => "ppft",
            Ablation::NoPpft => "no-ppft",
            Ablation::RgbGuidance => "rgb-guidance",
            Ablation::EarlyFusion => "early-fusion",
            Ablation::ShallowPpfb => "shallow-ppfb",
        }
    }

    /// Whether the mode starts from pretrained backbone weights.
    pub fn uses_foundation(self) -> bool {
        self != Ablation::NoPpft
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channel width per encoder stage; the stage count is its length.
    pub widths: Vec<usize>,
    pub guidance_channels: usize,
    pub dropout: f64,
    pub lambda_init: f64,
    /// Parameters whose name starts with any of these stay fixed in training.
    pub freeze_prefixes: Vec<String>,
    pub ablation: Ablation,
    /// Millimetres per network depth unit.
    pub depth_scale: f64,
    /// Initial head bias, network units.
    pub head_bias: f64,
    /// Adds the block input back onto the fused feature.
    pub fusion_residual: bool,
    /// Scale on the initial output projections of each fusion block.
    pub fusion_out_gain: f64,
    pub d_max: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![8, 16, 32],
            guidance_channels: GUIDANCE_CHANNELS,
            dropout: DEFAULT_DROPOUT,
            lambda_init: DEFAULT_LAMBDA,
            freeze_prefixes: Vec::new(),
            ablation: Ablation::Ppft,
            depth_scale: 1000.0,
            head_bias: 2.0,
            fusion_residual: true,
            fusion_out_gain: 0.1,
            d_max: D_MAX,
        }
    }
}

impl ModelConfig {
    pub fn stages(&self) -> usize {
        self.widths.len()
    }

    /// Number of leading stages that carry a fusion block.
    pub fn ppfb_stages(&self) -> usize {
        match self.ablation {
            Ablation::Ppft | Ablation::RgbGuidance => self.stages(),
            Ablation::ShallowPpfb => 1,
            Ablation::NoPpft | Ablation::EarlyFusion => 0,
        }
    }

    /// Input extents must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.stages().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        if self.widths[0] == 0 || self.widths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "stage widths {:?} must be positive and strictly increasing",
                self.widths
            )));
        }
        if self.guidance_channels != GUIDANCE_CHANNELS {
            return Err(Error::Config(format!("guidance must have {GUIDANCE_CHANNELS} channels")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.depth_scale > 0.0) || !(self.d_max > D_MIN) || !self.lambda_init.is_finite() || !self.head_bias.is_finite()
            || !(self.fusion_out_gain >= 0.0)
        {
            return Err(Error::Config("depth scale, d_max, lambda and head bias must be sane".into()));
        }
        Ok(())
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.freeze_prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }
}
