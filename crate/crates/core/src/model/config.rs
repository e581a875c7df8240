//! Declarative model description, presets and dotted-path overrides.
//!
//! Configs are TOML documents whose keys mirror [`ModelConfig`] and
//! [`StageConfig`]; unknown keys are rejected.
//!
//! ```toml
//! num_classes = 10
//! in_channels = 3
//! kernel_variant = "stacked3"
//! input_resolution = [224, 224]
//!
//! [[stages]]
//! channels = 32
//! num_blocks = 3
//! expand_ratio = 4
//! conv_type = "full"
//! embed_variant = "overlapping"
//! # ... three more [[stages]]
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Activation;
use crate::blocks::{BlockSpec, ConvType, KernelVariant};
use crate::error::{Error, Result};
use crate::layers::EmbedVariant;
use crate::nn::NormKind;

pub const NUM_STAGES: usize = 4;

/// Built-in preset names.
pub const PRESETS: [&str; 3] = ["spartan-xt", "spartan-t", "spartan-tiny"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub channels: usize,
    pub num_blocks: usize,
    pub expand_ratio: usize,
    pub conv_type: ConvType,
    pub embed_variant: EmbedVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_kernel_variant")]
    pub kernel_variant: KernelVariant,
    /// `[H, W]`.
    pub input_resolution: [usize; 2],
    #[serde(default = "default_se_reduction")]
    pub se_reduction: usize,
    #[serde(default = "default_embed_activation")]
    pub embed_activation: Activation,
    #[serde(default = "default_block_activation")]
    pub block_activation: Activation,
    #[serde(default = "default_mixer_norm")]
    pub mixer_norm: NormKind,
    #[serde(default = "default_conv_norm")]
    pub conv_norm: NormKind,
}

fn default_in_channels() -> usize {
    3
}

fn default_kernel_variant() -> KernelVariant {
    KernelVariant::Stacked3
}

fn default_se_reduction() -> usize {
    16
}

fn default_embed_activation() -> Activation {
    Activation::Silu
}

fn default_block_activation() -> Activation {
    Activation::Gelu
}

fn default_mixer_norm() -> NormKind {
    NormKind::LayerNorm
}

fn default_conv_norm() -> NormKind {
    NormKind::BatchNorm
}

/// Hybrid layout: full convolutions in the first two stages, depthwise in the
/// last two; overlapping embed first, nonoverlapping after.
fn hybrid_stages(channels: [usize; 4], blocks: [usize; 4], ratios: [usize; 4]) -> Vec<StageConfig> {
    (0..NUM_STAGES)
        .map(|i| StageConfig {
            channels: channels[i],
            num_blocks: blocks[i],
            expand_ratio: ratios[i],
            conv_type: if i < 2 { ConvType::Full } else { ConvType::Depthwise },
            embed_variant: if i == 0 { EmbedVariant::Overlapping } else { EmbedVariant::Nonoverlapping },
        })
        .collect()
}

impl ModelConfig {
    fn with_stages(stages: Vec<StageConfig>, num_classes: usize, resolution: usize) -> Self {
        Self {
            stages,
            num_classes,
            in_channels: default_in_channels(),
            kernel_variant: default_kernel_variant(),
            input_resolution: [resolution, resolution],
            se_reduction: default_se_reduction(),
            embed_activation: default_embed_activation(),
            block_activation: default_block_activation(),
            mixer_norm: default_mixer_norm(),
            conv_norm: default_conv_norm(),
        }
    }

    pub fn spartan_xt() -> Self {
        Self::with_stages(hybrid_stages([32, 64, 96, 192], [3, 3, 10, 2], [4, 4, 2, 2]), 1000, 224)
    }

    pub fn spartan_t() -> Self {
        Self::with_stages(hybrid_stages([32, 64, 128, 256], [3, 3, 12, 2], [4, 4, 2, 2]), 1000, 224)
    }

    /// One block per stage, two classes at 32×32; small enough for
    /// gradient checks and quick training runs.
    pub fn spartan_tiny() -> Self {
        Self { se_reduction: 4, ..Self::with_stages(hybrid_stages([8, 16, 24, 32], [1, 1, 1, 1], [4, 4, 2, 2]), 2, 32) }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "spartan-xt" => Some(Self::spartan_xt()),
            "spartan-t" => Some(Self::spartan_t()),
            "spartan-tiny" => Some(Self::spartan_tiny()),
            _ => None,
        }
    }

    /// A preset name or a path to a TOML file.
    pub fn resolve(preset_or_path: &str) -> Result<Self> {
        if let Some(cfg) = Self::preset(preset_or_path) {
            return Ok(cfg);
        }
        let path = Path::new(preset_or_path);
        if !path.exists() {
            return Err(Error::Config(format!(
                "`{preset_or_path}` is neither a preset ({}) nor an existing file",
                PRESETS.join(", ")
            )));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the value at a dotted path such as `stages.3.conv_type` from a
    /// TOML literal (`full`, `4`, `[256, 256]`; bare words are strings).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                toml::Value::Table(t) => t.get_mut(part),
                toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
        }
        *slot = parse_literal(value);
        let cfg: Self =
            root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Sets every stage's convolution type.
    pub fn with_conv_type(mut self, t: ConvType) -> Self {
        self.stages.iter_mut().for_each(|s| s.conv_type = t);
        self
    }

    pub fn with_kernel_variant(mut self, k: KernelVariant) -> Self {
        self.kernel_variant = k;
        self
    }

    pub fn with_resolution(mut self, r: usize) -> Self {
        self.input_resolution = [r, r];
        self
    }

    /// Product of all embed strides.
    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.embed_variant.stride()).product()
    }

    pub fn block_spec(&self, stage: usize) -> BlockSpec {
        let s = &self.stages[stage];
        BlockSpec {
            channels: s.channels,
            expand_ratio: s.expand_ratio,
            conv_type: s.conv_type,
            kernel_variant: self.kernel_variant,
            se_reduction: self.se_reduction,
            activation: self.block_activation,
            conv_norm: self.conv_norm,
            mixer_norm: self.mixer_norm,
        }
    }

    /// Checks a resolution against the total downsampling factor.
    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let stride = self.total_stride().max(32);
        if h == 0 || w == 0 || !h.is_multiple_of(stride) || !w.is_multiple_of(stride) {
            return Err(Error::Config(format!("input_resolution {h}x{w} must be a positive multiple of {stride}")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: String, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.stages.len() != NUM_STAGES {
            return err("stages".into(), format!("expected {NUM_STAGES} stages, got {}", self.stages.len()));
        }
        if self.num_classes < 2 {
            return err("num_classes".into(), format!("must be at least 2, got {}", self.num_classes));
        }
        if self.in_channels == 0 {
            return err("in_channels".into(), "must be positive".into());
        }
        if self.se_reduction == 0 {
            return err("se_reduction".into(), "must be positive".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels < 2 || s.channels % 2 != 0 {
                return err(format!("stages.{i}.channels"), format!("must be even and at least 2, got {}", s.channels));
            }
            if i == 0 && s.embed_variant == EmbedVariant::Overlapping && s.channels % 4 != 0 {
                return err(
                    format!("stages.{i}.channels"),
                    format!("overlapping embed needs a multiple of 4, got {}", s.channels),
                );
            }
            if s.num_blocks == 0 {
                return err(format!("stages.{i}.num_blocks"), "must be at least 1".into());
            }
            if s.expand_ratio == 0 {
                return err(format!("stages.{i}.expand_ratio"), "must be at least 1".into());
            }
            for width in [s.channels / 2, s.channels * s.expand_ratio] {
                if width % self.se_reduction != 0 {
                    return err(
                        "se_reduction".into(),
                        format!("{} does not divide the {width}-channel SE input of stage {i}", self.se_reduction),
                    );
                }
            }
        }
        let [h, w] = self.input_resolution;
        self.check_resolution(h, w).or_else(|e| err("input_resolution".into(), e.to_string()))
    }

    /// Per-stage summary: output size, embed, channels, blocks, ratio, conv type.
    pub fn describe(&self) -> String {
        let [mut h, mut w] = self.input_resolution;
        let mut s = format!(
            "{:<6} {:>9}  {:<15} {:>8} {:>6} {:>6}  {:<10}\n",
            "stage", "output", "embed", "channels", "blocks", "ratio", "conv"
        );
        for (i, st) in self.stages.iter().enumerate() {
            h /= st.embed_variant.stride();
            w /= st.embed_variant.stride();
            let _ = writeln!(
                s,
                "{:<6} {:>9}  {:<15} {:>8} {:>6} {:>6}  {:<10}",
                format!("S{}", i + 1),
                format!("{h}x{w}"),
                st.embed_variant.to_string(),
                st.channels,
                st.num_blocks,
                st.expand_ratio,
                st.conv_type.to_string()
            );
        }
        s
    }
}

fn parse_literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ModelConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ModelConfig::spartan_t();
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = ModelConfig::spartan_xt().to_toml().replace("num_classes", "num_clases");
        let e = ModelConfig::from_toml(&text).unwrap_err().to_string();
        assert!(e.contains("num_clases"), "{e}");
    }

    #[test]
    fn dotted_overrides() {
        let mut cfg = ModelConfig::spartan_xt();
        cfg.apply_overrides(&["stages.3.conv_type=full", "input_resolution=[256, 256]", "kernel_variant=single5"])
            .unwrap();
        assert_eq!(cfg.stages[3].conv_type, ConvType::Full);
        assert_eq!(cfg.stages[2].conv_type, ConvType::Depthwise);
        assert_eq!(cfg.input_resolution, [256, 256]);
        assert_eq!(cfg.kernel_variant, KernelVariant::Single5);
    }

    #[test]
    fn bad_overrides() {
        let mut cfg = ModelConfig::spartan_xt();
        assert!(cfg.set("stages.7.channels", "8").is_err());
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("stages.0.conv_type", "sparse").is_err());
        assert!(cfg.set("input_resolution", "[100, 100]").is_err());
        assert_eq!(cfg, ModelConfig::spartan_xt());
    }

    #[test]
    fn se_reduction_must_divide() {
        let mut cfg = ModelConfig::spartan_tiny();
        let e = cfg.set("se_reduction", "16").unwrap_err().to_string();
        assert!(e.contains("se_reduction"), "{e}");
    }

    #[test]
    fn describe_lists_stages() {
        let d = ModelConfig::spartan_xt().describe();
        assert!(d.contains("56x56") && d.contains("7x7"));
        assert_eq!(d.lines().count(), 5);
    }
}
