use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network hyper-parameters. The defaults are the desk-scale model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Height and width of the square input images.
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    /// Number of aggregator blocks; even blocks attend within a frame, odd
    /// blocks across all frames.
    pub aggregator_blocks: usize,
    pub attention_heads: usize,
    pub register_count: usize,
    pub mlp_ratio: usize,
    /// Channels of the two dense-head upsampling stages.
    pub dense_channels: [usize; 2],
    pub seed: u64,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            aggregator_blocks: 4,
            attention_heads: 4,
            register_count: 4,
            mlp_ratio: 2,
            dense_channels: [32, 16],
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    /// The 2-frame-capable micro configuration used for gradient checks.
    pub fn micro() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            aggregator_blocks: 2,
            attention_heads: 2,
            register_count: 2,
            mlp_ratio: 2,
            dense_channels: [4, 4],
            seed: 0,
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} is not a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.patch_size % 4 != 0 {
            return fail(format!(
                "patch_size {} must be divisible by 4 for the two upsampling stages",
                self.patch_size
            ));
        }
        if self.embed_dim == 0 || self.attention_heads == 0 || self.embed_dim % self.attention_heads != 0 {
            return fail(format!(
                "embed_dim {} is not divisible by attention_heads {}",
                self.embed_dim, self.attention_heads
            ));
        }
        if self.aggregator_blocks == 0 || self.mlp_ratio == 0 || self.dense_channels.contains(&0) {
            return fail("aggregator_blocks, mlp_ratio and dense_channels must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Tokens per frame: class, camera, registers, patches.
    pub fn tokens_per_frame(&self) -> usize {
        2 + self.register_count + self.patch_count()
    }
}

/// Architectural switches used by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    NoCameraToken,
    NoClassToken,
    NoAggPatchToken,
    NoPriorIntoScaleHead,
    NoPriorInjection,
    NoScaleHead,
    QuatPoseEncoder,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::NoCameraToken,
        Variant::NoClassToken,
        Variant::NoAggPatchToken,
        Variant::NoPriorIntoScaleHead,
        Variant::NoPriorInjection,
        Variant::NoScaleHead,
        Variant::QuatPoseEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCameraToken => "no-camera-token",
            Variant::NoClassToken => "no-class-token",
            Variant::NoAggPatchToken => "no-agg-patch-token",
            Variant::NoPriorIntoScaleHead => "no-prior-into-scale-head",
            Variant::NoPriorInjection => "no-prior-injection",
            Variant::NoScaleHead => "no-scale-head",
            Variant::QuatPoseEncoder => "quat-pose-encoder",
        }
    }

    pub fn has_scale_head(self) -> bool {
        self != Variant::NoScaleHead
    }

    pub fn scale_uses_camera(self) -> bool {
        self != Variant::NoCameraToken
    }

    pub fn scale_uses_class(self) -> bool {
        self != Variant::NoClassToken
    }

    pub fn scale_uses_patches(self) -> bool {
        self != Variant::NoAggPatchToken
    }

    /// Whether priors are encoded and injected at all.
    pub fn uses_priors(self) -> bool {
        self != Variant::NoPriorInjection
    }

    pub fn priors_into_scale_head(self) -> bool {
        self.uses_priors() && self != Variant::NoPriorIntoScaleHead
    }

    pub fn pose_encoding(self) -> PoseEncoding {
        if self == Variant::QuatPoseEncoder {
            PoseEncoding::Quaternion
        } else {
            PoseEncoding::Rot6d
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", known.join(", ")))
            })
    }
}

/// Rotation part of the pose-encoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseEncoding {
    /// First two rotation columns plus translation: 9 values.
    Rot6d,
    /// Unit quaternion plus translation: 7 values.
    Quaternion,
}

impl PoseEncoding {
    pub fn input_dim(self) -> usize {
        match self {
            PoseEncoding::Rot6d => 9,
            PoseEncoding::Quaternion => 7,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_counts_match() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.patch_count(), 64);
        assert_eq!(c.register_count, 4);
        ModelConfig::micro().validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = ModelConfig {
            image_size: 60,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            embed_dim: 30,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            image_size: 36,
            patch_size: 6,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.name()));
        }
        assert!("no-such-thing".parse::<Variant>().is_err());
    }
}
