use serde::{Deserialize, Serialize};

use super::{LayerGroupId, NetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    #[serde(alias = "baseline")]
    BaselineUnet,
    #[serde(alias = "mobilenetv2")]
    MobilenetV2,
}

/// How the decoder doubles spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    /// Learned 2x2 stride-2 transposed convolution (baseline U-Net).
    TransposedConv,
    /// Parameter-free nearest-neighbour interpolation (MobileNetV2 U-Net).
    Nearest,
}

/// Tap channels of the MobileNetV2 feature extractor at strides 2..32.
pub const MOBILENET_V2_TAPS: [usize; 5] = [16, 24, 32, 96, 1280];
pub const MOBILENET_V2_DECODER: [usize; 5] = [256, 128, 64, 32, 16];
pub const BASELINE_FEATURES: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationModelSpec {
    pub encoder_kind: EncoderKind,
    #[serde(default)]
    pub encoder_pretrained: bool,
    #[serde(default = "default_input_channels")]
    pub input_channels: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default)]
    pub encoder_features: Vec<usize>,
    #[serde(default)]
    pub decoder_features: Vec<usize>,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub upsampling: Option<Upsampling>,
    /// Seed for every randomly initialized tensor.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_input_channels() -> usize {
    3
}

fn default_input_size() -> usize {
    512
}

fn default_num_classes() -> usize {
    1
}

impl SegmentationModelSpec {
    pub fn baseline() -> Self {
        Self {
            encoder_kind: EncoderKind::BaselineUnet,
            encoder_pretrained: false,
            input_channels: 3,
            input_size: 512,
            encoder_features: BASELINE_FEATURES.to_vec(),
            decoder_features: BASELINE_FEATURES.iter().rev().copied().collect(),
            num_classes: 1,
            upsampling: Some(Upsampling::TransposedConv),
            init_seed: 0,
        }
    }

    /// Baseline U-Net with custom level widths (used for small test networks).
    pub fn baseline_with_features(features: &[usize]) -> Self {
        Self {
            encoder_features: features.to_vec(),
            decoder_features: features.iter().rev().copied().collect(),
            ..Self::baseline()
        }
    }

    pub fn mobilenet_v2(pretrained: bool) -> Self {
        Self {
            encoder_kind: EncoderKind::MobilenetV2,
            encoder_pretrained: pretrained,
            input_channels: 3,
            input_size: 512,
            encoder_features: MOBILENET_V2_TAPS.to_vec(),
            decoder_features: MOBILENET_V2_DECODER.to_vec(),
            num_classes: 1,
            upsampling: Some(Upsampling::Nearest),
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    /// Fills empty feature lists and the upsampling mode with the
    /// architecture defaults, then checks every invariant.
    pub fn normalized(mut self) -> Result<Self, NetError> {
        match self.encoder_kind {
            EncoderKind::BaselineUnet => {
                if self.encoder_features.is_empty() {
                    self.encoder_features = BASELINE_FEATURES.to_vec();
                }
                if self.decoder_features.is_empty() {
                    self.decoder_features = self.encoder_features.iter().rev().copied().collect();
                }
                self.upsampling.get_or_insert(Upsampling::TransposedConv);
            }
            EncoderKind::MobilenetV2 => {
                if self.encoder_features.is_empty() {
                    self.encoder_features = MOBILENET_V2_TAPS.to_vec();
                }
                if self.decoder_features.is_empty() {
                    self.decoder_features = MOBILENET_V2_DECODER.to_vec();
                }
                self.upsampling.get_or_insert(Upsampling::Nearest);
            }
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |msg: String| Err(NetError::InvalidSpec(msg));
        if self.input_channels != 3 {
            return bad(format!("input_channels must be 3, got {}", self.input_channels));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if self.encoder_features.iter().chain(&self.decoder_features).any(|&c| c == 0) {
            return bad("feature widths must be positive".into());
        }
        match self.encoder_kind {
            EncoderKind::BaselineUnet => {
                if self.encoder_pretrained {
                    return bad("no pretrained weights exist for the baseline U-Net encoder".into());
                }
                if self.encoder_features.is_empty() {
                    return bad("baseline encoder_features must not be empty".into());
                }
                let expect: Vec<usize> = self.encoder_features.iter().rev().copied().collect();
                if self.decoder_features != expect {
                    return bad(format!(
                        "baseline decoder_features must mirror encoder_features ({expect:?})"
                    ));
                }
                if self.upsampling == Some(Upsampling::Nearest) {
                    return bad("baseline U-Net uses transposed-convolution upsampling".into());
                }
            }
            EncoderKind::MobilenetV2 => {
                if self.encoder_features != MOBILENET_V2_TAPS {
                    return bad(format!(
                        "MobileNetV2 encoder taps are fixed at {MOBILENET_V2_TAPS:?}"
                    ));
                }
                if self.decoder_features.len() != 5 {
                    return bad("MobileNetV2 U-Net needs exactly 5 decoder widths".into());
                }
                if self.upsampling == Some(Upsampling::TransposedConv) {
                    return bad("MobileNetV2 U-Net uses nearest upsampling".into());
                }
            }
        }
        let div = self.size_divisor();
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return bad(format!("input_size {} is not divisible by {div}", self.input_size));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this (total downsampling factor).
    pub fn size_divisor(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::BaselineUnet => 1 << self.encoder_features.len(),
            EncoderKind::MobilenetV2 => 32,
        }
    }

    pub fn decoder_depth(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::BaselineUnet => self.encoder_features.len(),
            EncoderKind::MobilenetV2 => 5,
        }
    }

    /// Layer groups the built network will have, without building it.
    pub fn group_ids(&self) -> Vec<LayerGroupId> {
        let depth = self.decoder_depth();
        let mut ids: Vec<_> = (0..depth).map(LayerGroupId::Encoder).collect();
        if self.encoder_kind == EncoderKind::BaselineUnet {
            ids.push(LayerGroupId::Bottleneck);
        }
        ids.extend((0..depth).map(LayerGroupId::DecoderBlock));
        ids.push(LayerGroupId::Head);
        ids
    }
}
