//! Fine-tuning strategies as trainability masks over layer groups.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{LayerGroupId, SegmentationNetwork};
use ftseg_nn::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum FreezeError {
    #[error("strategy `{strategy}` needs {group}, which this network does not have")]
    Incompatible {
        strategy: FineTuneStrategy,
        group: LayerGroupId,
    },
    #[error("strategy `{0}` requires a pretrained encoder (set allow_random_encoder to override)")]
    RequiresPretrained(FineTuneStrategy),
    #[error("mask leaves no group trainable")]
    NothingTrainable,
    #[error("mask does not match the network's groups")]
    MaskMismatch,
    #[error("baseline parameter total is zero")]
    ZeroBaseline,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneStrategy {
    BaselineScratch,
    DecoderAll,
    EncoderAll,
    #[serde(rename = "decoder_0")]
    Decoder0,
    #[serde(rename = "decoder_0_1")]
    Decoder01,
    #[serde(rename = "decoder_0_1_2")]
    Decoder012,
    #[serde(rename = "decoder_2_3_4")]
    Decoder234,
    #[serde(rename = "decoder_4")]
    Decoder4,
}

impl FineTuneStrategy {
    pub const ALL: [FineTuneStrategy; 8] = [
        FineTuneStrategy::BaselineScratch,
        FineTuneStrategy::DecoderAll,
        FineTuneStrategy::EncoderAll,
        FineTuneStrategy::Decoder0,
        FineTuneStrategy::Decoder01,
        FineTuneStrategy::Decoder012,
        FineTuneStrategy::Decoder234,
        FineTuneStrategy::Decoder4,
    ];

    /// Position in [`FineTuneStrategy::ALL`].
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            FineTuneStrategy::BaselineScratch => "baseline_scratch",
            FineTuneStrategy::DecoderAll => "decoder_all",
            FineTuneStrategy::EncoderAll => "encoder_all",
            FineTuneStrategy::Decoder0 => "decoder_0",
            FineTuneStrategy::Decoder01 => "decoder_0_1",
            FineTuneStrategy::Decoder012 => "decoder_0_1_2",
            FineTuneStrategy::Decoder234 => "decoder_2_3_4",
            FineTuneStrategy::Decoder4 => "decoder_4",
        }
    }

    pub fn requires_pretrained_encoder(self) -> bool {
        self != FineTuneStrategy::BaselineScratch
    }

    /// Unfrozen decoder block indices for the partial-decoder strategies.
    pub fn decoder_indices(self) -> Option<&'static [usize]> {
        match self {
            FineTuneStrategy::Decoder0 => Some(&[0]),
            FineTuneStrategy::Decoder01 => Some(&[0, 1]),
            FineTuneStrategy::Decoder012 => Some(&[0, 1, 2]),
            FineTuneStrategy::Decoder234 => Some(&[2, 3, 4]),
            FineTuneStrategy::Decoder4 => Some(&[4]),
            _ => None,
        }
    }
}

impl fmt::Display for FineTuneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FineTuneStrategy {
    type Err = FreezeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FreezeError::UnknownStrategy(s.to_string()))
    }
}

/// Trainable (`true`) or frozen, per layer group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainabilityMask {
    pub entries: BTreeMap<LayerGroupId, bool>,
}

impl TrainabilityMask {
    pub fn is_trainable(&self, group: LayerGroupId) -> bool {
        self.entries.get(&group).copied().unwrap_or(false)
    }

    pub fn trainable_groups(&self) -> impl Iterator<Item = LayerGroupId> + '_ {
        self.entries.iter().filter(|(_, &t)| t).map(|(&g, _)| g)
    }
}

/// The mask `strategy` induces on a network with `groups`.
///
/// The head is trainable under every strategy. Frozen decoder blocks keep
/// their random initialization.
pub fn trainable_mask(
    strategy: FineTuneStrategy,
    groups: &[LayerGroupId],
) -> Result<TrainabilityMask, FreezeError> {
    if let Some(indices) = strategy.decoder_indices() {
        for &i in indices {
            let group = LayerGroupId::DecoderBlock(i);
            if !groups.contains(&group) {
                return Err(FreezeError::Incompatible { strategy, group });
            }
        }
    }
    let entries: BTreeMap<_, _> = groups
        .iter()
        .map(|&g| {
            let on = match (strategy, g) {
                (_, LayerGroupId::Head) => true,
                (FineTuneStrategy::BaselineScratch, _) => true,
                (FineTuneStrategy::DecoderAll, g) => g.is_decoder(),
                (FineTuneStrategy::EncoderAll, g) => {
                    g.is_encoder() || g == LayerGroupId::Bottleneck
                }
                (s, LayerGroupId::DecoderBlock(i)) => {
                    s.decoder_indices().is_some_and(|ix| ix.contains(&i))
                }
                _ => false,
            };
            (g, on)
        })
        .collect();
    if !entries.values().any(|&t| t) {
        return Err(FreezeError::NothingTrainable);
    }
    Ok(TrainabilityMask { entries })
}

/// Sets trainable flags from `mask`; parameter values are untouched.
pub fn apply_mask<T: Scalar>(
    net: &mut SegmentationNetwork<T>,
    mask: &TrainabilityMask,
) -> Result<(), FreezeError> {
    let groups = net.group_ids();
    if groups.len() != mask.entries.len() || groups.iter().any(|g| !mask.entries.contains_key(g)) {
        return Err(FreezeError::MaskMismatch);
    }
    if !mask.entries.values().any(|&t| t) {
        return Err(FreezeError::NothingTrainable);
    }
    for g in groups {
        net.set_group_trainable(g, mask.entries[&g]);
    }
    Ok(())
}

/// Applies `strategy` to `net`. Strategies that fine-tune a pretrained
/// encoder refuse a randomly initialized one unless `allow_random_encoder`.
pub fn apply<T: Scalar>(
    net: &mut SegmentationNetwork<T>,
    strategy: FineTuneStrategy,
    allow_random_encoder: bool,
) -> Result<TrainabilityMask, FreezeError> {
    if strategy.requires_pretrained_encoder()
        && !net.spec().encoder_pretrained
        && !allow_random_encoder
    {
        return Err(FreezeError::RequiresPretrained(strategy));
    }
    let mask = trainable_mask(strategy, &net.group_ids())?;
    apply_mask(net, &mask)?;
    Ok(mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreezeSummary {
    pub trainable: usize,
    pub frozen: usize,
    /// `100 * (1 - trainable / baseline_total)`, rounded to one decimal.
    pub reduction_vs_baseline: f64,
}

pub fn reduction_pct(trainable: usize, baseline_total: usize) -> Result<f64, FreezeError> {
    if baseline_total == 0 {
        return Err(FreezeError::ZeroBaseline);
    }
    let raw = 100.0 * (1.0 - trainable as f64 / baseline_total as f64);
    Ok((raw * 10.0).round() / 10.0)
}

/// Trainable/frozen tallies of `net` as currently flagged.
pub fn summarize<T: Scalar>(
    net: &SegmentationNetwork<T>,
    baseline_total: usize,
) -> Result<FreezeSummary, FreezeError> {
    let total = net.total_params();
    let trainable = net.trainable_params();
    Ok(FreezeSummary {
        trainable,
        frozen: total - trainable,
        reduction_vs_baseline: reduction_pct(trainable, baseline_total)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_baseline_unet, build_mobilenet_unet, SegmentationModelSpec};
    use FineTuneStrategy::*;
    use LayerGroupId::*;

    fn mobilenet_groups() -> Vec<LayerGroupId> {
        let mut g: Vec<_> = (0..5).map(Encoder).collect();
        g.extend((0..5).map(DecoderBlock));
        g.push(Head);
        g
    }

    fn baseline_groups() -> Vec<LayerGroupId> {
        let mut g: Vec<_> = (0..4).map(Encoder).collect();
        g.push(Bottleneck);
        g.extend((0..4).map(DecoderBlock));
        g.push(Head);
        g
    }

    fn small_mobilenet() -> SegmentationNetwork<f32> {
        let mut spec = SegmentationModelSpec::mobilenet_v2(false);
        spec.decoder_features = vec![8, 8, 8, 8, 8];
        build_mobilenet_unet(&spec, None).unwrap()
    }

    #[test]
    fn config_strings() {
        let names: Vec<_> = FineTuneStrategy::ALL.iter().map(|s| s.name()).collect();
        assert_eq!(
            names,
            [
                "baseline_scratch",
                "decoder_all",
                "encoder_all",
                "decoder_0",
                "decoder_0_1",
                "decoder_0_1_2",
                "decoder_2_3_4",
                "decoder_4"
            ]
        );
        for s in FineTuneStrategy::ALL {
            assert_eq!(s.name().parse::<FineTuneStrategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.name()));
        }
        assert!("decoder_5".parse::<FineTuneStrategy>().is_err());
    }

    #[test]
    fn only_scratch_skips_pretraining() {
        let n = FineTuneStrategy::ALL.iter().filter(|s| s.requires_pretrained_encoder()).count();
        assert_eq!(n, 7);
        assert!(!BaselineScratch.requires_pretrained_encoder());
    }

    #[test]
    fn decoder_all_mask() {
        let m = trainable_mask(DecoderAll, &mobilenet_groups()).unwrap();
        for g in mobilenet_groups() {
            assert_eq!(m.is_trainable(g), !g.is_encoder(), "{g}");
        }
    }

    #[test]
    fn scratch_mask_is_all_true() {
        let m = trainable_mask(BaselineScratch, &baseline_groups()).unwrap();
        assert!(m.entries.values().all(|&t| t));
        assert_eq!(m.entries.len(), baseline_groups().len());
    }

    #[test]
    fn decoder4_mask() {
        let m = trainable_mask(Decoder4, &mobilenet_groups()).unwrap();
        let on: Vec<_> = m.trainable_groups().collect();
        assert_eq!(on, vec![DecoderBlock(4), Head]);
    }

    #[test]
    fn encoder_all_mask() {
        let m = trainable_mask(EncoderAll, &mobilenet_groups()).unwrap();
        let on: Vec<_> = m.trainable_groups().collect();
        let mut expected: Vec<_> = (0..5).map(Encoder).collect();
        expected.push(Head);
        assert_eq!(on, expected);
    }

    #[test]
    fn missing_decoder_index_is_incompatible() {
        let err = trainable_mask(Decoder4, &baseline_groups()).unwrap_err();
        assert_eq!(
            err,
            FreezeError::Incompatible {
                strategy: Decoder4,
                group: DecoderBlock(4)
            }
        );
        assert!(trainable_mask(Decoder234, &baseline_groups()).is_err());
        assert!(trainable_mask(Decoder012, &baseline_groups()).is_ok());
    }

    #[test]
    fn masks_are_total() {
        for s in FineTuneStrategy::ALL {
            let m = trainable_mask(s, &mobilenet_groups()).unwrap();
            assert_eq!(m.entries.keys().copied().collect::<Vec<_>>(), mobilenet_groups());
        }
    }

    #[test]
    fn pretrained_requirement_is_enforced() {
        let mut net = small_mobilenet();
        assert_eq!(
            apply(&mut net, DecoderAll, false).unwrap_err(),
            FreezeError::RequiresPretrained(DecoderAll)
        );
        assert!(apply(&mut net, DecoderAll, true).is_ok());
        assert!(apply(&mut net, BaselineScratch, false).is_ok());
    }

    #[test]
    fn apply_touches_flags_only_and_is_idempotent() {
        let mut net = small_mobilenet();
        let before = net.state_archive();
        apply(&mut net, Decoder01, true).unwrap();
        let once = net.parameter_records();
        apply(&mut net, Decoder01, true).unwrap();
        assert_eq!(net.parameter_records(), once);
        assert!(net.state_archive().tensors_bit_eq(&before));
        for r in &once {
            let expected = matches!(r.group, DecoderBlock(0) | DecoderBlock(1) | Head);
            assert_eq!(r.trainable, expected, "{}", r.name);
        }
    }

    #[test]
    fn partial_decoder_counts_are_monotone() {
        let mut net = small_mobilenet();
        let mut counts = Vec::new();
        for s in [Decoder0, Decoder01, Decoder012, DecoderAll] {
            apply(&mut net, s, true).unwrap();
            counts.push(net.trainable_params());
        }
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
    }

    #[test]
    fn reduction_rounding_and_errors() {
        assert_eq!(reduction_pct(100, 100).unwrap(), 0.0);
        assert_eq!(reduction_pct(142, 1000).unwrap(), 85.8);
        assert_eq!(reduction_pct(1, 0).unwrap_err(), FreezeError::ZeroBaseline);
        let mut base: SegmentationNetwork =
            build_baseline_unet(&SegmentationModelSpec::baseline_with_features(&[4, 8])).unwrap();
        apply(&mut base, BaselineScratch, false).unwrap();
        let total = base.total_params();
        let s = summarize(&base, total).unwrap();
        assert_eq!((s.trainable, s.frozen, s.reduction_vs_baseline), (total, 0, 0.0));
    }

    #[test]
    fn mask_mismatch_is_rejected() {
        let mut net = small_mobilenet();
        let mask = trainable_mask(BaselineScratch, &baseline_groups()).unwrap();
        assert_eq!(apply_mask(&mut net, &mask).unwrap_err(), FreezeError::MaskMismatch);
        let mut off = trainable_mask(BaselineScratch, &mobilenet_groups()).unwrap();
        off.entries.values_mut().for_each(|v| *v = false);
        assert_eq!(apply_mask(&mut net, &off).unwrap_err(), FreezeError::NothingTrainable);
    }
}
