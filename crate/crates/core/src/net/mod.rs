//! U-Net segmentation networks with named, group-partitioned parameters.
//!
//! Two variants are supported: the classic U-Net trained from scratch and
//! a U-Net whose contracting path is a MobileNetV2 feature extractor. Every
//! parameter belongs to exactly one [`LayerGroupId`]; fine-tuning strategies
//! operate on those groups.

mod baseline;
mod blocks;
mod mobilenet;
mod spec;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ftseg_nn::{Buffer, Conv2d, Conv2dConfig, MaxPool2x2, Module, Param, Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::archive::{ArchiveTensor, WeightArchive};
pub use baseline::BaselineDecoderBlock;
pub use blocks::{ConvBnAct, DoubleConv, InvertedResidual};
pub use mobilenet::{EncoderStage, UnetDecoderBlock, INVERTED_RESIDUAL_SETTINGS};
pub use spec::{
    EncoderKind, SegmentationModelSpec, Upsampling, BASELINE_FEATURES, MOBILENET_V2_DECODER,
    MOBILENET_V2_TAPS,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input shape {shape:?} invalid: {reason}")]
    Shape { shape: [usize; 4], reason: String },
    #[error("weight archive is missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Unit of freezing: one encoder stage, the bottleneck, one decoder block
/// or the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerGroupId {
    Encoder(usize),
    Bottleneck,
    /// 0 is the deepest block (next to the encoder output).
    DecoderBlock(usize),
    Head,
}

impl LayerGroupId {
    pub fn is_encoder(&self) -> bool {
        matches!(self, LayerGroupId::Encoder(_))
    }

    pub fn is_decoder(&self) -> bool {
        matches!(self, LayerGroupId::DecoderBlock(_))
    }
}

impl fmt::Display for LayerGroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerGroupId::Encoder(i) => write!(f, "encoder.{i}"),
            LayerGroupId::Bottleneck => write!(f, "bottleneck"),
            LayerGroupId::DecoderBlock(i) => write!(f, "decoder.{i}"),
            LayerGroupId::Head => write!(f, "head"),
        }
    }
}

impl FromStr for LayerGroupId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let index = |rest: &str| rest.parse::<usize>().map_err(|_| format!("bad group `{s}`"));
        match s {
            "bottleneck" => Ok(LayerGroupId::Bottleneck),
            "head" => Ok(LayerGroupId::Head),
            _ => {
                if let Some(rest) = s.strip_prefix("encoder.") {
                    Ok(LayerGroupId::Encoder(index(rest)?))
                } else if let Some(rest) = s.strip_prefix("decoder.") {
                    Ok(LayerGroupId::DecoderBlock(index(rest)?))
                } else {
                    Err(format!("bad group `{s}`"))
                }
            }
        }
    }
}

impl Serialize for LayerGroupId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerGroupId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub name: String,
    pub group: LayerGroupId,
    pub shape: Vec<usize>,
    pub count: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountFilter {
    All,
    TrainableOnly,
    ByGroup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParameterCount {
    Total(usize),
    ByGroup(BTreeMap<LayerGroupId, usize>),
}

impl ParameterCount {
    pub fn total(&self) -> usize {
        match self {
            ParameterCount::Total(n) => *n,
            ParameterCount::ByGroup(m) => m.values().sum(),
        }
    }
}

/// One encoder output: its stride relative to the input and the activation.
#[derive(Debug, Clone)]
pub struct FeatureLevel<T> {
    pub stride: usize,
    pub activation: Tensor<T>,
}

/// Encoder outputs ordered by increasing stride; the last level feeds
/// decoder block 0.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<FeatureLevel<T>>,
}

#[derive(Debug, Clone)]
struct BaselineBody<T> {
    encoder: Vec<DoubleConv<T>>,
    pools: Vec<MaxPool2x2>,
    bottleneck: DoubleConv<T>,
    decoder: Vec<BaselineDecoderBlock<T>>,
}

#[derive(Debug, Clone)]
struct MobileNetBody<T> {
    encoder: Vec<EncoderStage<T>>,
    decoder: Vec<UnetDecoderBlock<T>>,
}

#[derive(Debug, Clone)]
enum Body<T> {
    Baseline(BaselineBody<T>),
    MobileNet(MobileNetBody<T>),
}

/// Encoder-decoder segmentation model producing one logit map per class.
#[derive(Debug, Clone)]
pub struct SegmentationNetwork<T: Scalar = f32> {
    spec: SegmentationModelSpec,
    body: Body<T>,
    head: Conv2d<T>,
}

/// Builds the classic U-Net: `len(features)` encoder levels, a bottleneck at
/// twice the deepest width, mirrored decoder blocks and a 1x1 head.
pub fn build_baseline_unet<T: Scalar>(
    spec: &SegmentationModelSpec,
) -> Result<SegmentationNetwork<T>, NetError> {
    if spec.encoder_kind != EncoderKind::BaselineUnet {
        return Err(NetError::InvalidSpec("expected a baseline U-Net spec".into()));
    }
    let spec = spec.clone().normalized()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let feats = spec.encoder_features.clone();
    let mut encoder = Vec::with_capacity(feats.len());
    let mut cin = spec.input_channels;
    for (i, &f) in feats.iter().enumerate() {
        encoder.push(DoubleConv::new(&format!("encoder.{i}"), cin, f, &mut rng));
        cin = f;
    }
    let deepest = *feats.last().expect("validated non-empty");
    let bottleneck = DoubleConv::new("bottleneck", deepest, 2 * deepest, &mut rng);
    let mut decoder = Vec::with_capacity(feats.len());
    let mut below = 2 * deepest;
    for (i, &f) in feats.iter().rev().enumerate() {
        decoder.push(BaselineDecoderBlock::new(&format!("decoder.{i}"), below, f, &mut rng));
        below = f;
    }
    let head = Conv2d::new(
        "head",
        Conv2dConfig::new(feats[0], spec.num_classes, 1).padding(0),
        &mut rng,
    );
    Ok(SegmentationNetwork {
        body: Body::Baseline(BaselineBody {
            pools: vec![MaxPool2x2::new(); feats.len()],
            encoder,
            bottleneck,
            decoder,
        }),
        head,
        spec,
    })
}

/// Builds the MobileNetV2-encoder U-Net. With `encoder_pretrained`, every
/// encoder parameter and normalization statistic is copied from `weights`.
pub fn build_mobilenet_unet<T: Scalar>(
    spec: &SegmentationModelSpec,
    weights: Option<&WeightArchive>,
) -> Result<SegmentationNetwork<T>, NetError> {
    if spec.encoder_kind != EncoderKind::MobilenetV2 {
        return Err(NetError::InvalidSpec("expected a MobileNetV2 U-Net spec".into()));
    }
    let spec = spec.clone().normalized()?;
    match (spec.encoder_pretrained, weights.is_some()) {
        (true, false) => {
            return Err(NetError::InvalidSpec(
                "pretrained encoder requested but no weight archive supplied".into(),
            ))
        }
        (false, true) => {
            return Err(NetError::InvalidSpec(
                "weight archive supplied for a randomly initialized encoder".into(),
            ))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
    let mut encoder = mobilenet::build_encoder(&mut rng);
    if let Some(archive) = weights {
        load_module_from_archive(&mut encoder, archive)?;
    }
    let taps = &spec.encoder_features;
    let mut decoder = Vec::with_capacity(5);
    let mut below = taps[4];
    for (i, &out) in spec.decoder_features.iter().enumerate() {
        let skip = if i < 4 { taps[3 - i] } else { 0 };
        decoder.push(UnetDecoderBlock::new(
            &format!("decoder.{i}"),
            below,
            skip,
            out,
            &mut rng,
        ));
        below = out;
    }
    let head = Conv2d::new(
        "head",
        Conv2dConfig::new(below, spec.num_classes, 1).padding(0),
        &mut rng,
    );
    Ok(SegmentationNetwork {
        body: Body::MobileNet(MobileNetBody { encoder, decoder }),
        head,
        spec,
    })
}

fn load_module_from_archive<T: Scalar, M: Module<T> + ?Sized>(
    module: &mut M,
    archive: &WeightArchive,
) -> Result<(), NetError> {
    let mut first_error = None;
    let mut copy = |name: &str, shape: &[usize], dst: &mut Vec<T>| {
        if first_error.is_some() {
            return;
        }
        match archive.get(name) {
            None => first_error = Some(NetError::MissingTensor(name.to_string())),
            Some(t) if t.shape != shape => {
                first_error = Some(NetError::ShapeMismatch {
                    name: name.to_string(),
                    expected: shape.to_vec(),
                    found: t.shape.clone(),
                })
            }
            Some(t) => t.data.copy_into(dst),
        }
    };
    module.visit_params_mut(&mut |p| copy(&p.name, &p.shape, &mut p.value));
    module.visit_buffers_mut(&mut |b| copy(&b.name, &b.shape, &mut b.value));
    first_error.map_or(Ok(()), Err)
}

impl<T: Scalar> SegmentationNetwork<T> {
    /// Dispatches to the builder matching `spec.encoder_kind`.
    pub fn build(
        spec: &SegmentationModelSpec,
        weights: Option<&WeightArchive>,
    ) -> Result<Self, NetError> {
        match spec.encoder_kind {
            EncoderKind::BaselineUnet => {
                if weights.is_some() {
                    return Err(NetError::InvalidSpec(
                        "the baseline U-Net does not accept encoder weights".into(),
                    ));
                }
                build_baseline_unet(spec)
            }
            EncoderKind::MobilenetV2 => build_mobilenet_unet(spec, weights),
        }
    }

    pub fn spec(&self) -> &SegmentationModelSpec {
        &self.spec
    }

    /// Groups in dataflow order: encoder stages, bottleneck, decoder blocks, head.
    pub fn group_ids(&self) -> Vec<LayerGroupId> {
        let mut ids = Vec::new();
        match &self.body {
            Body::Baseline(b) => {
                ids.extend((0..b.encoder.len()).map(LayerGroupId::Encoder));
                ids.push(LayerGroupId::Bottleneck);
                ids.extend((0..b.decoder.len()).map(LayerGroupId::DecoderBlock));
            }
            Body::MobileNet(b) => {
                ids.extend((0..b.encoder.len()).map(LayerGroupId::Encoder));
                ids.extend((0..b.decoder.len()).map(LayerGroupId::DecoderBlock));
            }
        }
        ids.push(LayerGroupId::Head);
        ids
    }

    /// Visits each group's modules in dataflow order.
    pub fn visit_groups(&self, f: &mut dyn FnMut(LayerGroupId, &dyn Module<T>)) {
        match &self.body {
            Body::Baseline(b) => {
                for (i, m) in b.encoder.iter().enumerate() {
                    f(LayerGroupId::Encoder(i), m);
                }
                f(LayerGroupId::Bottleneck, &b.bottleneck);
                for (i, m) in b.decoder.iter().enumerate() {
                    f(LayerGroupId::DecoderBlock(i), m);
                }
            }
            Body::MobileNet(b) => {
                for (i, m) in b.encoder.iter().enumerate() {
                    f(LayerGroupId::Encoder(i), m);
                }
                for (i, m) in b.decoder.iter().enumerate() {
                    f(LayerGroupId::DecoderBlock(i), m);
                }
            }
        }
        f(LayerGroupId::Head, &self.head);
    }

    pub fn visit_groups_mut(&mut self, f: &mut dyn FnMut(LayerGroupId, &mut dyn Module<T>)) {
        match &mut self.body {
            Body::Baseline(b) => {
                for (i, m) in b.encoder.iter_mut().enumerate() {
                    f(LayerGroupId::Encoder(i), m);
                }
                f(LayerGroupId::Bottleneck, &mut b.bottleneck);
                for (i, m) in b.decoder.iter_mut().enumerate() {
                    f(LayerGroupId::DecoderBlock(i), m);
                }
            }
            Body::MobileNet(b) => {
                for (i, m) in b.encoder.iter_mut().enumerate() {
                    f(LayerGroupId::Encoder(i), m);
                }
                for (i, m) in b.decoder.iter_mut().enumerate() {
                    f(LayerGroupId::DecoderBlock(i), m);
                }
            }
        }
        f(LayerGroupId::Head, &mut self.head);
    }

    pub fn parameter_records(&self) -> Vec<ParameterRecord> {
        let mut out = Vec::new();
        self.visit_groups(&mut |group, m| {
            m.visit_params(&mut |p| {
                out.push(ParameterRecord {
                    name: p.name.clone(),
                    group,
                    shape: p.shape.clone(),
                    count: p.count(),
                    trainable: p.trainable,
                })
            })
        });
        out
    }

    /// Partition of parameter names by group, in dataflow order.
    pub fn enumerate_layer_groups(&self) -> Vec<(LayerGroupId, Vec<String>)> {
        let mut out = Vec::new();
        self.visit_groups(&mut |group, m| {
            let mut names = Vec::new();
            m.visit_params(&mut |p| names.push(p.name.clone()));
            out.push((group, names));
        });
        out
    }

    pub fn count_parameters(&self, filter: CountFilter) -> ParameterCount {
        let records = self.parameter_records();
        match filter {
            CountFilter::All => ParameterCount::Total(records.iter().map(|r| r.count).sum()),
            CountFilter::TrainableOnly => ParameterCount::Total(
                records.iter().filter(|r| r.trainable).map(|r| r.count).sum(),
            ),
            CountFilter::ByGroup => {
                let mut map = BTreeMap::new();
                for id in self.group_ids() {
                    map.insert(id, 0);
                }
                for r in &records {
                    *map.get_mut(&r.group).expect("group listed") += r.count;
                }
                ParameterCount::ByGroup(map)
            }
        }
    }

    pub fn total_params(&self) -> usize {
        self.count_parameters(CountFilter::All).total()
    }

    pub fn trainable_params(&self) -> usize {
        self.count_parameters(CountFilter::TrainableOnly).total()
    }

    pub fn set_group_trainable(&mut self, group: LayerGroupId, trainable: bool) {
        self.visit_groups_mut(&mut |g, m| {
            if g == group {
                m.set_trainable(trainable);
            }
        });
    }

    /// Trainable flag per group; a group counts as trainable if any of its
    /// parameters is.
    pub fn group_trainability(&self) -> BTreeMap<LayerGroupId, bool> {
        let mut out = BTreeMap::new();
        self.visit_groups(&mut |g, m| {
            out.insert(g, m.any_trainable());
        });
        out
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.visit_groups(&mut |_, m| m.visit_params(f));
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.visit_groups_mut(&mut |_, m| m.visit_params_mut(f));
    }

    pub fn visit_buffers(&self, f: &mut dyn FnMut(&Buffer<T>)) {
        self.visit_groups(&mut |_, m| m.visit_buffers(f));
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NetError> {
        let shape = x.shape();
        let err = |reason: String| Err(NetError::Shape { shape, reason });
        if shape[0] == 0 {
            return err("empty batch".into());
        }
        if shape[1] != self.spec.input_channels {
            return err(format!("expected {} channels", self.spec.input_channels));
        }
        let div = self.spec.size_divisor();
        if shape[2] == 0 || shape[3] == 0 || !shape[2].is_multiple_of(div) || !shape[3].is_multiple_of(div) {
            return err(format!("height and width must be positive multiples of {div}"));
        }
        Ok(())
    }

    /// Runs only the encoder (inference mode).
    pub fn encode(&self, x: &Tensor<T>) -> Result<FeaturePyramid<T>, NetError> {
        self.check_input(x)?;
        let mut levels = Vec::new();
        match &self.body {
            Body::Baseline(b) => {
                let mut h = x.clone();
                for (i, level) in b.encoder.iter().enumerate() {
                    let out = level.forward(&h);
                    h = b.pools[i].forward(&out);
                    levels.push(FeatureLevel { stride: 1 << i, activation: out });
                }
                levels.push(FeatureLevel {
                    stride: 1 << b.encoder.len(),
                    activation: b.bottleneck.forward(&h),
                });
            }
            Body::MobileNet(b) => {
                let mut h = x.clone();
                for (i, stage) in b.encoder.iter().enumerate() {
                    h = stage.forward(&h);
                    levels.push(FeatureLevel { stride: 2 << i, activation: h.clone() });
                }
            }
        }
        Ok(FeaturePyramid { levels })
    }

    /// Inference forward pass: `B x 3 x H x W` -> `B x classes x H x W` logits.
    /// Uses running normalization statistics; nothing is mutated.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let pyramid = self.encode(x)?;
        let mut levels: Vec<Tensor<T>> =
            pyramid.levels.into_iter().map(|l| l.activation).collect();
        let mut h = levels.pop().expect("at least one level");
        match &self.body {
            Body::Baseline(b) => {
                for block in &b.decoder {
                    let skip = levels.pop().expect("one skip per block");
                    h = block.forward(&h, &skip);
                }
            }
            Body::MobileNet(b) => {
                for block in &b.decoder {
                    let skip = levels.pop();
                    h = block.forward(&h, skip.as_ref());
                }
            }
        }
        Ok(self.head.forward(&h))
    }

    /// Training forward pass. A group caches activations for [`backward`]
    /// when it, or any group before it in dataflow order, is trainable;
    /// the others run in inference mode.
    ///
    /// [`backward`]: SegmentationNetwork::backward
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.check_input(x)?;
        let active = self.backward_plan();
        let mut gi = 0;
        let run = |gi: &mut usize| {
            let a = active[*gi];
            *gi += 1;
            a
        };
        let h = match &mut self.body {
            Body::Baseline(b) => {
                let mut skips = Vec::new();
                let mut h = x.clone();
                for (i, level) in b.encoder.iter_mut().enumerate() {
                    let train = run(&mut gi);
                    let out = if train { level.forward_train(&h) } else { level.forward(&h) };
                    h = if train {
                        b.pools[i].forward_train(&out)
                    } else {
                        b.pools[i].forward(&out)
                    };
                    skips.push(out);
                }
                h = if run(&mut gi) {
                    b.bottleneck.forward_train(&h)
                } else {
                    b.bottleneck.forward(&h)
                };
                for block in &mut b.decoder {
                    let skip = skips.pop().expect("one skip per block");
                    h = if run(&mut gi) {
                        block.forward_train(&h, &skip)
                    } else {
                        block.forward(&h, &skip)
                    };
                }
                h
            }
            Body::MobileNet(b) => {
                let mut skips = Vec::new();
                let mut h = x.clone();
                for stage in &mut b.encoder {
                    h = if run(&mut gi) { stage.forward_train(&h) } else { stage.forward(&h) };
                    skips.push(h.clone());
                }
                skips.pop();
                for block in &mut b.decoder {
                    let skip = skips.pop();
                    h = if run(&mut gi) {
                        block.forward_train(&h, skip.as_ref())
                    } else {
                        block.forward(&h, skip.as_ref())
                    };
                }
                h
            }
        };
        Ok(if run(&mut gi) {
            self.head.forward_train(&h)
        } else {
            self.head.forward(&h)
        })
    }

    /// Per group (dataflow order): whether it takes part in backward, i.e.
    /// it or some earlier group is trainable.
    fn backward_plan(&self) -> Vec<bool> {
        let mut acc = false;
        let mut plan = Vec::new();
        self.visit_groups(&mut |_, m| {
            acc |= m.any_trainable();
            plan.push(acc);
        });
        plan
    }

    /// Whether any group strictly before position `i` (dataflow order) is trainable.
    fn upstream_trainable(&self) -> Vec<bool> {
        let plan = self.backward_plan();
        let mut up = vec![false; plan.len()];
        if let Some((_, before_last)) = plan.split_last() {
            up[1..].copy_from_slice(before_last);
        }
        up
    }

    /// Accumulates parameter gradients from `dlogits` (gradient of the loss
    /// with respect to the logits of the preceding `forward_train`).
    /// Propagation stops at the first point below which nothing is trainable.
    pub fn backward(&mut self, dlogits: &Tensor<T>) {
        let upstream = self.upstream_trainable();
        let plan = self.backward_plan();
        let groups = upstream.len();
        let head_pos = groups - 1;
        if !plan[head_pos] {
            return;
        }
        let Some(d) = self.head.backward(dlogits, upstream[head_pos]) else {
            return;
        };
        match &mut self.body {
            Body::Baseline(b) => {
                let levels = b.encoder.len();
                let dec_base = levels + 1;
                let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; levels];
                let mut carry = Some(d);
                for i in (0..b.decoder.len()).rev() {
                    let pos = dec_base + i;
                    let Some(g) = carry.take() else { break };
                    if !plan[pos] {
                        break;
                    }
                    let skip_level = levels - 1 - i;
                    // the skip comes from encoder level `skip_level`
                    let need_skip = plan[skip_level];
                    let (dx, dskip) = b.decoder[i].backward(g, upstream[pos], need_skip);
                    skip_grads[skip_level] = dskip;
                    carry = dx;
                }
                // bottleneck
                let Some(g) = carry else { return };
                if !plan[levels] {
                    return;
                }
                let mut below = b.bottleneck.backward(g, upstream[levels]);
                for i in (0..levels).rev() {
                    if !plan[i] {
                        break;
                    }
                    let from_pool = below.take().map(|g| b.pools[i].backward(&g));
                    let g = add_opt(from_pool, skip_grads[i].take());
                    let Some(g) = g else { break };
                    below = b.encoder[i].backward(g, upstream[i]);
                }
            }
            Body::MobileNet(b) => {
                let stages = b.encoder.len();
                let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; stages];
                let mut carry = Some(d);
                for i in (0..b.decoder.len()).rev() {
                    let pos = stages + i;
                    let Some(g) = carry.take() else { break };
                    if !plan[pos] {
                        break;
                    }
                    let skip_stage = (i < stages - 1).then(|| stages - 2 - i);
                    let need_skip = skip_stage.is_some_and(|s| plan[s]);
                    let (dx, dskip) = b.decoder[i].backward(g, upstream[pos], need_skip);
                    if let Some(s) = skip_stage {
                        skip_grads[s] = dskip;
                    }
                    carry = dx;
                }
                let mut below = carry;
                for s in (0..stages).rev() {
                    if !plan[s] {
                        break;
                    }
                    let g = add_opt(below.take(), skip_grads[s].take());
                    let Some(g) = g else { break };
                    below = b.encoder[s].backward(g, upstream[s]);
                }
            }
        }
    }

    /// Every parameter and buffer as an archive (checkpoint payload).
    pub fn state_archive(&self) -> WeightArchive {
        let mut archive = WeightArchive::new();
        self.visit_params(&mut |p| {
            archive.insert(&p.name, ArchiveTensor::from_scalars(p.shape.clone(), &p.value));
        });
        self.visit_buffers(&mut |b| {
            archive.insert(&b.name, ArchiveTensor::from_scalars(b.shape.clone(), &b.value));
        });
        archive
    }

    /// Encoder parameters and buffers only, under canonical `encoder.*` names.
    pub fn encoder_archive(&self) -> WeightArchive {
        let mut archive = WeightArchive::new();
        self.visit_groups(&mut |g, m| {
            if g.is_encoder() {
                m.visit_params(&mut |p| {
                    archive.insert(&p.name, ArchiveTensor::from_scalars(p.shape.clone(), &p.value));
                });
                m.visit_buffers(&mut |b| {
                    archive.insert(&b.name, ArchiveTensor::from_scalars(b.shape.clone(), &b.value));
                });
            }
        });
        archive
    }

    /// Overwrites every parameter and buffer from `archive`; errors name the
    /// first missing or mismatched tensor. Trainable flags are untouched.
    pub fn load_state(&mut self, archive: &WeightArchive) -> Result<(), NetError> {
        let mut result = Ok(());
        self.visit_groups_mut(&mut |_, m| {
            if result.is_ok() {
                result = load_module_from_archive(m, archive);
            }
        });
        result
    }
}

fn add_opt<T: Scalar>(a: Option<Tensor<T>>, b: Option<Tensor<T>>) -> Option<Tensor<T>> {
    match (a, b) {
        (Some(mut a), Some(b)) => {
            a.add_assign(&b);
            Some(a)
        }
        (a, None) => a,
        (None, b) => b,
    }
}
