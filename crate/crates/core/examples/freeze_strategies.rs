//! Which layer groups each strategy trains, and proof that a frozen group
//! does not move during an optimizer step.
//!
//! cargo run --example freeze_strategies

use std::collections::BTreeSet;

use ftseg::data::{synthesize_phantoms, AugmentationConfig, Normalization, Pipeline};
use ftseg::freeze::{apply, trainable_mask, FineTuneStrategy};
use ftseg::net::{LayerGroupId, SegmentationModelSpec, SegmentationNetwork};
use ftseg::training::{loss_and_grad, Adam, AdamConfig, LossKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SegmentationModelSpec::mobilenet_v2(false).with_input_size(64);
    let groups = spec.group_ids();
    let label = |g: &LayerGroupId| g.to_string();
    println!("{:<16} {}", "", groups.iter().map(label).collect::<Vec<_>>().join(" "));
    for strategy in FineTuneStrategy::ALL.into_iter().filter(|s| s.requires_pretrained_encoder()) {
        let mask = trainable_mask(strategy, &groups)?;
        let row: Vec<String> = groups
            .iter()
            .map(|g| {
                let mark = if mask.is_trainable(*g) { "T" } else { "." };
                format!("{mark:^width$}", width = label(g).len())
            })
            .collect();
        println!("{:<16} {}", strategy.name(), row.join(" "));
    }

    // one Adam step under decoder_4: only the last decoder block and the head change
    let mut net: SegmentationNetwork = SegmentationNetwork::build(&spec, None)?;
    apply(&mut net, FineTuneStrategy::Decoder4, true)?;
    let before = net.state_archive();
    let samples = synthesize_phantoms(2, 0, 64)?;
    let pipeline = Pipeline {
        size: 64,
        augmentation: AugmentationConfig::disabled(),
        normalization: Normalization::UnitRange,
        seed: 0,
    };
    let batch = pipeline.batch(&samples.iter().collect::<Vec<_>>(), None)?;
    let logits = net.forward_train(&batch.images)?;
    let (loss, dlogits) = loss_and_grad(&logits, &batch.masks, LossKind::DiceBce)?;
    net.backward(&dlogits);
    Adam::new(AdamConfig::default()).step(&mut net, 1e-3);
    let after = net.state_archive();

    let mut changed = BTreeSet::new();
    for (name, tensor) in before.iter() {
        if !tensor.data.bit_eq(&after.get(name).expect("same names").data) {
            let depth = if name.starts_with("head") { 1 } else { 2 };
            changed.insert(name.split('.').take(depth).collect::<Vec<_>>().join("."));
        }
    }
    println!("\nloss {loss:.4}; tensors changed by one step under decoder_4: {changed:?}");
    Ok(())
}
