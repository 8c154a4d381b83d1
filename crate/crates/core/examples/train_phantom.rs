//! Fine-tunes the decoder of a MobileNetV2 U-Net on phantoms, then restores
//! the best checkpoint and evaluates it.
//!
//! cargo run --release --example train_phantom -- [epochs]

use ftseg::data::{split, synthesize_phantoms, AugmentationConfig, Normalization, Pipeline, SplitConfig};
use ftseg::freeze::{apply, summarize, FineTuneStrategy};
use ftseg::harness::surrogate_encoder;
use ftseg::metrics::Averaging;
use ftseg::net::{SegmentationModelSpec, SegmentationNetwork};
use ftseg::training::{load_checkpoint, save_checkpoint, train, validate, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(3), |a| a.parse())?;
    let size = 64;
    let samples = synthesize_phantoms(60, 3, size)?;
    let split_cfg = SplitConfig {
        total: 60,
        train_count: 48,
        test_count: 12,
        seed: 42,
    };
    let (train_set, test_set) = split(samples, &split_cfg)?;

    let encoder = surrogate_encoder(1, 32, size)?;
    let spec = SegmentationModelSpec::mobilenet_v2(true).with_seed(1).with_input_size(size);
    let mut net: SegmentationNetwork = SegmentationNetwork::build(&spec, Some(&encoder))?;
    let strategy = FineTuneStrategy::DecoderAll;
    apply(&mut net, strategy, false)?;
    let s = summarize(&net, SegmentationNetwork::<f32>::build(&SegmentationModelSpec::baseline(), None)?.total_params())?;
    println!("{strategy}: {} trainable, {} frozen, {:.1}% fewer than the baseline", s.trainable, s.frozen, s.reduction_vs_baseline);

    let pipeline = Pipeline {
        size,
        augmentation: AugmentationConfig::default(),
        normalization: Normalization::ImagenetStats,
        seed: 1,
    };
    let cfg = TrainConfig {
        epochs,
        batch_size: 8,
        lr_initial: 1e-3,
        ..Default::default()
    };
    let out = train(&mut net, Some(strategy), &train_set, &test_set, &pipeline, &cfg, &mut |log| {
        println!(
            "epoch {} loss {:.4} lr {:.2e} val dice {:.4} ({:.1}s)",
            log.epoch, log.mean_train_loss, log.lr, log.val_dice, log.wall_seconds
        )
    })?;

    let path = std::env::temp_dir().join("ftseg_best.ckpt");
    save_checkpoint(&out.best, &path)?;
    let ckpt = load_checkpoint(&path)?;
    ckpt.restore(&mut net)?;
    let m = validate(&net, &test_set, &pipeline, &cfg, Averaging::Micro)?;
    println!("best epoch {}: pa {:.4} dice {:.4} miou {:.4}", ckpt.epoch, m.pa, m.dice, m.miou);
    Ok(())
}
