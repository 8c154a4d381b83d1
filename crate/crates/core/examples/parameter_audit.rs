//! Parameter accounting for the baseline U-Net and the MobileNetV2 U-Net
//! under every fine-tuning strategy. No training.
//!
//! cargo run --example parameter_audit

use ftseg::freeze::{apply, summarize, FineTuneStrategy};
use ftseg::net::{CountFilter, ParameterCount, SegmentationModelSpec, SegmentationNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let baseline: SegmentationNetwork = SegmentationNetwork::build(&SegmentationModelSpec::baseline(), None)?;
    let baseline_total = baseline.total_params();
    println!("baseline U-Net: {baseline_total} parameters");

    let mobilenet: SegmentationNetwork = SegmentationNetwork::build(&SegmentationModelSpec::mobilenet_v2(false), None)?;
    println!("MobileNetV2 U-Net: {} parameters", mobilenet.total_params());
    if let ParameterCount::ByGroup(groups) = mobilenet.count_parameters(CountFilter::ByGroup) {
        for (group, count) in groups {
            println!("  {group:<16} {count:>10}");
        }
    }

    println!("\n{:<16} {:>10} {:>10} {:>10}", "strategy", "trainable", "frozen", "reduction");
    for strategy in FineTuneStrategy::ALL {
        let mut net = if strategy == FineTuneStrategy::BaselineScratch {
            baseline.clone()
        } else {
            mobilenet.clone()
        };
        // the random encoder is fine here: only counts are reported
        apply(&mut net, strategy, true)?;
        let s = summarize(&net, baseline_total)?;
        println!(
            "{:<16} {:>10} {:>10} {:>9.1}%",
            strategy.name(),
            s.trainable,
            s.frozen,
            s.reduction_vs_baseline
        );
    }
    Ok(())
}
