//! Encoder weight archives: export an encoder, load it into a pretrained
//! network, and map torchvision parameter names to archive names.
//!
//! cargo run --example weight_archive

use ftseg::archive::WeightArchive;
use ftseg::harness::{surrogate_encoder, torchvision_to_canonical};
use ftseg::net::{SegmentationModelSpec, SegmentationNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a seeded encoder with calibrated batch-norm statistics
    let encoder = surrogate_encoder(1, 16, 64)?;
    let path = std::env::temp_dir().join("ftseg_encoder.wts");
    encoder.save(&path)?;
    let loaded = WeightArchive::load(&path)?;
    println!(
        "{} tensors, payload sha256 {}, round trip exact: {}",
        loaded.len(),
        &loaded.payload_sha256()[..16],
        loaded.tensors_bit_eq(&encoder)
    );

    let spec = SegmentationModelSpec::mobilenet_v2(true).with_input_size(64);
    let net: SegmentationNetwork = SegmentationNetwork::build(&spec, Some(&loaded))?;
    println!("pretrained encoder matches the archive: {}", net.encoder_archive().tensors_bit_eq(&loaded));

    for key in [
        "features.0.0.weight",
        "features.1.conv.0.0.weight",
        "features.3.conv.1.1.running_var",
        "features.18.1.bias",
        "features.4.conv.2.num_batches_tracked",
        "classifier.1.weight",
    ] {
        println!("{key:<40} -> {}", torchvision_to_canonical(key).unwrap_or_else(|| "(skipped)".into()));
    }
    Ok(())
}
