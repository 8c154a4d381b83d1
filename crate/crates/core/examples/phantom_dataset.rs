//! Synthetic fetal-head phantoms: generation, the seeded train/test split,
//! keyed augmentation, and export in the HC18 directory layout.
//!
//! cargo run --example phantom_dataset -- [output_dir]

use ftseg::data::{
    augment_keyed, load_dataset, split, synthesize_phantoms, write_dataset, AugmentationConfig, SplitConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let samples = synthesize_phantoms(50, 7, 128)?;
    let areas: Vec<f64> = samples
        .iter()
        .map(|s| s.mask.count_nonzero() as f64 / (128.0 * 128.0))
        .collect();
    let (lo, hi) = areas.iter().fold((1.0f64, 0.0f64), |(l, h), &a| (l.min(a), h.max(a)));
    println!("{} phantoms, foreground fraction {lo:.3}..{hi:.3}", samples.len());

    let cfg = SplitConfig {
        total: 50,
        train_count: 40,
        test_count: 10,
        seed: 42,
    };
    let (train, test) = split(samples.clone(), &cfg)?;
    let ids: Vec<&str> = test.iter().map(|s| s.id.as_str()).collect();
    println!("split {}/{}; test ids {ids:?}", train.len(), test.len());

    let aug = AugmentationConfig::default();
    for epoch in 0..3 {
        let (out, draw) = augment_keyed(&train[0], &aug, 1, epoch);
        println!(
            "epoch {epoch}: {} rotated {:+.1} deg, hflip {}, vflip {}, foreground {} px",
            out.id,
            draw.angle_deg,
            draw.hflip,
            draw.vflip,
            out.mask.count_nonzero()
        );
    }

    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("ftseg_phantoms"),
    };
    let images = write_dataset(&samples, &dir)?;
    let reloaded = load_dataset(&dir)?;
    println!("wrote {} and reloaded it: identical = {}", images.display(), reloaded == samples);
    Ok(())
}
