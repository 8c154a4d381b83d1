//! Runs a small strategy x repeat grid from a config string, resumes it, and
//! prints the aggregate table.
//!
//! cargo run --release --example experiment_grid -- [output_dir]

use ftseg::harness::{parse_config, run_experiment, validate_spec, RunEvent, RunOptions};

const CONFIG: &str = r#"
schema_version = 1
repeats = 2
strategies = ["decoder_all", "decoder_4"]

[dataset]
kind = "phantom"
n = 40
size = 64

[model]
encoder_kind = "mobilenet_v2"
encoder_pretrained = true
input_size = 64

[encoder_weights]
source = "surrogate"
calibration_images = 16

[train]
epochs = 2
batch_size = 8
lr_initial = 1e-3
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("ftseg_grid"),
    };
    let mut cfg = parse_config(CONFIG, &dir)?;
    cfg.output_dir = Some(dir.clone());
    let spec = validate_spec(cfg)?;

    let mut print = |e: &RunEvent| match e {
        RunEvent::Skipped(r) => println!("skip {}/{}", r.strategy, r.repeat),
        RunEvent::Started(r) => println!("run  {}/{} seed {}", r.strategy, r.repeat, r.seed),
        RunEvent::Epoch(r, l) => println!("     {}/{} epoch {} val dice {:.4}", r.strategy, r.repeat, l.epoch, l.val_dice),
        RunEvent::Finished(r, m) => println!("done {}/{} dice {:.4}", r.strategy, r.repeat, m.dice),
        RunEvent::Failed(f) => println!("FAIL {f}"),
    };
    // stop after one run, as if interrupted, then resume
    run_experiment(&spec, RunOptions { stop_after: Some(1), observer: Some(&mut print) })?;
    let summary = run_experiment(&spec, RunOptions { stop_after: None, observer: Some(&mut print) })?;
    println!("{} executed on resume, {} already complete", summary.executed, summary.skipped);
    for f in &summary.report_files {
        println!("wrote {}", f.display());
    }
    print!("{}", std::fs::read_to_string(dir.join("aggregate.md"))?);
    Ok(())
}
