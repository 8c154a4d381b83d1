use std::fs;
use std::path::Path;

use ftseg::freeze::FineTuneStrategy;
use ftseg::harness::{
    audit, parse_config, read_table, run_experiment, validate_spec, ExperimentSpec, RunEvent, RunOptions, CSV_HEADER,
    RESULT_FILE,
};

fn spec(dir: &Path, body: &str) -> ExperimentSpec {
    let text = format!("schema_version = 1\noutput_dir = \"{}\"\n{body}", dir.display());
    validate_spec(parse_config(&text, dir).unwrap()).unwrap()
}

const SMALL_GRID: &str = r#"
repeats = 2
strategies = ["baseline_scratch", "decoder_4"]
allow_random_encoder = true

[dataset]
kind = "phantom"
n = 60
seed = 3
size = 128

[model]
encoder_kind = "mobilenet_v2"
input_size = 128

[baseline_model]
encoder_kind = "baseline_unet"
encoder_features = [4, 8]
input_size = 128

[train]
epochs = 2
batch_size = 8
lr_initial = 1e-3
"#;

#[test]
fn phantom_grid_runs_then_resumes_with_nothing_to_do() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec(dir.path(), SMALL_GRID);
    let summary = run_experiment(&spec, RunOptions::default()).unwrap();
    assert_eq!(summary.executed, 4);
    assert_eq!(summary.results.len(), 4);
    assert!(summary.failures.is_empty());
    for r in &summary.results {
        assert_eq!(r.metrics.n_images, 12);
        assert_eq!(r.epoch_logs.len(), 2);
        for v in [r.metrics.pa, r.metrics.dice, r.metrics.miou] {
            assert!((0.0..=1.0).contains(&v));
        }
        let run_dir = dir.path().join(r.strategy.name()).join(r.repeat_index.to_string());
        for f in [RESULT_FILE, "epochs.jsonl", "best.ckpt"] {
            assert!(run_dir.join(f).is_file(), "{f}");
        }
        let lines = fs::read_to_string(run_dir.join("epochs.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 2);
    }

    let csv = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(csv.lines().count(), 3);
    let table = read_table(&dir.path().join("aggregate.json")).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert_eq!(table.rows[0].strategy, FineTuneStrategy::BaselineScratch);
    assert!(table.rows.iter().all(|r| r.n_runs == 2));

    let mut events = Vec::new();
    let mut observer = |e: &RunEvent| events.push(e.clone());
    let again = run_experiment(
        &spec,
        RunOptions {
            observer: Some(&mut observer),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(again.executed, 0);
    assert_eq!(again.skipped, 4);
    assert_eq!(again.results, summary.results);
    assert!(events.iter().all(|e| matches!(e, RunEvent::Skipped(_))));
}

#[test]
fn a_run_does_not_depend_on_its_position_in_the_grid() {
    let body = |strategies: &str| {
        SMALL_GRID
            .replace("repeats = 2", "repeats = 1")
            .replace(r#"["baseline_scratch", "decoder_4"]"#, strategies)
            .replace("epochs = 2", "epochs = 1")
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_experiment(&spec(a.path(), &body(r#"["baseline_scratch", "decoder_4"]"#)), RunOptions::default())
        .unwrap();
    let alone = run_experiment(&spec(b.path(), &body(r#"["decoder_4"]"#)), RunOptions::default()).unwrap();
    let x = &first.results[1];
    let y = &alone.results[0];
    assert_eq!(x.strategy, y.strategy);
    assert_eq!(x.seed, y.seed);
    assert_eq!(x.metrics, y.metrics);
    assert_eq!(x.trainable_params, y.trainable_params);
    let losses = |r: &ftseg::harness::RunResult| r.epoch_logs.iter().map(|l| l.mean_train_loss).collect::<Vec<_>>();
    assert_eq!(losses(x), losses(y));
}

#[test]
fn recorded_trainable_counts_match_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec(
        dir.path(),
        r#"
repeats = 1
strategies = ["decoder_all"]
allow_random_encoder = true
[dataset]
kind = "phantom"
n = 10
size = 64
[model]
encoder_kind = "mobilenet_v2"
input_size = 64
[train]
epochs = 1
batch_size = 4
"#,
    );
    let summary = run_experiment(&spec, RunOptions::default()).unwrap();
    let table = audit(&spec).unwrap();
    let run = &summary.results[0];
    assert_eq!(run.trainable_params, table.rows[0].trainable_params);
    assert_eq!(run.trainable_params, 4_404_945);
    assert_eq!(run.reduction_pct, 85.8);
}

#[test]
fn output_dir_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let text = "schema_version = 1\n[dataset]\nkind = \"phantom\"\n[encoder_weights]\nsource = \"surrogate\"\n";
    std::env::remove_var("FTSEG_OUTPUT_DIR");
    assert!(validate_spec(parse_config(text, dir.path()).unwrap()).is_err());
    std::env::set_var("FTSEG_OUTPUT_DIR", dir.path());
    let spec = validate_spec(parse_config(text, dir.path()).unwrap()).unwrap();
    std::env::remove_var("FTSEG_OUTPUT_DIR");
    assert_eq!(spec.output_dir, dir.path());
}
