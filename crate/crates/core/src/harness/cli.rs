//! `ftseg` command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::config::{load_config, parse_config, validate_spec, ExperimentSpec, ReportFormat};
use super::convert::convert_safetensors;
use super::report::{aggregate, emit_report, load_results};
use super::runner::{audit, run_experiment, RunEvent, RunOptions, EXPERIMENT_FILE};
use super::{io_err, HarnessError};
use crate::data::{synthesize_phantoms, write_dataset};
use crate::freeze::FineTuneStrategy;
use crate::metrics::Averaging;

#[derive(Debug, Parser)]
#[command(name = "ftseg", version, about = "Layer-freezing fine-tuning experiments for U-Net segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) the strategy x repeat grid described by a config.
    Run {
        config: PathBuf,
        /// Execute at most this many pending runs, then stop.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parameter accounting per strategy; no training.
    Audit {
        /// Experiment config; the default MobileNetV2 grid if omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Aggregate the results found in a results directory.
    Report {
        results_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "csv,json,markdown,png")]
        formats: Vec<String>,
        #[arg(long)]
        no_literature: bool,
    },
    /// Write a phantom dataset in the HC18 directory layout.
    Synth {
        #[arg(long, default_value_t = 60)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a torchvision MobileNetV2 safetensors checkpoint to a `.wts` encoder archive.
    ConvertWeights { src: PathBuf, dst: PathBuf },
}

const DEFAULT_AUDIT_CONFIG: &str = r#"
schema_version = 1
output_dir = "."
[dataset]
kind = "phantom"
[encoder_weights]
source = "surrogate"
"#;

fn parse_formats(names: &[String]) -> Result<Vec<ReportFormat>, HarnessError> {
    names
        .iter()
        .map(|n| match n.trim() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "png" => Ok(ReportFormat::Png),
            other => Err(HarnessError::Invalid {
                field: "--formats".into(),
                reason: format!("unknown format `{other}`"),
            }),
        })
        .collect()
}

fn load_spec(path: &Path, output_dir: Option<PathBuf>) -> Result<ExperimentSpec, HarnessError> {
    let mut cfg = load_config(path)?;
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    validate_spec(cfg)
}

/// Executes one parsed command, writing human-readable progress to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), HarnessError> {
    let stdout = PathBuf::from("<stdout>");
    let say = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(io_err(&stdout));
    match cli.command {
        Command::Run {
            config,
            stop_after,
            output_dir,
        } => {
            let spec = load_spec(&config, output_dir)?;
            let mut observer = |e: &RunEvent| {
                let line = match e {
                    RunEvent::Skipped(r) => format!("skip {}/{} (complete)", r.strategy, r.repeat),
                    RunEvent::Started(r) => format!("run  {}/{} seed {}", r.strategy, r.repeat, r.seed),
                    RunEvent::Epoch(r, log) => format!(
                        "     {}/{} epoch {} loss {:.4} val dice {:.4} ({:.1}s)",
                        r.strategy, r.repeat, log.epoch, log.mean_train_loss, log.val_dice, log.wall_seconds
                    ),
                    RunEvent::Finished(r, m) => format!(
                        "done {}/{} pa {:.4} dice {:.4} miou {:.4}",
                        r.strategy, r.repeat, m.pa, m.dice, m.miou
                    ),
                    RunEvent::Failed(f) => format!("FAIL {f}"),
                };
                // progress output is best effort
                let _ = writeln!(out, "{line}");
                let _ = out.flush();
            };
            let summary = run_experiment(
                &spec,
                RunOptions {
                    stop_after,
                    observer: Some(&mut observer),
                },
            )?;
            say(
                out,
                format!(
                    "{} executed, {} already complete, {} failed",
                    summary.executed,
                    summary.skipped,
                    summary.failures.len()
                ),
            )?;
            for f in &summary.report_files {
                say(out, format!("wrote {}", f.display()))?;
            }
            if !summary.failures.is_empty() {
                return Err(HarnessError::RunsFailed(summary.failures));
            }
            Ok(())
        }
        Command::Audit { config, json } => {
            let spec = match config {
                Some(path) => load_spec(&path, Some(PathBuf::from(".")))?,
                None => validate_spec(parse_config(DEFAULT_AUDIT_CONFIG, Path::new("."))?)?,
            };
            let table = audit(&spec)?;
            if json {
                return say(out, serde_json::to_string_pretty(&table).expect("table serializes"));
            }
            say(out, format!("baseline total parameters: {}", table.baseline_total))?;
            say(out, format!("{:<18} {:>12} {:>12} {:>12} {:>10}", "strategy", "total", "trainable", "frozen", "reduction"))?;
            for r in &table.rows {
                say(
                    out,
                    format!(
                        "{:<18} {:>12} {:>12} {:>12} {:>9.1}%",
                        r.strategy.name(),
                        r.total_params,
                        r.trainable_params,
                        r.frozen_params,
                        r.reduction_pct
                    ),
                )?;
            }
            Ok(())
        }
        Command::Report {
            results_dir,
            formats,
            no_literature,
        } => {
            let formats = parse_formats(&formats)?;
            let results = load_results(&results_dir)?;
            if results.is_empty() {
                return Err(HarnessError::EmptyResults);
            }
            // the experiment record fixes strategy order and repeat count
            let record: Option<serde_json::Value> = std::fs::read(results_dir.join(EXPERIMENT_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok());
            let spec: Option<ExperimentSpec> =
                record.and_then(|v| serde_json::from_value(v.get("spec")?.clone()).ok());
            let (strategies, repeats, averaging) = match &spec {
                Some(s) => (s.strategies.clone(), s.repeats, s.evaluation.averaging),
                None => {
                    let mut strategies: Vec<FineTuneStrategy> = results.iter().map(|r| r.strategy).collect();
                    strategies.dedup();
                    let repeats = strategies
                        .iter()
                        .map(|s| results.iter().filter(|r| r.strategy == *s).count())
                        .max()
                        .unwrap_or(0);
                    (strategies, repeats, results[0].metrics.averaging)
                }
            };
            let table = aggregate(&results, &strategies, repeats, averaging)?;
            for f in emit_report(&table, &results_dir, &formats, !no_literature)? {
                say(out, format!("wrote {}", f.display()))?;
            }
            for r in &table.rows {
                say(
                    out,
                    format!(
                        "{:<18} n={} pa {:.4}±{:.4} dice {:.4}±{:.4} miou {:.4}±{:.4}",
                        r.strategy.name(),
                        r.n_runs,
                        r.pa_mean,
                        r.pa_std,
                        r.dice_mean,
                        r.dice_std,
                        r.miou_mean,
                        r.miou_std
                    ),
                )?;
            }
            if averaging == Averaging::Macro {
                say(out, "metrics are macro-averaged per image".into())?;
            }
            Ok(())
        }
        Command::Synth { n, seed, size, out: dir } => {
            let samples = synthesize_phantoms(n, seed, size)?;
            let written = write_dataset(&samples, &dir)?;
            say(out, format!("wrote {n} phantoms to {}", written.display()))
        }
        Command::ConvertWeights { src, dst } => {
            let report = convert_safetensors(&src, &dst)?;
            say(
                out,
                format!(
                    "wrote {} tensors to {} ({} source keys skipped)",
                    report.tensors,
                    dst.display(),
                    report.skipped.len()
                ),
            )
        }
    }
}

/// Full CLI behaviour: parse `args`, run, report errors as one JSON object
/// on `err`. Returns the process exit code.
pub fn main_with<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = write!(out, "{e}");
            return 0;
        }
        Err(e) => {
            let record = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            let _ = writeln!(err, "{record}");
            return 2;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", serde_json::json!({ "error": e.record() }));
            1
        }
    }
}
