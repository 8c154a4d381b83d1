use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, EncoderWeights, ExperimentSpec, PlannedRun};
use super::report::{aggregate, emit_report};
use super::surrogate::surrogate_encoder;
use super::{io_err, HarnessError};
use crate::archive::{write_atomic, WeightArchive};
use crate::data::{self, Normalization, Pipeline, Sample, SplitConfig};
use crate::freeze::{self, FineTuneStrategy};
use crate::metrics::{Averaging, MetricReport};
use crate::net::{EncoderKind, SegmentationModelSpec, SegmentationNetwork};
use crate::training::{self, save_checkpoint, EpochLog, TrainConfig};

pub const RESULT_FILE: &str = "result.json";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const EXPERIMENT_FILE: &str = "experiment.json";

/// Outcome of one (strategy, repeat) cell; `result.json` on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub strategy: FineTuneStrategy,
    pub repeat_index: usize,
    pub seed: u64,
    /// Test-split metrics of the best epoch.
    pub metrics: MetricReport,
    pub trainable_params: usize,
    pub total_params: usize,
    pub reduction_pct: f64,
    pub best_epoch: usize,
    pub config_hash: String,
    pub epoch_logs: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub strategy: FineTuneStrategy,
    pub repeat: usize,
    pub message: String,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}: {}", self.strategy, self.repeat, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEvent {
    Skipped(PlannedRun),
    Started(PlannedRun),
    Epoch(PlannedRun, EpochLog),
    Finished(PlannedRun, MetricReport),
    Failed(RunFailure),
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Stop after executing this many runs (already-completed runs do not count).
    pub stop_after: Option<usize>,
    pub observer: Option<&'a mut dyn FnMut(&RunEvent)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// Every completed run in plan order, including ones found on disk.
    pub results: Vec<RunResult>,
    pub executed: usize,
    pub skipped: usize,
    pub failures: Vec<RunFailure>,
    /// Files written by the final report, empty if the grid is incomplete.
    pub report_files: Vec<PathBuf>,
}

impl RunSummary {
    pub fn is_complete(&self, spec: &ExperimentSpec) -> bool {
        self.results.len() == spec.planned_runs().len()
    }
}

/// Loads (and for HC18, fills) the dataset named by `spec`.
pub fn load_dataset_for(spec: &ExperimentSpec) -> Result<Vec<Sample>, HarnessError> {
    Ok(match &spec.dataset {
        DatasetConfig::Phantom { n, seed, size } => data::synthesize_phantoms(*n, *seed, *size)?,
        DatasetConfig::Hc18 { path } => data::load_dataset(path)?,
    })
}

fn encoder_archive(spec: &ExperimentSpec) -> Result<Option<WeightArchive>, HarnessError> {
    match &spec.encoder_weights {
        None => Ok(None),
        Some(EncoderWeights::File { path }) => Ok(Some(WeightArchive::load(path)?)),
        Some(EncoderWeights::Surrogate {
            seed,
            calibration_images,
        }) => Ok(Some(surrogate_encoder(*seed, *calibration_images, spec.model.input_size)?)),
    }
}

/// Parameter total of a spec without keeping the network around.
fn total_params(spec: &SegmentationModelSpec) -> Result<usize, HarnessError> {
    let unweighted = SegmentationModelSpec {
        encoder_pretrained: false,
        ..spec.clone()
    };
    Ok(SegmentationNetwork::<f32>::build(&unweighted, None)?.total_params())
}

fn run_dir(spec: &ExperimentSpec, run: &PlannedRun) -> PathBuf {
    spec.output_dir
        .join(run.strategy.name())
        .join(run.repeat.to_string())
}

fn read_result(path: &Path) -> Option<RunResult> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let bytes = serde_json::to_vec_pretty(value).expect("plain data serializes");
    write_atomic(path, &bytes).map_err(io_err(path))
}

struct Context {
    samples: Vec<Sample>,
    fixed_split: Option<(Vec<Sample>, Vec<Sample>)>,
    weights: Option<WeightArchive>,
    baseline_total: usize,
}

type SplitRef<'a> = (Cow<'a, [Sample]>, Cow<'a, [Sample]>);

impl Context {
    fn split_for(&self, spec: &ExperimentSpec, repeat: usize) -> Result<SplitRef<'_>, HarnessError> {
        if let Some((train, test)) = &self.fixed_split {
            return Ok((Cow::Borrowed(train), Cow::Borrowed(test)));
        }
        let cfg = SplitConfig {
            seed: spec.split.seed + repeat as u64,
            ..spec.split
        };
        let (train, test) = data::split(self.samples.clone(), &cfg)?;
        Ok((Cow::Owned(train), Cow::Owned(test)))
    }
}

fn pipeline_for(spec: &ExperimentSpec, model: &SegmentationModelSpec, seed: u64) -> Pipeline {
    Pipeline {
        size: model.input_size,
        augmentation: spec.augmentation,
        normalization: spec
            .augmentation
            .normalization
            .unwrap_or_else(|| Normalization::default_for(model.encoder_pretrained)),
        seed,
    }
}

fn execute(
    spec: &ExperimentSpec,
    ctx: &Context,
    run: &PlannedRun,
    observer: &mut dyn FnMut(&RunEvent),
) -> Result<RunResult, HarnessError> {
    let dir = run_dir(spec, run);
    if dir.exists() {
        // leftovers of an interrupted attempt
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let model = spec.model_for(run.strategy).clone().with_seed(run.seed);
    let weights = (model.encoder_kind == EncoderKind::MobilenetV2 && model.encoder_pretrained)
        .then_some(ctx.weights.as_ref())
        .flatten();
    let mut net = SegmentationNetwork::<f32>::build(&model, weights)?;
    freeze::apply(&mut net, run.strategy, spec.allow_random_encoder)?;
    let summary = freeze::summarize(&net, ctx.baseline_total)?;

    let (train_set, test_set) = ctx.split_for(spec, run.repeat)?;
    let pipeline = pipeline_for(spec, &model, run.seed);
    let cfg = TrainConfig {
        seed: run.seed,
        ..spec.train.clone()
    };

    let epochs_path = dir.join(EPOCHS_FILE);
    let mut epochs_file = fs::File::create(&epochs_path).map_err(io_err(&epochs_path))?;
    let mut write_error = None;
    let outcome = training::train(
        &mut net,
        Some(run.strategy),
        &train_set,
        &test_set,
        &pipeline,
        &cfg,
        &mut |log| {
            let line = serde_json::to_string(log).expect("log serializes");
            if let Err(e) = writeln!(epochs_file, "{line}") {
                write_error.get_or_insert(e);
            }
            observer(&RunEvent::Epoch(*run, log.clone()));
        },
    )?;
    if let Some(e) = write_error {
        return Err(io_err(&epochs_path)(e));
    }

    let best = outcome.best;
    let metrics = match (&best.metrics, spec.evaluation.averaging) {
        (Some(m), Averaging::Micro) => m.clone(),
        _ => {
            best.restore(&mut net)?;
            training::validate(&net, &test_set, &pipeline, &cfg, spec.evaluation.averaging)?
        }
    };
    save_checkpoint(&best, dir.join(CHECKPOINT_FILE))?;
    let result = RunResult {
        strategy: run.strategy,
        repeat_index: run.repeat,
        seed: run.seed,
        metrics,
        trainable_params: summary.trainable,
        total_params: summary.trainable + summary.frozen,
        reduction_pct: summary.reduction_vs_baseline,
        best_epoch: best.epoch,
        config_hash: cfg.hash(),
        epoch_logs: outcome.logs,
    };
    // written last: its presence marks the run complete
    write_json(&dir.join(RESULT_FILE), &result)?;
    Ok(result)
}

#[derive(Serialize)]
struct ExperimentRecord<'a> {
    spec: &'a ExperimentSpec,
    seed_rule: &'static str,
    planned_runs: Vec<PlannedRun>,
}

/// Executes every planned run that has no `result.json` yet, then writes the
/// aggregate report once the grid is complete.
///
/// A failing run is recorded and the remaining runs continue.
pub fn run_experiment(spec: &ExperimentSpec, opts: RunOptions<'_>) -> Result<RunSummary, HarnessError> {
    let mut noop = |_: &RunEvent| {};
    let observer: &mut dyn FnMut(&RunEvent) = match opts.observer {
        Some(o) => o,
        None => &mut noop,
    };
    let plan = spec.planned_runs();
    fs::create_dir_all(&spec.output_dir).map_err(io_err(&spec.output_dir))?;
    write_json(
        &spec.output_dir.join(EXPERIMENT_FILE),
        &ExperimentRecord {
            spec,
            seed_rule: "base_seed + 1000 * ordinal(strategy) + repeat",
            planned_runs: plan.clone(),
        },
    )?;

    let mut done: Vec<Option<RunResult>> = plan
        .iter()
        .map(|run| read_result(&run_dir(spec, run).join(RESULT_FILE)))
        .collect();
    let skipped = done.iter().filter(|r| r.is_some()).count();
    let mut executed = 0;
    let mut failures = Vec::new();

    if done.iter().any(Option::is_none) && may_execute(opts.stop_after, 0) {
        // both networks share one input size, so resize once up front
        let samples = pipeline_for(spec, &spec.model, 0).prepare(&load_dataset_for(spec)?)?;
        let (samples, fixed_split) = if spec.resplit_per_repeat {
            (samples, None)
        } else {
            (Vec::new(), Some(data::split(samples, &spec.split)?))
        };
        let needs_weights = plan
            .iter()
            .zip(&done)
            .any(|(run, r)| r.is_none() && spec.model_for(run.strategy).encoder_pretrained);
        let ctx = Context {
            samples,
            fixed_split,
            weights: if needs_weights { encoder_archive(spec)? } else { None },
            baseline_total: total_params(&spec.baseline_model)?,
        };
        for (run, slot) in plan.iter().zip(done.iter_mut()) {
            if slot.is_some() {
                observer(&RunEvent::Skipped(*run));
                continue;
            }
            if !may_execute(opts.stop_after, executed) {
                break;
            }
            observer(&RunEvent::Started(*run));
            executed += 1;
            match execute(spec, &ctx, run, observer) {
                Ok(result) => {
                    observer(&RunEvent::Finished(*run, result.metrics.clone()));
                    *slot = Some(result);
                }
                Err(e) => {
                    let failure = RunFailure {
                        strategy: run.strategy,
                        repeat: run.repeat,
                        message: e.to_string(),
                    };
                    observer(&RunEvent::Failed(failure.clone()));
                    failures.push(failure);
                }
            }
        }
    } else {
        plan.iter()
            .zip(&done)
            .filter(|(_, r)| r.is_some())
            .for_each(|(run, _)| observer(&RunEvent::Skipped(*run)));
    }

    let results: Vec<RunResult> = done.into_iter().flatten().collect();
    let mut report_files = Vec::new();
    if results.len() == plan.len() {
        let table = aggregate(&results, &spec.strategies, spec.repeats, spec.evaluation.averaging)?;
        report_files = emit_report(&table, &spec.output_dir, &spec.evaluation.formats, spec.evaluation.literature)?;
    }
    Ok(RunSummary {
        results,
        executed,
        skipped,
        failures,
        report_files,
    })
}

fn may_execute(stop_after: Option<usize>, executed: usize) -> bool {
    stop_after.is_none_or(|n| executed < n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub strategy: FineTuneStrategy,
    pub encoder_kind: EncoderKind,
    pub total_params: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    pub baseline_total: usize,
    pub rows: Vec<AuditRow>,
}

/// Parameter accounting for every strategy of `spec`; nothing is trained
/// and no weights are loaded (they do not change the counts).
pub fn audit(spec: &ExperimentSpec) -> Result<AuditTable, HarnessError> {
    let baseline_total = total_params(&spec.baseline_model)?;
    let mut nets: Vec<(SegmentationModelSpec, SegmentationNetwork<f32>)> = Vec::new();
    let mut rows = Vec::with_capacity(spec.strategies.len());
    for &strategy in &spec.strategies {
        let model = SegmentationModelSpec {
            encoder_pretrained: false,
            ..spec.model_for(strategy).clone()
        };
        let index = match nets.iter().position(|(m, _)| *m == model) {
            Some(i) => i,
            None => {
                let net = SegmentationNetwork::build(&model, None)?;
                nets.push((model.clone(), net));
                nets.len() - 1
            }
        };
        let net = &mut nets[index].1;
        let mask = freeze::trainable_mask(strategy, &net.group_ids())?;
        freeze::apply_mask(net, &mask)?;
        let summary = freeze::summarize(net, baseline_total)?;
        rows.push(AuditRow {
            strategy,
            encoder_kind: model.encoder_kind,
            total_params: net.total_params(),
            trainable_params: summary.trainable,
            frozen_params: summary.frozen,
            reduction_pct: summary.reduction_vs_baseline,
        });
    }
    Ok(AuditTable { baseline_total, rows })
}
