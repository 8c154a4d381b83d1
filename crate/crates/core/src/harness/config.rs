use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::{AugmentationConfig, SplitConfig};
use crate::freeze::{trainable_mask, FineTuneStrategy};
use crate::metrics::Averaging;
use crate::net::{EncoderKind, SegmentationModelSpec};
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "FTSEG_OUTPUT_DIR";

/// Experiment file as written by the user (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<FineTuneStrategy>,
    /// Lets encoder fine-tuning strategies run on a randomly initialized
    /// encoder (the random-weights ablation).
    #[serde(default)]
    pub allow_random_encoder: bool,
    /// Draw a fresh train/test split for every repeat instead of one fixed split.
    #[serde(default)]
    pub resplit_per_repeat: bool,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default = "default_model")]
    pub model: SegmentationModelSpec,
    #[serde(default)]
    pub encoder_weights: Option<EncoderWeights>,
    /// Network for `baseline_scratch`; defaults to the standard U-Net at the
    /// model's input size.
    #[serde(default)]
    pub baseline_model: Option<SegmentationModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_repeats() -> usize {
    4
}

fn default_strategies() -> Vec<FineTuneStrategy> {
    FineTuneStrategy::ALL.to_vec()
}

fn default_model() -> SegmentationModelSpec {
    SegmentationModelSpec::mobilenet_v2(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic ellipse phantoms generated on the fly.
    Phantom {
        #[serde(default = "default_phantom_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_phantom_size")]
        size: usize,
    },
    /// HC18 training-set directory (`<path>/training_set/*.png`).
    Hc18 { path: PathBuf },
}

fn default_phantom_n() -> usize {
    999
}

fn default_phantom_size() -> usize {
    256
}

/// Split sizes; the total is always the dataset size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub seed: Option<u64>,
}

impl SplitSection {
    /// Missing counts keep the 799:200 ratio of the full HC18 protocol.
    pub fn resolve(&self, total: usize) -> SplitConfig {
        let test = match (self.train_count, self.test_count) {
            (_, Some(t)) => t,
            (Some(tr), None) => total.saturating_sub(tr),
            (None, None) => (total as f64 * 200.0 / 999.0).round() as usize,
        };
        SplitConfig {
            total,
            train_count: self.train_count.unwrap_or(total.saturating_sub(test)),
            test_count: test,
            seed: self.seed.unwrap_or(SplitConfig::default().seed),
        }
    }
}

/// Where pretrained encoder tensors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderWeights {
    /// A `.wts` archive with canonical encoder names.
    File { path: PathBuf },
    /// Seeded random encoder whose normalization statistics are calibrated
    /// on phantom images. A desk-scale stand-in for ImageNet weights.
    Surrogate {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_calibration_images")]
        calibration_images: usize,
    },
}

fn default_calibration_images() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
    Png,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub averaging: Averaging,
    pub formats: Vec<ReportFormat>,
    /// Append the bundled literature rows to the markdown table.
    pub literature: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            averaging: Averaging::Micro,
            formats: vec![ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Png],
            literature: true,
        }
    }
}

/// One cell of the strategy x repeat grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedRun {
    pub strategy: FineTuneStrategy,
    pub repeat: usize,
    pub seed: u64,
}

/// `base_seed + ordinal(strategy) * 1000 + repeat`.
pub fn run_seed(base_seed: u64, strategy: FineTuneStrategy, repeat: usize) -> u64 {
    base_seed + strategy.ordinal() as u64 * 1000 + repeat as u64
}

/// A config with every default filled in and every invariant checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub output_dir: PathBuf,
    pub base_seed: u64,
    pub repeats: usize,
    pub strategies: Vec<FineTuneStrategy>,
    pub allow_random_encoder: bool,
    pub resplit_per_repeat: bool,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    pub model: SegmentationModelSpec,
    pub encoder_weights: Option<EncoderWeights>,
    pub baseline_model: SegmentationModelSpec,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub evaluation: EvaluationConfig,
}

impl ExperimentSpec {
    pub fn planned_runs(&self) -> Vec<PlannedRun> {
        self.strategies
            .iter()
            .flat_map(|&strategy| {
                (0..self.repeats).map(move |repeat| PlannedRun {
                    strategy,
                    repeat,
                    seed: run_seed(self.base_seed, strategy, repeat),
                })
            })
            .collect()
    }

    /// Network a strategy trains (before seeding).
    pub fn model_for(&self, strategy: FineTuneStrategy) -> &SegmentationModelSpec {
        if strategy == FineTuneStrategy::BaselineScratch {
            &self.baseline_model
        } else {
            &self.model
        }
    }

    pub fn dataset_size(&self) -> usize {
        self.split.total
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Parses TOML text. Relative paths are resolved against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base_dir.join(&*p);
        }
    };
    if let Some(p) = cfg.output_dir.as_mut() {
        resolve(p);
    }
    if let DatasetConfig::Hc18 { path } = &mut cfg.dataset {
        resolve(path);
    }
    if let Some(EncoderWeights::File { path }) = &mut cfg.encoder_weights {
        resolve(path);
    }
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Fills defaults and checks the config; errors name the offending field.
pub fn validate_spec(cfg: ExperimentConfig) -> Result<ExperimentSpec, HarnessError> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
        ));
    }
    if cfg.repeats == 0 {
        return Err(invalid("repeats", "must be at least 1"));
    }
    if cfg.strategies.is_empty() {
        return Err(invalid("strategies", "must list at least one strategy"));
    }
    for (i, s) in cfg.strategies.iter().enumerate() {
        if cfg.strategies[..i].contains(s) {
            return Err(invalid(&format!("strategies[{i}]"), format!("`{s}` listed twice")));
        }
    }
    let output_dir = match cfg.output_dir {
        Some(p) => p,
        None => std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| invalid("output_dir", format!("not set and {OUTPUT_DIR_ENV} is unset")))?,
    };

    let total = match &cfg.dataset {
        DatasetConfig::Phantom { n, size, .. } => {
            if *n < 2 {
                return Err(invalid("dataset.n", "need at least two phantoms"));
            }
            if *size == 0 || size % 32 != 0 {
                return Err(invalid("dataset.size", "must be a positive multiple of 32"));
            }
            *n
        }
        DatasetConfig::Hc18 { .. } => cfg.split.train_count.zip(cfg.split.test_count).map_or(999, |(a, b)| a + b),
    };
    let split = cfg.split.resolve(total);
    split.validate().map_err(|e| invalid("split", e.to_string()))?;

    let model = cfg.model.normalized().map_err(|e| invalid("model", e.to_string()))?;
    let baseline_model = cfg
        .baseline_model
        .unwrap_or_else(|| SegmentationModelSpec::baseline().with_input_size(model.input_size))
        .normalized()
        .map_err(|e| invalid("baseline_model", e.to_string()))?;
    if baseline_model.encoder_kind != EncoderKind::BaselineUnet {
        return Err(invalid("baseline_model.encoder_kind", "must be baseline_unet"));
    }
    if baseline_model.input_size != model.input_size {
        return Err(invalid(
            "baseline_model.input_size",
            format!("{} differs from model.input_size {}", baseline_model.input_size, model.input_size),
        ));
    }
    match (&cfg.encoder_weights, model.encoder_pretrained) {
        (None, true) => {
            return Err(invalid("encoder_weights", "a pretrained encoder needs a weight source"));
        }
        (Some(_), false) => {
            return Err(invalid("encoder_weights", "given but model.encoder_pretrained is false"));
        }
        _ => {}
    }

    for (i, &strategy) in cfg.strategies.iter().enumerate() {
        let field = format!("strategies[{i}]");
        let spec = if strategy == FineTuneStrategy::BaselineScratch {
            &baseline_model
        } else {
            &model
        };
        trainable_mask(strategy, &spec.group_ids()).map_err(|e| invalid(&field, e.to_string()))?;
        if strategy.requires_pretrained_encoder() && !spec.encoder_pretrained && !cfg.allow_random_encoder {
            return Err(invalid(
                &field,
                format!("`{strategy}` needs a pretrained encoder (or allow_random_encoder = true)"),
            ));
        }
    }

    cfg.train.validate().map_err(|e| invalid("train", e.to_string()))?;
    cfg.augmentation
        .validate()
        .map_err(|e| invalid("augmentation", e.to_string()))?;
    if cfg.evaluation.formats.is_empty() {
        return Err(invalid("evaluation.formats", "must list at least one format"));
    }

    Ok(ExperimentSpec {
        output_dir,
        base_seed: cfg.base_seed,
        repeats: cfg.repeats,
        strategies: cfg.strategies,
        allow_random_encoder: cfg.allow_random_encoder,
        resplit_per_repeat: cfg.resplit_per_repeat,
        dataset: cfg.dataset,
        split,
        model,
        encoder_weights: cfg.encoder_weights,
        baseline_model,
        train: cfg.train,
        augmentation: cfg.augmentation,
        evaluation: cfg.evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
schema_version = 1
output_dir = "out"

[dataset]
kind = "phantom"
n = 999

[encoder_weights]
source = "surrogate"
"#;

    fn parse(text: &str) -> Result<ExperimentSpec, HarnessError> {
        validate_spec(parse_config(text, Path::new("/tmp"))?)
    }

    #[test]
    fn full_grid_plans_thirty_two_runs() {
        let spec = parse(FULL).unwrap();
        assert_eq!(spec.strategies.len(), 8);
        assert_eq!(spec.planned_runs().len(), 32);
        assert_eq!(spec.output_dir, Path::new("/tmp/out"));
        assert_eq!((spec.split.train_count, spec.split.test_count), (799, 200));
        assert_eq!(spec.model.input_size, 512);
    }

    #[test]
    fn seeds_are_keyed_by_strategy_and_repeat() {
        let spec = parse(FULL).unwrap();
        let runs = spec.planned_runs();
        for r in &runs {
            assert_eq!(r.seed, r.strategy.ordinal() as u64 * 1000 + r.repeat as u64);
        }
        let mut seeds: Vec<_> = runs.iter().map(|r| r.seed).collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), runs.len());
    }

    #[test]
    fn decoder_4_on_baseline_model_is_rejected() {
        let text = r#"
schema_version = 1
output_dir = "out"
strategies = ["decoder_4"]
allow_random_encoder = true
[dataset]
kind = "phantom"
[model]
encoder_kind = "baseline_unet"
"#;
        match parse(text) {
            Err(HarnessError::Invalid { field, reason }) => {
                assert_eq!(field, "strategies[0]");
                assert!(reason.contains("decoder.4"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_repeats_is_rejected() {
        let text = FULL.replace("schema_version = 1", "schema_version = 1\nrepeats = 0");
        assert!(matches!(parse(&text), Err(HarnessError::Invalid { field, .. }) if field == "repeats"));
    }

    #[test]
    fn pretrained_strategies_need_weights_or_the_ablation_flag() {
        let text = FULL.replace("[encoder_weights]\nsource = \"surrogate\"\n", "[model]\nencoder_kind = \"mobilenet_v2\"\n");
        assert!(matches!(parse(&text), Err(HarnessError::Invalid { field, .. }) if field == "strategies[1]"));
        let text = text.replace("output_dir", "allow_random_encoder = true\noutput_dir");
        parse(&text).unwrap();
    }

    #[test]
    fn unknown_keys_and_versions_fail() {
        assert!(matches!(parse(&format!("{FULL}\nbogus = 1")), Err(HarnessError::Parse(_))));
        let text = FULL.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(parse(&text), Err(HarnessError::Invalid { field, .. }) if field == "schema_version"));
    }

    #[test]
    fn split_defaults_keep_the_protocol_ratio() {
        let s = SplitSection::default().resolve(200);
        assert_eq!((s.train_count, s.test_count), (160, 40));
        let s = SplitSection { train_count: Some(50), ..Default::default() }.resolve(60);
        assert_eq!((s.train_count, s.test_count), (50, 10));
    }
}
