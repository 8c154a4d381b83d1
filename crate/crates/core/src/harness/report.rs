use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::config::ReportFormat;
use super::runner::{RunResult, RESULT_FILE};
use super::{io_err, HarnessError};
use crate::archive::write_atomic;
use crate::freeze::FineTuneStrategy;
use crate::metrics::Averaging;

pub const CSV_HEADER: &str =
    "strategy,n_runs,pa_mean,pa_std,dice_mean,dice_std,miou_mean,miou_std,trainable_params,reduction_pct";

/// Per-strategy statistics; metric values are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: FineTuneStrategy,
    pub n_runs: usize,
    pub pa_mean: f64,
    pub pa_std: f64,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub trainable_params: usize,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub averaging: Averaging,
    pub rows: Vec<AggregateRow>,
}

/// Mean and sample standard deviation (`n - 1`); a single value has std 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// One row per strategy in `strategies` order, each over exactly `repeats`
/// results. Missing (strategy, repeat) pairs are reported together.
pub fn aggregate(
    results: &[RunResult],
    strategies: &[FineTuneStrategy],
    repeats: usize,
    averaging: Averaging,
) -> Result<AggregateTable, HarnessError> {
    if results.is_empty() || strategies.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let mut missing = Vec::new();
    for &s in strategies {
        for r in 0..repeats {
            if !results.iter().any(|x| x.strategy == s && x.repeat_index == r) {
                missing.push((s, r));
            }
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Incomplete(missing));
    }
    let rows = strategies
        .iter()
        .map(|&strategy| {
            let group: Vec<&RunResult> = (0..repeats)
                .map(|r| {
                    results
                        .iter()
                        .find(|x| x.strategy == strategy && x.repeat_index == r)
                        .expect("checked above")
                })
                .collect();
            let stat = |f: fn(&RunResult) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (pa_mean, pa_std) = stat(|r| r.metrics.pa);
            let (dice_mean, dice_std) = stat(|r| r.metrics.dice);
            let (miou_mean, miou_std) = stat(|r| r.metrics.miou);
            AggregateRow {
                strategy,
                n_runs: group.len(),
                pa_mean,
                pa_std,
                dice_mean,
                dice_std,
                miou_mean,
                miou_std,
                trainable_params: group[0].trainable_params,
                reduction_pct: group[0].reduction_pct,
            }
        })
        .collect();
    Ok(AggregateTable { averaging, rows })
}

/// Reads every `<dir>/<strategy>/<repeat>/result.json`, sorted by strategy
/// ordinal then repeat.
pub fn load_results(dir: &Path) -> Result<Vec<RunResult>, HarnessError> {
    let mut results = Vec::new();
    for strategy in FineTuneStrategy::ALL {
        let sdir = dir.join(strategy.name());
        let Ok(entries) = fs::read_dir(&sdir) else {
            continue;
        };
        for entry in entries {
            let path = entry.map_err(io_err(&sdir))?.path().join(RESULT_FILE);
            if !path.is_file() {
                continue;
            }
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let result: RunResult = serde_json::from_slice(&bytes).map_err(|e| HarnessError::Format {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            results.push(result);
        }
    }
    results.sort_by_key(|r| (r.strategy.ordinal(), r.repeat_index));
    Ok(results)
}

/// Parses `aggregate.json` back into a table.
pub fn read_table(path: &Path) -> Result<AggregateTable, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Published reference values, in percent, shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteratureRow {
    pub method: String,
    pub citation: String,
    pub dataset: String,
    pub pa: Option<f64>,
    pub dice: Option<f64>,
    pub miou: Option<f64>,
    pub trainable_params: Option<u64>,
}

const LITERATURE_JSON: &str = include_str!("literature.json");

pub fn literature() -> Vec<LiteratureRow> {
    serde_json::from_str(LITERATURE_JSON).expect("bundled literature file is valid")
}

fn pct(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

fn markdown(table: &AggregateTable, with_literature: bool) -> String {
    let mut md = String::new();
    let averaging = match table.averaging {
        Averaging::Micro => "micro",
        Averaging::Macro => "macro",
    };
    writeln!(md, "| Strategy | Runs | PA (%) | Dice (%) | mIoU (%) | Trainable params | Reduction (%) |").unwrap();
    writeln!(md, "|---|---|---|---|---|---|---|").unwrap();
    for r in &table.rows {
        writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {:.1} |",
            r.strategy,
            r.n_runs,
            pct(r.pa_mean, r.pa_std),
            pct(r.dice_mean, r.dice_std),
            pct(r.miou_mean, r.miou_std),
            r.trainable_params,
            r.reduction_pct
        )
        .unwrap();
    }
    writeln!(md, "\nMetrics are {averaging}-averaged over the test split; mean ± sample std over runs.").unwrap();
    writeln!(md, "Frozen decoder blocks keep their random initialization (frozen-at-random).").unwrap();
    if with_literature {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
        writeln!(md, "\n### Literature (reported values, not recomputed)\n").unwrap();
        writeln!(md, "| Method | Dataset | PA (%) | Dice (%) | mIoU (%) | Trainable params | Source |").unwrap();
        writeln!(md, "|---|---|---|---|---|---|---|").unwrap();
        for l in literature() {
            writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                l.method,
                l.dataset,
                cell(l.pa),
                cell(l.dice),
                cell(l.miou),
                l.trainable_params.map_or("-".to_string(), |n| n.to_string()),
                l.citation
            )
            .unwrap();
        }
    }
    md
}

fn csv_bytes(table: &AggregateTable) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &table.rows {
        w.serialize(row).expect("rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

const METRIC_COLORS: [Rgb<u8>; 3] = [Rgb([66, 133, 244]), Rgb([219, 68, 55]), Rgb([15, 157, 88])];

/// Grouped bar chart (PA, Dice, mIoU per strategy) with one-std error bars.
/// Horizontal grid lines are drawn every 0.05 of the metric scale.
pub fn bar_chart(table: &AggregateTable) -> RgbImage {
    let (bar, gap, margin, height) = (14u32, 18u32, 40u32, 320u32);
    let group = 3 * bar + gap;
    let width = 2 * margin + group * table.rows.len() as u32;
    let mut img = RgbImage::from_pixel(width, height + 2 * margin, Rgb([255, 255, 255]));

    let low = table
        .rows
        .iter()
        .flat_map(|r| [r.pa_mean - r.pa_std, r.dice_mean - r.dice_std, r.miou_mean - r.miou_std])
        .fold(1.0f64, f64::min);
    let lo = ((low - 0.05) * 20.0).floor().max(0.0) / 20.0;
    let y_of = |v: f64| {
        let t = ((v - lo) / (1.0 - lo)).clamp(0.0, 1.0);
        margin + height - (t * height as f64).round() as u32
    };
    let mut tick = lo;
    while tick <= 1.0 + 1e-9 {
        let y = y_of(tick);
        for x in margin..width - margin {
            img.put_pixel(x, y, Rgb([225, 225, 225]));
        }
        tick += 0.05;
    }
    for (i, r) in table.rows.iter().enumerate() {
        let stats = [(r.pa_mean, r.pa_std), (r.dice_mean, r.dice_std), (r.miou_mean, r.miou_std)];
        for (k, (mean, std)) in stats.into_iter().enumerate() {
            let x0 = margin + i as u32 * group + gap / 2 + k as u32 * bar;
            let top = y_of(mean);
            for x in x0..x0 + bar - 2 {
                for y in top..=margin + height {
                    img.put_pixel(x, y, METRIC_COLORS[k]);
                }
            }
            let cx = x0 + bar / 2 - 1;
            let (e_top, e_bottom) = (y_of(mean + std), y_of(mean - std));
            for y in e_top..=e_bottom {
                img.put_pixel(cx, y, Rgb([0, 0, 0]));
            }
            for x in cx.saturating_sub(3)..=cx + 3 {
                img.put_pixel(x, e_top, Rgb([0, 0, 0]));
                img.put_pixel(x, e_bottom, Rgb([0, 0, 0]));
            }
        }
    }
    for x in margin..width - margin {
        img.put_pixel(x, margin + height, Rgb([0, 0, 0]));
    }
    for y in margin..=margin + height {
        img.put_pixel(margin, y, Rgb([0, 0, 0]));
    }
    img
}

fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encode");
    out.into_inner()
}

/// Writes `aggregate.{csv,json,md,png}` for the requested formats into `dir`.
/// CSV and JSON are always written.
pub fn emit_report(
    table: &AggregateTable,
    dir: &Path,
    formats: &[ReportFormat],
    with_literature: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    if table.rows.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), HarnessError> {
        let path = dir.join(name);
        write_atomic(&path, &bytes).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    put("aggregate.csv", csv_bytes(table))?;
    put(
        "aggregate.json",
        serde_json::to_vec_pretty(table).expect("table serializes"),
    )?;
    if formats.contains(&ReportFormat::Markdown) {
        put("aggregate.md", markdown(table, with_literature).into_bytes())?;
    }
    if formats.contains(&ReportFormat::Png) {
        put("aggregate.png", png_bytes(&bar_chart(table)))?;
    }
    Ok(written)
}
