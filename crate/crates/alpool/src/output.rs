//! Files written by the command-line interface: the JSONL run log, the
//! curves table, the cross-training grid and model checkpoints. Every file
//! is written to a temporary sibling first and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use alpool_core::classifier::TrainedModel;
use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::engine::{CrossCell, CurvePoint, Run, RunRecord};

/// Version of the run log and checkpoint layouts.
pub const SCHEMA_VERSION: u32 = 1;

pub const RUNS_FILE: &str = "runs.jsonl";
pub const CURVES_FILE: &str = "curves.csv";
pub const CROSSTRAIN_FILE: &str = "crosstrain.csv";
pub const SELECTOR_RUNS_FILE: &str = "selector_runs.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub schema_version: u32,
    /// Strategy name, or selector name in a cross-training log.
    pub strategy: String,
    pub repetition: usize,
    pub run_seed: u64,
    #[serde(flatten)]
    pub record: RunRecord,
}

/// A run tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRun {
    pub strategy: String,
    pub repetition: usize,
    pub run: Run,
}

pub fn encode_runs(runs: &[LabelledRun]) -> anyhow::Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in runs {
        for record in &r.run.records {
            let line = LogLine {
                schema_version: SCHEMA_VERSION,
                strategy: r.strategy.clone(),
                repetition: r.repetition,
                run_seed: r.run.seed,
                record: record.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
    }
    Ok(out)
}

/// Parses a run log back into runs, in file order.
pub fn read_runs(path: &Path) -> anyhow::Result<Vec<LabelledRun>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut runs: Vec<LabelledRun> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: LogLine = serde_json::from_str(line)
            .with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if l.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: line {}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                i + 1,
                l.schema_version
            );
        }
        match runs.last_mut() {
            Some(r)
                if r.strategy == l.strategy
                    && r.repetition == l.repetition
                    && r.run.seed == l.run_seed =>
            {
                r.run.records.push(l.record)
            }
            _ => runs.push(LabelledRun {
                strategy: l.strategy,
                repetition: l.repetition,
                run: Run {
                    seed: l.run_seed,
                    records: vec![l.record],
                },
            }),
        }
    }
    Ok(runs)
}

/// Curves table with columns `strategy, iteration, labelled_size,
/// accuracy_median, accuracy_std, repetitions`.
pub fn encode_curves(curves: &[(String, Vec<CurvePoint>)]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "iteration",
        "labelled_size",
        "accuracy_median",
        "accuracy_std",
        "repetitions",
    ])?;
    for (strategy, points) in curves {
        for p in points {
            w.write_record([
                strategy.clone(),
                p.iteration.to_string(),
                p.labelled_size.to_string(),
                p.accuracy_median.to_string(),
                p.accuracy_std.to_string(),
                p.repetitions.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub iteration: usize,
    pub labelled_size: usize,
    pub accuracy_median: f64,
    pub accuracy_std: f64,
    pub repetitions: usize,
}

pub fn read_curves(path: &Path) -> anyhow::Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .map(|row| row.with_context(|| format!("parsing {}", path.display())))
        .collect()
}

/// Grid table with columns `checkpoint, trainee, selector,
/// labelled_size_median, accuracy_median, accuracy_std, repetitions`.
pub fn encode_cross_grid(cells: &[CrossCell]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "checkpoint",
        "trainee",
        "selector",
        "labelled_size_median",
        "accuracy_median",
        "accuracy_std",
        "repetitions",
    ])?;
    for c in cells {
        w.write_record([
            c.checkpoint.to_string(),
            c.trainee.as_str().to_owned(),
            c.selector.name().to_owned(),
            c.labelled_size_median.to_string(),
            c.accuracy_median.to_string(),
            c.accuracy_std.to_string(),
            c.repetitions.to_string(),
        ])?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    schema_version: u32,
    model: TrainedModel,
}

const CHECKPOINT_FORMAT: &str = "alpool-model";

/// Saves spec and weights as JSON; floats round-trip bit-exactly.
pub fn save_model(path: &Path, model: &TrainedModel) -> anyhow::Result<()> {
    let c = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        model: model.clone(),
    };
    write_atomic(path, &serde_json::to_vec(&c)?)
}

pub fn load_model(path: &Path) -> anyhow::Result<TrainedModel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let c: Checkpoint =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    if c.format != CHECKPOINT_FORMAT || c.schema_version != SCHEMA_VERSION {
        bail!(
            "{}: unsupported checkpoint {} v{}",
            path.display(),
            c.format,
            c.schema_version
        );
    }
    Ok(c.model)
}
