//! `alpool run | sweep | crosstrain | report`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfigFile, ResolvedData};
use crate::engine::{
    aggregate, cross_training_grid, repeat_runs, run_sweep, selector_runs, CrossTrainPlan,
    ExperimentConfig, Run, Selector, SelectorRuns, SweepAxis,
};
use crate::output::{
    encode_cross_grid, encode_curves, encode_runs, read_curves, read_runs, write_atomic,
    LabelledRun, CROSSTRAIN_FILE, CURVES_FILE, RESOLVED_CONFIG_FILE, RUNS_FILE, SELECTOR_RUNS_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "alpool", version, about = "Pool-based active learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Repeated active learning runs for every configured strategy.
    Run(CommonArgs),
    /// One set of runs per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// learning_rate, batch_size, dropout or noise_rate (overrides [sweep]).
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values (overrides [sweep]).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Trains every capacity on every capacity's selections.
    Crosstrain(CommonArgs),
    /// Summarizes the outputs in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides experiment.master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides experiment.repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Caps the number of worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn run(cli: Cli) -> anyhow::Result<String> {
    match cli.command {
        Command::Run(args) => with_jobs(args.jobs, || cmd_run(&args)),
        Command::Sweep {
            common,
            axis,
            values,
        } => with_jobs(common.jobs, || cmd_sweep(&common, axis, values)),
        Command::Crosstrain(args) => with_jobs(args.jobs, || cmd_crosstrain(&args)),
        Command::Report { out } => cmd_report(&out),
    }
}

fn with_jobs<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> anyhow::Result<T> + Send,
) -> anyhow::Result<T> {
    match jobs {
        Some(0) => bail!("--jobs must be positive"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(f),
        None => f(),
    }
}

/// Config with command-line overrides applied, and its data.
struct Prepared {
    file: RunConfigFile,
    resolved: ResolvedData,
}

fn prepare(args: &CommonArgs) -> anyhow::Result<Prepared> {
    let mut file = RunConfigFile::load(&args.config)?;
    if let Some(s) = args.seed {
        file.experiment.master_seed = s;
    }
    if let Some(r) = args.reps {
        ensure!(r > 0, "--reps must be positive");
        file.experiment.repetitions = r;
    }
    let resolved = file
        .dataset
        .resolve(file.test_split_seed())
        .context("loading dataset")?;
    Ok(Prepared { file, resolved })
}

impl Prepared {
    fn experiments(&self) -> anyhow::Result<Vec<ExperimentConfig>> {
        self.file
            .strategies
            .iter()
            .map(|s| self.file.experiment(*s, &self.resolved.data))
            .collect()
    }
}

#[derive(Serialize)]
struct Derived<'a> {
    test_split_seed: u64,
    repetition_seeds: Vec<u64>,
    pool_size: usize,
    test_size: usize,
    class_names: Option<&'a [String]>,
    sweep_value: Option<(SweepAxis, f64)>,
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    config: &'a RunConfigFile,
    derived: Derived<'a>,
}

fn write_resolved(dir: &Path, p: &Prepared, sweep_value: Option<(SweepAxis, f64)>) -> anyhow::Result<()> {
    let probe = p.experiments()?.remove(0);
    let resolved = ResolvedConfig {
        config: &p.file,
        derived: Derived {
            test_split_seed: p.file.test_split_seed(),
            repetition_seeds: (0..p.file.experiment.repetitions)
                .map(|r| probe.repetition_seed(r))
                .collect(),
            pool_size: p.resolved.data.pool.len(),
            test_size: p.resolved.data.test.len(),
            class_names: p.resolved.class_names.as_deref(),
            sweep_value,
        },
    };
    write_atomic(
        &dir.join(RESOLVED_CONFIG_FILE),
        &serde_json::to_vec_pretty(&resolved)?,
    )
}

fn label_runs(strategy: &str, runs: Vec<Run>) -> Vec<LabelledRun> {
    runs.into_iter()
        .enumerate()
        .map(|(repetition, run)| LabelledRun {
            strategy: strategy.to_owned(),
            repetition,
            run,
        })
        .collect()
}

fn write_runs(dir: &Path, runs: &[LabelledRun]) -> anyhow::Result<()> {
    let mut by_strategy: Vec<(String, Vec<Run>)> = Vec::new();
    for r in runs {
        match by_strategy.iter_mut().find(|(s, _)| *s == r.strategy) {
            Some((_, v)) => v.push(r.run.clone()),
            None => by_strategy.push((r.strategy.clone(), vec![r.run.clone()])),
        }
    }
    let curves: Vec<_> = by_strategy
        .into_iter()
        .map(|(s, v)| (s, aggregate(&v)))
        .collect();
    write_atomic(&dir.join(RUNS_FILE), &encode_runs(runs)?)?;
    write_atomic(&dir.join(CURVES_FILE), &encode_curves(&curves)?)
}

fn cmd_run(args: &CommonArgs) -> anyhow::Result<String> {
    let p = prepare(args)?;
    let experiments = p.experiments()?;
    let mut all = Vec::new();
    for config in &experiments {
        log::info!("running {} x{}", config.strategy, config.repetitions);
        all.extend(label_runs(
            config.strategy.name.as_str(),
            repeat_runs(&p.resolved.data, config)?,
        ));
    }
    write_resolved(&args.out, &p, None)?;
    write_runs(&args.out, &all)?;
    cmd_report(&args.out)
}

fn value_dir(axis: SweepAxis, value: f64) -> String {
    format!("{}={value}", axis.as_str())
}

fn cmd_sweep(
    args: &CommonArgs,
    axis: Option<SweepAxis>,
    values: Option<Vec<f64>>,
) -> anyhow::Result<String> {
    let p = prepare(args)?;
    let section = p.file.sweep.as_ref();
    let axis = axis
        .or(section.map(|s| s.axis))
        .context("no sweep axis: pass --axis or add a [sweep] section")?;
    let values = values
        .or_else(|| section.map(|s| s.values.clone()))
        .unwrap_or_default();
    ensure!(!values.is_empty(), "sweep needs at least one value");
    let experiments = p.experiments()?;
    let mut per_value: BTreeMap<usize, Vec<LabelledRun>> = BTreeMap::new();
    for config in &experiments {
        let results = run_sweep(&p.resolved.data, config, axis, &values)?;
        for (i, (_, runs)) in results.into_iter().enumerate() {
            per_value
                .entry(i)
                .or_default()
                .extend(label_runs(config.strategy.name.as_str(), runs));
        }
    }
    write_resolved(&args.out, &p, None)?;
    for (i, runs) in per_value {
        let dir = args.out.join(value_dir(axis, values[i]));
        write_resolved(&dir, &p, Some((axis, values[i])))?;
        write_runs(&dir, &runs)?;
    }
    cmd_report(&args.out)
}

fn cmd_crosstrain(args: &CommonArgs) -> anyhow::Result<String> {
    let p = prepare(args)?;
    let section = p
        .file
        .crosstrain
        .clone()
        .context("crosstrain needs a [crosstrain] section")?;
    ensure!(
        p.file.strategies.len() == 1,
        "crosstrain takes exactly one strategy, the config lists {}",
        p.file.strategies.len()
    );
    let config = p.experiments()?.remove(0);
    let plan = CrossTrainPlan {
        capacities: &section.capacities,
        checkpoints: &section.checkpoints,
    };
    let runs = selector_runs(&p.resolved.data, &config, plan)?;
    let mut labelled = Vec::new();
    for (rep, rep_runs) in runs.into_iter().enumerate() {
        for (sel, run) in rep_runs {
            labelled.push(LabelledRun {
                strategy: sel.name().to_owned(),
                repetition: rep,
                run,
            });
        }
    }
    write_resolved(&args.out, &p, None)?;
    let log = args.out.join(SELECTOR_RUNS_FILE);
    write_atomic(&log, &encode_runs(&labelled)?)?;
    // The grid is built from the persisted selections.
    let runs = load_selector_runs(&log, &section.capacities)?;
    let cells = cross_training_grid(&p.resolved.data, &config, plan, &runs)?;
    write_atomic(&args.out.join(CROSSTRAIN_FILE), &encode_cross_grid(&cells)?)?;
    cmd_report(&args.out)
}

/// Selector runs from a log written by `crosstrain`, grouped by repetition.
pub fn load_selector_runs(
    path: &Path,
    capacities: &[alpool_core::classifier::Capacity],
) -> anyhow::Result<Vec<SelectorRuns>> {
    ensure!(
        path.exists(),
        "selector runs {} not found; run `alpool crosstrain` to create them",
        path.display()
    );
    let mut selectors: Vec<Selector> = capacities.iter().map(|&c| Selector::Capacity(c)).collect();
    selectors.push(Selector::Random);
    let mut reps: BTreeMap<usize, SelectorRuns> = BTreeMap::new();
    for r in read_runs(path)? {
        let sel = selectors
            .iter()
            .copied()
            .find(|s| s.name() == r.strategy)
            .with_context(|| format!("{}: unknown selector '{}'", path.display(), r.strategy))?;
        reps.entry(r.repetition).or_default().insert(sel, r.run);
    }
    for (rep, runs) in &reps {
        for s in &selectors {
            ensure!(
                runs.contains_key(s),
                "{}: repetition {rep} has no run for selector '{}'",
                path.display(),
                s.name()
            );
        }
    }
    Ok(reps.into_values().collect())
}

fn report_dir(dir: &Path, text: &mut String) -> anyhow::Result<bool> {
    let curves_path = dir.join(CURVES_FILE);
    let grid_path = dir.join(CROSSTRAIN_FILE);
    let mut found = false;
    if curves_path.exists() {
        found = true;
        let curves = read_curves(&curves_path)?;
        let runs = read_runs(&dir.join(RUNS_FILE))?;
        writeln!(text, "== {} ==", dir.display())?;
        writeln!(
            text,
            "{:<16} {:>10} {:>14} {:>14}  terminated",
            "strategy", "iterations", "final_labelled", "final_accuracy"
        )?;
        let mut order: Vec<&str> = Vec::new();
        for c in &curves {
            if !order.contains(&c.strategy.as_str()) {
                order.push(&c.strategy);
            }
        }
        for s in order {
            let last = curves.iter().rev().find(|c| c.strategy == s).expect("present");
            let strategy_runs: Vec<&LabelledRun> = runs.iter().filter(|r| r.strategy == s).collect();
            let iterations = strategy_runs.iter().map(|r| r.run.records.len()).max().unwrap_or(0);
            let terminations: Vec<String> = strategy_runs
                .iter()
                .filter_map(|r| {
                    r.run.termination().map(|(it, t)| {
                        format!(
                            "TERMINATE at iteration {it} (repetition {}: class {} needs {}, {} left)",
                            r.repetition, t.class, t.quota, t.available
                        )
                    })
                })
                .collect();
            writeln!(
                text,
                "{:<16} {:>10} {:>14} {:>14.4}  {}",
                s,
                iterations,
                last.labelled_size,
                last.accuracy_median,
                if terminations.is_empty() {
                    "-".to_owned()
                } else {
                    terminations.join("; ")
                }
            )?;
        }
    }
    if grid_path.exists() {
        found = true;
        writeln!(text, "== {} (cross-training) ==", dir.display())?;
        let mut r = csv::Reader::from_path(&grid_path)?;
        writeln!(
            text,
            "{:>10} {:>8} {:>8} {:>10} {:>10}",
            "checkpoint", "trainee", "selector", "labelled", "accuracy"
        )?;
        for row in r.records() {
            let row = row?;
            let acc: f64 = row[4].parse()?;
            writeln!(
                text,
                "{:>10} {:>8} {:>8} {:>10} {:>10.4}",
                &row[0], &row[1], &row[2], &row[3], acc
            )?;
        }
    }
    Ok(found)
}

/// Plain-text summary of `out` and its immediate subdirectories.
pub fn cmd_report(out: &Path) -> anyhow::Result<String> {
    ensure!(out.is_dir(), "{} is not a directory", out.display());
    let mut text = String::new();
    let mut found = report_dir(out, &mut text)?;
    let mut subdirs: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        found |= report_dir(&d, &mut text)?;
    }
    ensure!(found, "no results found in {}", out.display());
    Ok(text)
}
