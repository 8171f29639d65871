//! Fully resolved jobs. A job holds everything needed to reproduce its
//! outputs, so a manifest that records it can be re-executed later.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use mlml_core::analysis::{gradient_curve, write_curves_csv, write_sweep_csv, GridSpec, SweepAxis};
use mlml_core::datagen::{self, Dataset, GeneratorSpec};
use mlml_core::experiment::{median, run_on, BenchmarkSpec, RunResult};
use mlml_core::losses::LossBranch;
use mlml_core::method::Method;
use mlml_core::metrics::{evaluate, MetricsReport};
use mlml_core::trainer::{self, write_decisions_csv, write_diagnostics_csv, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Synthetic data settings, the `[benchmark]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkData {
    pub generator: GeneratorSpec,
    pub n_test: usize,
    pub missing_ratio: f64,
}

impl Default for BenchmarkData {
    fn default() -> Self {
        let b = BenchmarkSpec::pinned();
        Self {
            generator: b.generator,
            n_test: b.n_test,
            missing_ratio: b.missing_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// Regenerate train and test splits per seed; the seed drives the
    /// generator, the corruption and the training run.
    Benchmark(BenchmarkData),
    Files {
        data: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    GenData {
        generator: GeneratorSpec,
        out: PathBuf,
        test_out: Option<PathBuf>,
        n_test: usize,
    },
    Corrupt {
        input: PathBuf,
        ratio: f64,
        seed: u64,
        out: PathBuf,
    },
    Train {
        data: PathBuf,
        test: Option<PathBuf>,
        config: TrainConfig,
        out_dir: PathBuf,
    },
    Eval {
        checkpoint: PathBuf,
        data: PathBuf,
        threshold: f64,
        out: PathBuf,
    },
    GradCurves {
        losses: Vec<String>,
        grid: GridSpec,
        out: PathBuf,
    },
    Compare {
        source: Source,
        methods: Vec<Method>,
        seeds: Vec<u64>,
        train: TrainConfig,
        out: PathBuf,
    },
    Sweep {
        source: Source,
        axis: SweepAxis,
        values: Vec<f64>,
        method: Method,
        seeds: Vec<u64>,
        train: TrainConfig,
        out: PathBuf,
    },
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::GenData { .. } => "gen-data",
            Job::Corrupt { .. } => "corrupt",
            Job::Train { .. } => "train",
            Job::Eval { .. } => "eval",
            Job::GradCurves { .. } => "grad-curves",
            Job::Compare { .. } => "compare",
            Job::Sweep { .. } => "sweep",
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Job::GenData { generator, .. } => vec![generator.seed],
            Job::Corrupt { seed, .. } => vec![*seed],
            Job::Train { config, .. } => vec![config.seed],
            Job::Compare { seeds, .. } | Job::Sweep { seeds, .. } => seeds.clone(),
            Job::Eval { .. } | Job::GradCurves { .. } => vec![],
        }
    }

    /// Result files, in the order they are written.
    pub fn artifacts(&self) -> Vec<PathBuf> {
        match self {
            Job::GenData { out, test_out, .. } => std::iter::once(out.clone())
                .chain(test_out.clone())
                .collect(),
            Job::Train { out_dir, .. } => TRAIN_OUTPUTS.iter().map(|f| out_dir.join(f)).collect(),
            Job::Corrupt { out, .. }
            | Job::Eval { out, .. }
            | Job::GradCurves { out, .. }
            | Job::Compare { out, .. }
            | Job::Sweep { out, .. } => vec![out.clone()],
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Job::Train { out_dir, .. } => out_dir.join("manifest.json"),
            _ => {
                let out = &self.artifacts()[0];
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                out.with_file_name(name)
            }
        }
    }

    /// Creates the directories the outputs go into.
    pub fn prepare(&self) -> Result<()> {
        let dirs: Vec<PathBuf> = match self {
            Job::Train { out_dir, .. } => vec![out_dir.clone()],
            _ => self
                .artifacts()
                .iter()
                .filter_map(|p| p.parent().map(Path::to_path_buf))
                .collect(),
        };
        for d in dirs.iter().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(d).map_err(|e| mlml_core::Error::Io {
                path: d.clone(),
                source: e,
            })?;
        }
        Ok(())
    }

    /// Runs the job and returns a short JSON summary for the manifest.
    pub fn execute(&self, jobs: usize) -> Result<Value> {
        match self {
            Job::GenData {
                generator,
                out,
                test_out,
                n_test,
            } => gen_data(generator, out, test_out.as_deref(), *n_test),
            Job::Corrupt {
                input,
                ratio,
                seed,
                out,
            } => corrupt(input, *ratio, *seed, out),
            Job::Train {
                data,
                test,
                config,
                out_dir,
            } => train(data, test.as_deref(), config, out_dir),
            Job::Eval {
                checkpoint,
                data,
                threshold,
                out,
            } => eval(checkpoint, data, *threshold, out),
            Job::GradCurves { losses, grid, out } => grad_curves(losses, grid, out),
            Job::Compare {
                source,
                methods,
                seeds,
                train,
                out,
            } => compare(source, methods, seeds, train, out, jobs),
            Job::Sweep {
                source,
                axis,
                values,
                method,
                seeds,
                train,
                out,
            } => sweep(source, *axis, values, method, seeds, train, out, jobs),
        }
    }
}

pub const TRAIN_OUTPUTS: [&str; 4] = [
    "checkpoint.json",
    "diagnostics.csv",
    "decisions.csv",
    "metrics.json",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| mlml_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| mlml_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load(path: &Path) -> Result<Dataset> {
    Ok(datagen::load(path)?)
}

fn gen_data(
    spec: &GeneratorSpec,
    out: &Path,
    test_out: Option<&Path>,
    n_test: usize,
) -> Result<Value> {
    let (train, test) = match test_out {
        Some(_) => {
            let (a, b) = datagen::generate_splits(spec, n_test)?;
            (a, Some(b))
        }
        None => (datagen::generate(spec)?, None),
    };
    datagen::save(out, &train)?;
    if let (Some(path), Some(test)) = (test_out, &test) {
        datagen::save(path, test)?;
    }
    Ok(json!({
        "n_samples": train.n_samples(),
        "n_test": test.as_ref().map(Dataset::n_samples),
        "avg_positives": train.avg_positives(),
    }))
}

fn corrupt(input: &Path, ratio: f64, seed: u64, out: &Path) -> Result<Value> {
    let ds = load(input)?;
    let corrupted = datagen::corrupt_dataset(&ds, ratio, seed)?;
    datagen::save(out, &corrupted)?;
    Ok(json!({
        "n_samples": ds.n_samples(),
        "avg_positives_before": datagen::avg_positives(ds.truth()),
        "avg_positives_after": corrupted.avg_positives(),
    }))
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    /// "test" or "train_complete_labels" or "train_observed_labels".
    evaluated_on: &'a str,
    metrics: &'a MetricsReport,
}

fn train(data: &Path, test: Option<&Path>, cfg: &TrainConfig, out_dir: &Path) -> Result<Value> {
    let ds = load(data)?;
    let test_set = test.map(load).transpose()?;
    let outcome = trainer::train(&ds, cfg, test_set.as_ref())?;
    let (evaluated_on, metrics) = match (&test_set, outcome.final_metrics()) {
        (Some(_), Some(m)) => ("test", m.clone()),
        (Some(t), None) => (
            "test",
            evaluate(
                outcome.model.predict(t.features.view())?.view(),
                t.truth(),
                cfg.threshold,
            )?,
        ),
        (None, _) => {
            let p = outcome.model.predict(ds.features.view())?;
            let on = if ds.true_labels.is_some() {
                "train_complete_labels"
            } else {
                "train_observed_labels"
            };
            (on, evaluate(p.view(), ds.truth(), cfg.threshold)?)
        }
    };
    let [ck, diag, dec, met] = TRAIN_OUTPUTS.map(|f| out_dir.join(f));
    trainer::save_checkpoint(&ck, &outcome.model)?;
    write_diagnostics_csv(create(&diag)?, &outcome.diagnostics)?;
    write_decisions_csv(create(&dec)?, &outcome.decisions)?;
    write_json(
        &met,
        &MetricsFile {
            evaluated_on,
            metrics: &metrics,
        },
    )?;
    let last = outcome.diagnostics.last();
    Ok(json!({
        "evaluated_on": evaluated_on,
        "map": metrics.map,
        "cf1": metrics.cf1,
        "of1": metrics.of1,
        "decisions": outcome.decisions.len(),
        "final_train_loss": last.map(|d| d.train_loss),
        "final_correction": last.and_then(|d| d.correction),
    }))
}

fn eval(checkpoint: &Path, data: &Path, threshold: f64, out: &Path) -> Result<Value> {
    let model = trainer::load_checkpoint(checkpoint)?;
    let ds = load(data)?;
    let probs = trainer::predict(&model, ds.features.view())?;
    let metrics = evaluate(probs.view(), ds.truth(), threshold)?;
    let on = if ds.true_labels.is_some() {
        "complete_labels"
    } else {
        "observed_labels"
    };
    write_json(
        out,
        &MetricsFile {
            evaluated_on: on,
            metrics: &metrics,
        },
    )?;
    Ok(json!({ "map": metrics.map, "cf1": metrics.cf1, "of1": metrics.of1 }))
}

pub const DEFAULT_CURVES: [&str; 8] = [
    "bce_neg",
    "focal_neg",
    "asl_neg",
    "mse_neg",
    "hill_neg",
    "bce_pos",
    "focal_pos",
    "focal_margin_pos",
];

fn grad_curves(losses: &[String], grid: &GridSpec, out: &Path) -> Result<Value> {
    let curves = losses
        .iter()
        .map(|s| {
            let b: LossBranch = s.parse()?;
            gradient_curve(&b, grid)
        })
        .collect::<mlml_core::Result<Vec<_>>>()?;
    write_curves_csv(create(out)?, &curves)?;
    Ok(json!({ "curves": curves.len(), "points": grid.points }))
}

/// Training and test splits for one seed.
fn splits(
    source: &Source,
    seed: u64,
    files: &Option<(Dataset, Dataset)>,
) -> Result<(Dataset, Dataset)> {
    match (source, files) {
        (Source::Files { .. }, Some((a, b))) => Ok((a.clone(), b.clone())),
        (Source::Benchmark(b), _) => {
            let spec = BenchmarkSpec {
                generator: b.generator.clone(),
                n_test: b.n_test,
                missing_ratio: b.missing_ratio,
                train: TrainConfig::default(),
            };
            Ok(spec.materialize(seed)?)
        }
        (Source::Files { .. }, None) => unreachable!("files are loaded up front"),
    }
}

/// Runs every `(method, seed)` pair; results come back in input order
/// regardless of the thread count.
fn run_grid(
    source: &Source,
    methods: &[Method],
    seeds: &[u64],
    train: &TrainConfig,
    jobs: usize,
) -> Result<Vec<Vec<RunResult>>> {
    let files = match source {
        Source::Files { data, test } => Some((load(data)?, load(test)?)),
        Source::Benchmark(_) => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building thread pool")?;
    pool.install(|| {
        let data: Vec<(Dataset, Dataset)> = seeds
            .par_iter()
            .map(|&s| splits(source, s, &files))
            .collect::<Result<_>>()?;
        let tasks: Vec<(usize, usize)> = (0..methods.len())
            .flat_map(|m| (0..seeds.len()).map(move |s| (m, s)))
            .collect();
        let results: Vec<RunResult> = tasks
            .par_iter()
            .map(|&(m, s)| {
                let cfg = TrainConfig {
                    method: methods[m],
                    seed: seeds[s],
                    ..train.clone()
                };
                let r = run_on(&data[s].0, &data[s].1, &cfg)
                    .with_context(|| format!("method {} seed {}", methods[m], seeds[s]))?;
                eprintln!(
                    "{} seed={} map={:.4} cf1={:.4} of1={:.4}",
                    methods[m], seeds[s], r.metrics.map, r.metrics.cf1, r.metrics.of1
                );
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let mut it = results.into_iter();
        Ok(methods
            .iter()
            .map(|_| it.by_ref().take(seeds.len()).collect())
            .collect())
    })
}

#[derive(Serialize)]
struct CompareRow<'a> {
    method: &'a str,
    seed: u64,
    map: f64,
    cf1: f64,
    of1: f64,
    cp: f64,
    cr: f64,
    op: f64,
    or: f64,
}

fn compare(
    source: &Source,
    methods: &[Method],
    seeds: &[u64],
    train: &TrainConfig,
    out: &Path,
    jobs: usize,
) -> Result<Value> {
    let results = run_grid(source, methods, seeds, train, jobs)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    let mut summary = Vec::new();
    for (method, runs) in methods.iter().zip(&results) {
        let name = method.to_string();
        for r in runs {
            let m = &r.metrics;
            w.serialize(CompareRow {
                method: &name,
                seed: r.seed,
                map: m.map,
                cf1: m.cf1,
                of1: m.of1,
                cp: m.cp,
                cr: m.cr,
                op: m.op,
                or: m.or_,
            })?;
        }
        let col = |f: fn(&MetricsReport) -> f64| {
            median(&runs.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        summary.push(json!({
            "method": name,
            "median_map": col(|m| m.map),
            "median_cf1": col(|m| m.cf1),
            "median_of1": col(|m| m.of1),
        }));
    }
    w.flush()
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(Value::Array(summary))
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    source: &Source,
    axis: SweepAxis,
    values: &[f64],
    method: &Method,
    seeds: &[u64],
    train: &TrainConfig,
    out: &Path,
    jobs: usize,
) -> Result<Value> {
    let methods = values
        .iter()
        .map(|&v| axis.apply(method, v))
        .collect::<mlml_core::Result<Vec<_>>>()?;
    let results = run_grid(source, &methods, seeds, train, jobs)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (&value, runs) in values.iter().zip(&results) {
        rows.extend(
            runs.iter()
                .map(|r| mlml_core::analysis::sweep_row(axis, value, r)),
        );
        summary.push(json!({
            "value": value,
            "median_map": median(&runs.iter().map(|r| r.metrics.map).collect::<Vec<_>>()),
        }));
    }
    write_sweep_csv(create(out)?, &rows)?;
    Ok(Value::Array(summary))
}
