//! Turns parsed flags into jobs. Flags win over the config file, which wins
//! over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mlml_core::analysis::GridSpec;
use mlml_core::correction::{SplcConfig, DEFAULT_START_EPOCH, DEFAULT_TAU};
use mlml_core::method::Method;
use mlml_core::trainer::{LrSchedule, ModelSpec, TrainConfig};
use mlml_core::Error;
use serde::Deserialize;

use crate::args::*;
use crate::job::{BenchmarkData, Job, Source, DEFAULT_CURVES};

/// Layout of `--config` files.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub train: TrainConfig,
    pub benchmark: BenchmarkData,
}

/// Raised for flag values clap accepts but the command cannot use.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn read_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).with_context(|| format!("config file {}", path.display()))
}

/// Absolute form of a path so manifests can be re-run from anywhere.
fn abs(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn parse_model(s: &str) -> Result<ModelSpec> {
    match s.split_once(':') {
        None if s == "linear" => Ok(ModelSpec::Linear),
        Some(("mlp", h)) => {
            let hidden = h
                .parse()
                .map_err(|_| usage(format!("bad hidden width in --model {s:?}")))?;
            Ok(ModelSpec::Mlp { hidden })
        }
        _ => Err(usage(format!(
            "--model must be linear or mlp:HIDDEN, got {s:?}"
        ))),
    }
}

fn apply_train_flags(cfg: &mut TrainConfig, f: &TrainFlags) -> Result<()> {
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.batch_size {
        cfg.batch_size = v;
    }
    if let Some(lr) = f.lr {
        match &mut cfg.schedule {
            LrSchedule::Constant { lr: l } => *l = lr,
            LrSchedule::OneCycle { max_lr, .. } => *max_lr = lr,
        }
    }
    if let Some(v) = f.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = f.ema_decay {
        cfg.ema_decay = Some(v);
    }
    if f.no_ema {
        cfg.ema_decay = None;
    }
    if let Some(m) = &f.model {
        cfg.model = parse_model(m)?;
    }
    if let Some(v) = f.threshold {
        cfg.threshold = v;
    }
    Ok(())
}

fn apply_splc_flags(method: Method, f: &SplcFlags) -> Result<Method> {
    if !(f.splc || f.tau.is_some() || f.start_epoch.is_some()) {
        return Ok(method);
    }
    let mut s = match method {
        Method::Splc(s) => s,
        Method::Plain(base) => SplcConfig {
            tau: DEFAULT_TAU,
            start_epoch: DEFAULT_START_EPOCH,
            base,
        },
        Method::PseudoLabel(_) => {
            return Err(
                Error::InvalidConfig("SPLC flags cannot be combined with +pseudo".into()).into(),
            )
        }
    };
    if let Some(t) = f.tau {
        s.tau = t;
    }
    if let Some(e) = f.start_epoch {
        s.start_epoch = e;
    }
    Ok(Method::Splc(s))
}

fn parse_seeds(items: &[String]) -> Result<Vec<u64>> {
    if items.is_empty() {
        return Ok((0..10).collect());
    }
    let mut out = Vec::new();
    for item in items {
        let bad = || usage(format!("bad seed {item:?}; use N or A..B"));
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) =
                    (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a >= b {
                    return Err(bad());
                }
                out.extend(a..b);
            }
            None => out.push(item.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

fn source(f: &SourceFlags, cfg: &ConfigFile) -> Result<Source> {
    Ok(match (&f.data, &f.test) {
        (Some(d), Some(t)) => Source::Files {
            data: abs(d)?,
            test: abs(t)?,
        },
        _ => Source::Benchmark(cfg.benchmark.clone()),
    })
}

fn validated(job: Job) -> Result<Job> {
    match &job {
        Job::GenData { generator, .. } => generator.validate()?,
        Job::Corrupt { ratio, .. } => {
            if !(0.0..=1.0).contains(ratio) {
                return Err(Error::InvalidConfig(format!(
                    "--ratio must lie in [0, 1], got {ratio}"
                ))
                .into());
            }
        }
        Job::Train { config, .. } => config.validate()?,
        Job::Eval { threshold, .. } => {
            if !(*threshold > 0.0 && *threshold < 1.0) {
                return Err(Error::InvalidConfig("threshold must lie in (0, 1)".into()).into());
            }
        }
        Job::GradCurves { grid, .. } => {
            grid.values()?;
        }
        Job::Compare { train, methods, .. } => {
            for m in methods {
                TrainConfig {
                    method: *m,
                    ..train.clone()
                }
                .validate()?;
            }
        }
        Job::Sweep { train, method, .. } => TrainConfig {
            method: *method,
            ..train.clone()
        }
        .validate()?,
    }
    if let Job::Compare { seeds, .. } | Job::Sweep { seeds, .. } = &job {
        if seeds.is_empty() {
            bail!(usage("no seeds given"));
        }
    }
    Ok(job)
}

pub fn resolve(cmd: &Command) -> Result<Job> {
    let job = match cmd {
        Command::GenData(a) => {
            let file = read_config(a.config.as_deref())?;
            let mut g = file.benchmark.generator;
            let set = |dst: &mut _, v: Option<_>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            set(&mut g.n_samples, a.n_samples);
            set(&mut g.n_features, a.features);
            set(&mut g.n_classes, a.classes);
            let setf = |dst: &mut f64, v: Option<f64>| {
                if let Some(v) = v {
                    *dst = v;
                }
            };
            setf(&mut g.positive_rate, a.positive_rate);
            setf(&mut g.correlation, a.correlation);
            setf(&mut g.weight_scale, a.weight_scale);
            setf(&mut g.noise_scale, a.noise);
            if let Some(s) = a.seed {
                g.seed = s;
            }
            Job::GenData {
                generator: g,
                out: abs(&a.out)?,
                test_out: a.test_out.as_deref().map(abs).transpose()?,
                n_test: a.n_test.unwrap_or(file.benchmark.n_test),
            }
        }
        Command::Corrupt(a) => Job::Corrupt {
            input: abs(&a.input)?,
            ratio: a.ratio,
            seed: a.seed,
            out: abs(&a.out)?,
        },
        Command::Train(a) => {
            let file = read_config(a.train.config.as_deref())?;
            let mut config = file.train;
            apply_train_flags(&mut config, &a.train)?;
            if let Some(l) = &a.loss {
                config.method = l.parse()?;
            }
            config.method = apply_splc_flags(config.method, &a.splc)?;
            if let Some(s) = a.seed {
                config.seed = s;
            }
            Job::Train {
                data: abs(&a.data)?,
                test: a.test.as_deref().map(abs).transpose()?,
                config,
                out_dir: abs(&a.out)?,
            }
        }
        Command::Eval(a) => Job::Eval {
            checkpoint: abs(&a.checkpoint)?,
            data: abs(&a.data)?,
            threshold: a.threshold,
            out: abs(&a.out)?,
        },
        Command::GradCurves(a) => Job::GradCurves {
            losses: if a.losses.is_empty() {
                DEFAULT_CURVES.iter().map(|s| s.to_string()).collect()
            } else {
                a.losses.clone()
            },
            grid: GridSpec {
                points: a.points,
                lo: a.lo,
                hi: a.hi,
            },
            out: abs(&a.out)?,
        },
        Command::Compare(a) => {
            let file = read_config(a.train.config.as_deref())?;
            let mut train = file.train.clone();
            apply_train_flags(&mut train, &a.train)?;
            Job::Compare {
                source: source(&a.source, &file)?,
                methods: a
                    .losses
                    .iter()
                    .map(|s| s.parse())
                    .collect::<mlml_core::Result<_>>()?,
                seeds: parse_seeds(&a.seeds.seeds)?,
                train,
                out: abs(&a.out)?,
            }
        }
        Command::Sweep(a) => {
            let path = a.base_config.as_deref().or(a.train.config.as_deref());
            let file = read_config(path)?;
            let mut train = file.train.clone();
            apply_train_flags(&mut train, &a.train)?;
            let mut method = train.method;
            if let Some(l) = &a.loss {
                method = l.parse()?;
            }
            let method = apply_splc_flags(method, &a.splc)?;
            Job::Sweep {
                source: source(&a.source, &file)?,
                axis: a.axis.parse()?,
                values: a.values.clone(),
                method,
                seeds: parse_seeds(&a.seeds.seeds)?,
                train,
                out: abs(&a.out)?,
            }
        }
        Command::Rerun(_) => unreachable!("rerun is handled by the caller"),
    };
    validated(job)
}
