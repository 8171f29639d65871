//! Deterministic mini-batch training with per-epoch diagnostics.

mod diagnostics;
mod model;
mod optim;

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use diagnostics::{
    bin_of, diagnostics_snapshot, threshold_set, write_decisions_csv, write_diagnostics_csv,
    EpochDiagnostics, LabelStatus, Snapshot, StatusHistogram, N_BINS, STATUSES,
};
pub use model::{Layer, Model, ModelSpec};
pub use optim::{Ema, LrSchedule, Optimizer, OptimizerConfig};

use crate::correction::{audit_entries, pseudo_label_relabel, splc_total_loss, CorrectionDecision};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig};
use crate::method::Method;
use crate::metrics::evaluate;
use crate::seed::rng_for;

/// Initial output-layer bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasInit {
    Zero,
    /// Logit of each class's observed positive rate.
    #[default]
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    /// Decoupled decay applied to weight matrices (not biases) each step.
    pub weight_decay: f64,
    /// Shadow weights used for evaluation and diagnostics when set.
    pub ema_decay: Option<f64>,
    pub bias_init: BiasInit,
    pub seed: u64,
    /// Diagnostics every this many epochs (and always after the last); 0 disables them.
    pub diagnostics_every: usize,
    /// Prediction threshold for F1 metrics.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Linear,
            method: Method::default(),
            epochs: 30,
            batch_size: 64,
            optimizer: OptimizerConfig::adam(),
            schedule: LrSchedule::one_cycle(1e-2),
            weight_decay: 1e-4,
            ema_decay: Some(0.99),
            bias_init: BiasInit::Prior,
            seed: 0,
            diagnostics_every: 1,
            threshold: crate::metrics::DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be finite and >= 0"));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::config(format!(
                    "ema_decay must lie in [0, 1], got {d}"
                )));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold must lie in (0, 1)"));
        }
        self.optimizer.validate()?;
        self.schedule.validate()?;
        self.method.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model used for evaluation: the EMA shadow when enabled.
    pub model: Model,
    /// Raw optimizer iterate at the end of training.
    pub last: Model,
    pub diagnostics: Vec<EpochDiagnostics>,
    /// Corrections applied during training, in order.
    pub decisions: Vec<CorrectionDecision>,
}

impl TrainOutcome {
    /// Final evaluation metrics if an evaluation set was given.
    pub fn final_metrics(&self) -> Option<&crate::metrics::MetricsReport> {
        self.diagnostics.last().and_then(|d| d.metrics.as_ref())
    }
}

fn check_dataset(ds: &Dataset, what: &str) -> Result<()> {
    ds.validate()?;
    if ds.n_samples() == 0 {
        return Err(Error::config(format!("{what} set is empty")));
    }
    Ok(())
}

/// Trains a fresh model. With `eval` given, each diagnostic epoch also
/// reports metrics of the evaluation model against `eval`'s complete labels.
pub fn train(ds: &Dataset, cfg: &TrainConfig, eval: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(ds, "training")?;
    if let Some(e) = eval {
        check_dataset(e, "evaluation")?;
        if e.n_features() != ds.n_features() || e.n_classes() != ds.n_classes() {
            return Err(Error::Dimension {
                context: "evaluation set",
                expected: (e.n_samples(), ds.n_features()),
                found: (e.n_samples(), e.n_features()),
            });
        }
    }
    match cfg.method {
        Method::PseudoLabel(p) => {
            let stage_one = TrainConfig {
                method: Method::Plain(p.base),
                ..cfg.clone()
            };
            let first = run(ds, &stage_one, eval, 1)?;
            let probs = first.model.predict(ds.features.view())?;
            let relabeled = pseudo_label_relabel(probs.view(), ds.labels.view(), p.threshold)?;
            let decisions: Vec<CorrectionDecision> = relabeled
                .indexed_iter()
                .filter(|&((i, j), &v)| v != ds.labels[[i, j]])
                .map(|((i, j), _)| CorrectionDecision {
                    epoch: cfg.epochs,
                    sample: i,
                    class: j,
                    probability: probs[[i, j]],
                })
                .collect();
            let retrain = Dataset {
                labels: relabeled,
                ..ds.clone()
            };
            let mut second = run(&retrain, &stage_one, eval, 2)?;
            // Stage-two epochs see the relabeled set; the audit they carry
            // covers the relabeling itself.
            if let Some(truth) = &ds.true_labels {
                let entries = decisions.iter().map(|d| (d.sample, d.class)).collect();
                let audit = audit_entries(&entries, ds.labels.view(), truth.view());
                for d in &mut second.diagnostics {
                    d.applied = Some(audit);
                }
            }
            let mut diagnostics = first.diagnostics;
            diagnostics.extend(second.diagnostics);
            Ok(TrainOutcome {
                model: second.model,
                last: second.last,
                diagnostics,
                decisions,
            })
        }
        _ => run(ds, cfg, eval, 1),
    }
}

fn logit(q: f64) -> f64 {
    let q = q.clamp(1e-4, 1.0 - 1e-4);
    (q / (1.0 - q)).ln()
}

fn run(ds: &Dataset, cfg: &TrainConfig, eval: Option<&Dataset>, stage: u8) -> Result<TrainOutcome> {
    let (n, d, k) = (ds.n_samples(), ds.n_features(), ds.n_classes());
    let mut init_rng = rng_for(cfg.seed, "init");
    let mut model = Model::init(cfg.model, d, k, &mut init_rng)?;
    if cfg.bias_init == BiasInit::Prior {
        let rates = ds
            .labels
            .mapv(f64::from)
            .mean_axis(Axis(0))
            .expect("non-empty");
        model.output_mut().bias = rates.mapv(logit);
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, &model);
    let mut ema = cfg.ema_decay.map(|decay| Ema::new(decay, &model));
    let base: LossConfig = cfg.method.base().resolved(k);
    let splc = cfg
        .method
        .splc()
        .map(|s| crate::correction::SplcConfig { base, ..*s });
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut diagnostics = Vec::new();
    let mut decisions = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut shuffle = rng_for(cfg.seed, &format!("shuffle/{epoch}"));
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        let mut saturated = 0;
        let epoch_start = decisions.len();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = ds.features.select(Axis(0), idx);
            let y = ds.labels.select(Axis(0), idx);
            let logits = model.logits(x.view());
            let diverged = |loss: f64| Error::Diverged {
                epoch,
                batch: b + 1,
                loss,
            };
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(diverged(f64::NAN));
            }
            let batch = match &splc {
                Some(s) => {
                    let (loss, mut made) = splc_total_loss(logits.view(), y.view(), idx, epoch, s)?;
                    decisions.append(&mut made);
                    loss
                }
                None => total_loss(logits.view(), y.view(), &base)?,
            };
            if !batch.value.is_finite() {
                return Err(diverged(batch.value));
            }
            epoch_loss += batch.value * idx.len() as f64;
            saturated += batch.saturated;
            let grads = model.gradients(x.view(), &batch.grad);
            step += 1;
            let lr = cfg.schedule.lr_at(step, total_steps);
            optimizer.step(&mut model, &grads, lr, cfg.weight_decay);
            if let Some(e) = &mut ema {
                e.update(&model);
            }
        }
        let due = cfg.diagnostics_every > 0
            && (epoch % cfg.diagnostics_every == 0 || epoch == cfg.epochs);
        if due {
            let current = ema.as_ref().map_or(&model, |e| &e.shadow);
            diagnostics.push(epoch_diagnostics(EpochInputs {
                model: current,
                ds,
                eval,
                cfg,
                stage,
                epoch,
                train_loss: epoch_loss / n as f64,
                saturated,
                applied: &decisions[epoch_start..],
                tau: splc.filter(|s| epoch > s.start_epoch).map(|s| s.tau),
            })?);
        }
    }
    let last = model.clone();
    let model = ema.map_or(model, |e| e.shadow);
    Ok(TrainOutcome {
        model,
        last,
        diagnostics,
        decisions,
    })
}

struct EpochInputs<'a> {
    model: &'a Model,
    ds: &'a Dataset,
    eval: Option<&'a Dataset>,
    cfg: &'a TrainConfig,
    stage: u8,
    epoch: usize,
    train_loss: f64,
    saturated: usize,
    applied: &'a [CorrectionDecision],
    /// Correction threshold when SPLC is active this epoch.
    tau: Option<f64>,
}

fn epoch_diagnostics(inp: EpochInputs<'_>) -> Result<EpochDiagnostics> {
    let probs = inp.model.predict(inp.ds.features.view())?;
    let snap = diagnostics_snapshot(probs.view(), inp.ds, inp.applied)?;
    let correction = match (&inp.ds.true_labels, inp.tau) {
        (Some(truth), Some(tau)) => {
            let set = threshold_set(probs.view(), inp.ds.labels.view(), tau);
            Some(audit_entries(&set, inp.ds.labels.view(), truth.view()))
        }
        _ => None,
    };
    let metrics = match inp.eval {
        Some(e) => Some(evaluate(
            inp.model.predict(e.features.view())?.view(),
            e.truth(),
            inp.cfg.threshold,
        )?),
        None => None,
    };
    Ok(EpochDiagnostics {
        stage: inp.stage,
        epoch: inp.epoch,
        train_loss: inp.train_loss,
        saturated: inp.saturated,
        truth_available: inp.ds.true_labels.is_some(),
        histogram: snap.histogram,
        correction,
        applied: if inp.tau.is_some() { snap.audit } else { None },
        metrics,
    })
}

pub fn predict(model: &Model, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.predict(features)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub n_features: usize,
    pub n_classes: usize,
    pub model: Model,
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let ck = Checkpoint {
        format_version: CHECKPOINT_VERSION,
        n_features: model.n_features(),
        n_classes: model.n_classes(),
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&ck)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(Error::config(format!(
            "unsupported checkpoint version {}",
            ck.format_version
        )));
    }
    ck.model.validate()?;
    if ck.model.n_features() != ck.n_features || ck.model.n_classes() != ck.n_classes {
        return Err(Error::config(
            "checkpoint header disagrees with its weights",
        ));
    }
    Ok(ck.model)
}
