//! Label correction for missing positives.
//!
//! SPLC rewrites the loss of an observed negative whose predicted probability
//! exceeds `tau` into the positive-branch loss, once training is past
//! `start_epoch`. Stored labels are never mutated; each rewrite is reported as
//! a [`CorrectionDecision`] so it can be audited against ground truth.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{check_labels, check_logits, sig, BatchLoss, LossConfig, LossGrad};

pub const DEFAULT_TAU: f64 = 0.6;
pub const DEFAULT_START_EPOCH: usize = 1;
pub const DEFAULT_PSEUDO_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplcConfig {
    pub tau: f64,
    /// Correction is active strictly after this many completed epochs.
    pub start_epoch: usize,
    pub base: LossConfig,
}

impl Default for SplcConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            start_epoch: DEFAULT_START_EPOCH,
            base: LossConfig::default(),
        }
    }
}

impl SplcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!(
                "splc tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.start_epoch < 1 {
            return Err(Error::config("splc start_epoch must be >= 1"));
        }
        self.base.validate()
    }

    /// Whether an observed negative with probability `p` is treated as
    /// positive during (1-based) `epoch`.
    #[inline]
    pub fn fires(&self, p: f64, epoch: usize) -> bool {
        epoch > self.start_epoch && p > self.tau
    }
}

/// One observed negative treated as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionDecision {
    pub epoch: usize,
    pub sample: usize,
    pub class: usize,
    pub probability: f64,
}

/// Per-label SPLC loss. The flag reports whether the label was corrected.
#[inline]
pub fn splc_loss(x: f64, y: u8, epoch: usize, cfg: &SplcConfig) -> (LossGrad, bool) {
    if y == 1 {
        return (cfg.base.positive.eval(x), false);
    }
    if cfg.fires(sig(x), epoch) {
        (cfg.base.positive.eval(x), true)
    } else {
        (cfg.base.negative.eval(x), false)
    }
}

/// Batch form of [`splc_loss`] with the same reduction as
/// [`crate::losses::total_loss`]. `samples[i]` is the dataset index of row `i`.
pub fn splc_total_loss(
    logits: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, u8>,
    samples: &[usize],
    epoch: usize,
    cfg: &SplcConfig,
) -> Result<(BatchLoss, Vec<CorrectionDecision>)> {
    Error::check_shape("splc_total_loss", logits.dim(), labels.dim())?;
    if samples.len() != logits.nrows() {
        return Err(Error::Dimension {
            context: "splc_total_loss sample ids",
            expected: (logits.nrows(), 1),
            found: (samples.len(), 1),
        });
    }
    check_labels(labels)?;
    check_logits(logits)?;
    cfg.validate()?;
    let (n, k) = logits.dim();
    let cfg = SplcConfig {
        base: cfg.base.resolved(k),
        ..*cfg
    };
    let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    let mut saturated = 0;
    let mut decisions = Vec::new();
    for i in 0..n {
        for j in 0..k {
            let x = logits[[i, j]];
            let (lg, corrected) = splc_loss(x, labels[[i, j]], epoch, &cfg);
            value += lg.loss;
            grad[[i, j]] = lg.grad * scale;
            saturated += usize::from(lg.saturated);
            if corrected {
                decisions.push(CorrectionDecision {
                    epoch,
                    sample: samples[i],
                    class: j,
                    probability: sig(x),
                });
            }
        }
    }
    Ok((
        BatchLoss {
            value: value * scale,
            grad,
            saturated,
        },
        decisions,
    ))
}

/// Flips observed negatives with `probs > threshold` to positive.
pub fn pseudo_label_relabel(
    probs: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, u8>,
    threshold: f64,
) -> Result<Array2<u8>> {
    Error::check_shape("pseudo_label_relabel", labels.dim(), probs.dim())?;
    check_labels(labels)?;
    let mut out = labels.to_owned();
    for (y, &p) in out.iter_mut().zip(probs.iter()) {
        if *y == 0 && p > threshold {
            *y = 1;
        }
    }
    Ok(out)
}

/// Quality of a set of corrections against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionAudit {
    /// Fraction of corrected entries that are truly positive; 1.0 when nothing was corrected.
    pub precision: f64,
    /// Fraction of missing labels (true 1, observed 0) that were corrected.
    pub recall: f64,
    pub corrected: usize,
    pub missing: usize,
}

/// Audits decisions against the observed and true label matrices. Repeated
/// decisions for the same entry count once.
pub fn correction_audit(
    decisions: &[CorrectionDecision],
    observed: ArrayView2<'_, u8>,
    truth: ArrayView2<'_, u8>,
) -> Result<CorrectionAudit> {
    Error::check_shape("correction_audit", observed.dim(), truth.dim())?;
    let (n, k) = truth.dim();
    let mut entries = HashSet::new();
    for d in decisions {
        if d.sample >= n || d.class >= k {
            return Err(Error::Domain(format!(
                "decision ({}, {}) outside a {n}x{k} label matrix",
                d.sample, d.class
            )));
        }
        entries.insert((d.sample, d.class));
    }
    Ok(audit_entries(&entries, observed, truth))
}

pub(crate) fn audit_entries(
    entries: &HashSet<(usize, usize)>,
    observed: ArrayView2<'_, u8>,
    truth: ArrayView2<'_, u8>,
) -> CorrectionAudit {
    let missing = truth
        .iter()
        .zip(observed.iter())
        .filter(|(&t, &o)| t == 1 && o == 0)
        .count();
    let hits = entries
        .iter()
        .filter(|&&(i, j)| truth[[i, j]] == 1 && observed[[i, j]] == 0)
        .count();
    let precision = if entries.is_empty() {
        1.0
    } else {
        hits as f64 / entries.len() as f64
    };
    let recall = if missing == 0 {
        0.0
    } else {
        hits as f64 / missing as f64
    };
    CorrectionAudit {
        precision,
        recall,
        corrected: entries.len(),
        missing,
    }
}

/// Two-stage pseudo-label baseline: train, relabel observed negatives with
/// probability above `threshold`, retrain from scratch on the relabeled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub threshold: f64,
    pub base: LossConfig,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_PSEUDO_THRESHOLD,
            base: LossConfig::default(),
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config(format!(
                "pseudo-label threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        self.base.validate()
    }
}
