use std::collections::HashSet;
use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::correction::{audit_entries, CorrectionAudit, CorrectionDecision};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const N_BINS: usize = 20;

/// Label status of one entry, judged against the complete labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelStatus {
    /// Observed positive.
    LabeledPositive,
    /// True positive whose label is missing.
    Missing,
    TrueNegative,
}

impl LabelStatus {
    pub fn of(observed: u8, truth: u8) -> LabelStatus {
        match (observed, truth) {
            (1, _) => LabelStatus::LabeledPositive,
            (_, 1) => LabelStatus::Missing,
            _ => LabelStatus::TrueNegative,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelStatus::LabeledPositive => "labeled_positive",
            LabelStatus::Missing => "missing",
            LabelStatus::TrueNegative => "true_negative",
        }
    }
}

/// Bin of width 0.05 holding `p`; `p = 1` falls in the last bin.
pub fn bin_of(p: f64) -> usize {
    ((p * N_BINS as f64).floor() as usize).min(N_BINS - 1)
}

/// Counts of predicted probabilities per status and bin.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusHistogram {
    pub labeled_positive: [u64; N_BINS],
    pub missing: [u64; N_BINS],
    pub true_negative: [u64; N_BINS],
}

impl StatusHistogram {
    pub fn build(
        probs: ArrayView2<'_, f64>,
        observed: ArrayView2<'_, u8>,
        truth: ArrayView2<'_, u8>,
    ) -> Result<StatusHistogram> {
        Error::check_shape("histogram observed", probs.dim(), observed.dim())?;
        Error::check_shape("histogram truth", probs.dim(), truth.dim())?;
        let mut h = StatusHistogram::default();
        for ((&p, &o), &t) in probs.iter().zip(observed.iter()).zip(truth.iter()) {
            h.counts_mut(LabelStatus::of(o, t))[bin_of(p)] += 1;
        }
        Ok(h)
    }

    pub fn counts(&self, status: LabelStatus) -> &[u64; N_BINS] {
        match status {
            LabelStatus::LabeledPositive => &self.labeled_positive,
            LabelStatus::Missing => &self.missing,
            LabelStatus::TrueNegative => &self.true_negative,
        }
    }

    fn counts_mut(&mut self, status: LabelStatus) -> &mut [u64; N_BINS] {
        match status {
            LabelStatus::LabeledPositive => &mut self.labeled_positive,
            LabelStatus::Missing => &mut self.missing,
            LabelStatus::TrueNegative => &mut self.true_negative,
        }
    }

    pub fn total(&self) -> u64 {
        [&self.labeled_positive, &self.missing, &self.true_negative]
            .iter()
            .flat_map(|c| c.iter())
            .sum()
    }
}

pub const STATUSES: [LabelStatus; 3] = [
    LabelStatus::LabeledPositive,
    LabelStatus::Missing,
    LabelStatus::TrueNegative,
];

/// Everything recorded at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDiagnostics {
    /// 1 for ordinary training; 2 for the retraining stage of the pseudo-label method.
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    /// Entries whose positive branch saturated during the epoch.
    pub saturated: usize,
    /// False when the training set has no complete labels; histogram and
    /// audits are then absent.
    pub truth_available: bool,
    pub histogram: Option<StatusHistogram>,
    /// Observed negatives the evaluation model would correct at the end of
    /// the epoch, audited against complete labels.
    pub correction: Option<CorrectionAudit>,
    /// Audit of the per-batch corrections actually applied during the epoch.
    pub applied: Option<CorrectionAudit>,
    pub metrics: Option<MetricsReport>,
}

/// Histogram and audit of `decisions` for a model's training-set probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub histogram: Option<StatusHistogram>,
    pub audit: Option<CorrectionAudit>,
}

/// Computes the status histogram of `probs` (predictions on `ds`) and audits
/// the given decisions. Without complete labels both parts are `None`.
pub fn diagnostics_snapshot(
    probs: ArrayView2<'_, f64>,
    ds: &Dataset,
    decisions: &[CorrectionDecision],
) -> Result<Snapshot> {
    let Some(truth) = &ds.true_labels else {
        return Ok(Snapshot {
            histogram: None,
            audit: None,
        });
    };
    let histogram = StatusHistogram::build(probs, ds.labels.view(), truth.view())?;
    let entries: HashSet<(usize, usize)> = decisions.iter().map(|d| (d.sample, d.class)).collect();
    Ok(Snapshot {
        histogram: Some(histogram),
        audit: Some(audit_entries(&entries, ds.labels.view(), truth.view())),
    })
}

/// Observed negatives with probability above `tau`.
pub fn threshold_set(
    probs: ArrayView2<'_, f64>,
    observed: ArrayView2<'_, u8>,
    tau: f64,
) -> HashSet<(usize, usize)> {
    probs
        .indexed_iter()
        .filter(|&(ij, &p)| observed[ij] == 0 && p > tau)
        .map(|(ij, _)| ij)
        .collect()
}

/// Long-format CSV: one row per (epoch, status, bin) plus one row per
/// summary value.
pub fn write_diagnostics_csv(w: impl Write, diags: &[EpochDiagnostics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["stage", "epoch", "kind", "name", "bin", "value"])?;
    for d in diags {
        let (stage, epoch) = (d.stage.to_string(), d.epoch.to_string());
        let mut summary = |name: &str, value: f64| {
            out.write_record([&stage, &epoch, "summary", name, "", &value.to_string()])
        };
        summary("train_loss", d.train_loss)?;
        summary("saturated", d.saturated as f64)?;
        if let Some(a) = &d.correction {
            summary("correction_precision", a.precision)?;
            summary("correction_recall", a.recall)?;
            summary("correction_count", a.corrected as f64)?;
        }
        if let Some(a) = &d.applied {
            summary("applied_precision", a.precision)?;
            summary("applied_recall", a.recall)?;
            summary("applied_count", a.corrected as f64)?;
        }
        if let Some(m) = &d.metrics {
            summary("map", m.map)?;
            summary("cf1", m.cf1)?;
            summary("of1", m.of1)?;
        }
        if let Some(h) = &d.histogram {
            for status in STATUSES {
                for (bin, count) in h.counts(status).iter().enumerate() {
                    out.write_record([
                        stage.as_str(),
                        epoch.as_str(),
                        "hist",
                        status.name(),
                        &bin.to_string(),
                        &count.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush().map_err(|e| Error::io("diagnostics csv", e))
}

pub fn write_decisions_csv(w: impl Write, decisions: &[CorrectionDecision]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for d in decisions {
        out.serialize(d)?;
    }
    if decisions.is_empty() {
        out.write_record(["epoch", "sample", "class", "probability"])?;
    }
    out.flush().map_err(|e| Error::io("decisions csv", e))
}
