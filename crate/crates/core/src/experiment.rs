//! The pinned synthetic benchmark and multi-seed method comparisons.

use serde::{Deserialize, Serialize};

use crate::datagen::{corrupt_dataset, generate_splits, Dataset, GeneratorSpec};
use crate::error::Result;
use crate::method::Method;
use crate::metrics::MetricsReport;
use crate::trainer::{train, EpochDiagnostics, TrainConfig};

/// Data and training settings shared by every method in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub generator: GeneratorSpec,
    pub n_test: usize,
    pub missing_ratio: f64,
    /// Training settings; the method and seed are supplied per run.
    pub train: TrainConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::pinned()
    }
}

impl BenchmarkSpec {
    /// N = 4000 training and 4000 test samples, D = 32 features, K = 16
    /// classes, 60% of positives removed beyond the first kept one.
    pub fn pinned() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            n_test: 4000,
            missing_ratio: 0.6,
            train: TrainConfig::default(),
        }
    }

    /// Corrupted training split and fully labeled test split for `seed`.
    pub fn materialize(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let spec = GeneratorSpec {
            seed,
            ..self.generator.clone()
        };
        let (train, test) = generate_splits(&spec, self.n_test)?;
        Ok((corrupt_dataset(&train, self.missing_ratio, seed)?, test))
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig {
            method,
            seed,
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub diagnostics: Vec<EpochDiagnostics>,
}

/// Trains `method` on prepared splits and evaluates on the test split.
pub fn run_on(train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<RunResult> {
    let out = train(train_set, cfg, Some(test_set))?;
    let metrics = match out.final_metrics() {
        Some(m) => m.clone(),
        None => crate::metrics::evaluate(
            out.model.predict(test_set.features.view())?.view(),
            test_set.truth(),
            cfg.threshold,
        )?,
    };
    Ok(RunResult {
        seed: cfg.seed,
        metrics,
        diagnostics: out.diagnostics,
    })
}

pub fn run_benchmark(spec: &BenchmarkSpec, method: Method, seed: u64) -> Result<RunResult> {
    let (train_set, test_set) = spec.materialize(seed)?;
    run_on(&train_set, &test_set, &spec.train_config(method, seed))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Number of paired entries where `a` is strictly greater than `b`.
pub fn wins(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x > y).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_wins() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(wins(&[1.0, 2.0, 3.0], &[1.0, 1.0, 4.0]), 1);
    }

    #[test]
    fn materialized_splits_share_the_planted_model() {
        let spec = BenchmarkSpec {
            generator: GeneratorSpec {
                n_samples: 100,
                ..GeneratorSpec::default()
            },
            n_test: 50,
            ..BenchmarkSpec::pinned()
        };
        let (train, test) = spec.materialize(2).unwrap();
        let planted = crate::datagen::planted_model(&GeneratorSpec {
            seed: 2,
            ..spec.generator.clone()
        })
        .unwrap();
        assert_eq!(
            planted.label(train.features.view()),
            *train.true_labels.as_ref().unwrap()
        );
        assert_eq!(planted.label(test.features.view()), test.labels);
        assert_eq!(train.meta.missing_ratio, Some(0.6));
        assert_eq!(test.labels, *test.true_labels.as_ref().unwrap());
    }
}
