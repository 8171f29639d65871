//! Synthetic multi-label data from a planted linear-logit model, and removal
//! of positive labels to simulate missing annotations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_for};

/// Ground-truth model: label k is positive iff `w_k · f + b_k + noise > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedModel {
    /// K x D.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PlantedModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    /// Noise-free labels for a feature matrix.
    pub fn label(&self, features: ArrayView2<'_, f64>) -> Array2<u8> {
        let z = features.dot(&self.weights.t()) + &self.bias;
        z.mapv(|v| u8::from(v > 0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Per-class positive rate the bias is calibrated to, before rows without
    /// any positive are rejected.
    pub positive_rate: f64,
    /// Share of each class direction taken from a common direction, in [0, 1).
    /// Higher values make labels co-occur more.
    pub correlation: f64,
    /// Norm of every class weight vector.
    pub weight_scale: f64,
    /// Standard deviation of Gaussian logit noise; 0 gives separable data.
    pub noise_scale: f64,
    pub seed: u64,
    /// Draw budget per requested sample for rejecting rows with no positive.
    pub max_draws_per_sample: usize,
    /// Use these class weights and biases instead of drawing them from the seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedModel>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            n_features: 32,
            n_classes: 16,
            positive_rate: 0.15,
            correlation: 0.5,
            weight_scale: 3.0,
            noise_scale: 0.0,
            seed: 0,
            max_draws_per_sample: 64,
            planted: None,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::config("n_classes must be >= 2"));
        }
        if self.n_features < 1 || self.n_samples < 1 {
            return Err(Error::config("n_features and n_samples must be >= 1"));
        }
        if !(0.001..=0.999).contains(&self.positive_rate) {
            return Err(Error::config(format!(
                "positive_rate must lie in [0.001, 0.999], got {}",
                self.positive_rate
            )));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::config(format!(
                "correlation must lie in [0, 1), got {}",
                self.correlation
            )));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale > 0.0) {
            return Err(Error::config("weight_scale must be finite and > 0"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("noise_scale must be finite and >= 0"));
        }
        if self.max_draws_per_sample < 1 {
            return Err(Error::config("max_draws_per_sample must be >= 1"));
        }
        if let Some(p) = &self.planted {
            if p.weights.dim() != (self.n_classes, self.n_features)
                || p.bias.len() != self.n_classes
            {
                return Err(Error::config(format!(
                    "planted model is {}x{} with {} biases, spec asks for {}x{}",
                    p.weights.nrows(),
                    p.weights.ncols(),
                    p.bias.len(),
                    self.n_classes,
                    self.n_features
                )));
            }
        }
        Ok(())
    }
}

/// Draws (or returns the overridden) planted model for a spec.
pub fn planted_model(spec: &GeneratorSpec) -> Result<PlantedModel> {
    spec.validate()?;
    if let Some(p) = &spec.planted {
        return Ok(p.clone());
    }
    let (k, d) = (spec.n_classes, spec.n_features);
    let mut rng = rng_for(spec.seed, "planted");
    let normal_vec = |rng: &mut ChaCha8Rng| -> Array1<f64> {
        let v: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        v / norm
    };
    let shared = normal_vec(&mut rng);
    let (a, c) = ((1.0 - spec.correlation).sqrt(), spec.correlation.sqrt());
    let mut weights = Array2::zeros((k, d));
    for mut row in weights.rows_mut() {
        let w = normal_vec(&mut rng) * a + &shared * c;
        let norm = w.dot(&w).sqrt();
        row.assign(&(w * (spec.weight_scale / norm)));
    }
    // w·f ~ N(0, scale²) for standard normal features, so this bias gives
    // each class the requested positive rate.
    let spread = spec.weight_scale.hypot(spec.noise_scale);
    let quantile = Normal::standard().inverse_cdf(1.0 - spec.positive_rate);
    let bias = Array1::from_elem(k, -spread * quantile);
    Ok(PlantedModel { weights, bias })
}

/// Descriptive metadata carried in the dataset file header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Missing-label ratio applied to the observed labels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_features: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// Observed labels.
    pub labels: Array2<u8>,
    /// Complete labels, when known.
    pub true_labels: Option<Array2<u8>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.ncols()
    }

    /// Complete labels if present, else the observed ones.
    pub fn truth(&self) -> ArrayView2<'_, u8> {
        self.true_labels.as_ref().unwrap_or(&self.labels).view()
    }

    /// Mean number of observed positives per sample.
    pub fn avg_positives(&self) -> f64 {
        avg_positives(self.labels.view())
    }

    pub fn validate(&self) -> Result<()> {
        let (n, k) = self.labels.dim();
        if self.features.nrows() != n {
            return Err(Error::Dimension {
                context: "dataset features vs labels",
                expected: (n, self.features.ncols()),
                found: self.features.dim(),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        crate::losses::check_labels(self.labels.view())?;
        if let Some(t) = &self.true_labels {
            Error::check_shape("dataset true_labels", (n, k), t.dim())?;
            crate::losses::check_labels(t.view())?;
            if let Some(i) = (0..n).find(|&i| {
                t.row(i)
                    .iter()
                    .zip(self.labels.row(i))
                    .any(|(&t, &o)| o > t)
            }) {
                return Err(Error::Validation {
                    line: i + 1,
                    message: "observed label is positive where the true label is negative".into(),
                });
            }
        }
        Ok(())
    }
}

pub fn avg_positives(labels: ArrayView2<'_, u8>) -> f64 {
    if labels.nrows() == 0 {
        return 0.0;
    }
    labels.iter().map(|&v| f64::from(v)).sum::<f64>() / labels.nrows() as f64
}

/// Draws `spec.n_samples` fully labeled rows from the planted model using the
/// feature stream named `stream`. Rows without any positive are redrawn.
pub fn sample_split(spec: &GeneratorSpec, planted: &PlantedModel, stream: &str) -> Result<Dataset> {
    spec.validate()?;
    let (n, d, k) = (spec.n_samples, spec.n_features, spec.n_classes);
    if planted.weights.dim() != (k, d) || planted.bias.len() != k {
        return Err(Error::config(
            "planted model does not match the generator spec",
        ));
    }
    let mut rng = rng_for(spec.seed, &format!("features/{stream}"));
    let mut features = Array2::zeros((n, d));
    let mut labels = Array2::zeros((n, k));
    let budget = n.saturating_mul(spec.max_draws_per_sample);
    let mut row = Array1::zeros(d);
    let mut filled = 0;
    let mut draws = 0;
    while filled < n {
        if draws == budget {
            return Err(Error::Generation(format!(
                "only {filled} of {n} samples had a positive label after {draws} draws"
            )));
        }
        draws += 1;
        row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
        let mut z = planted.weights.dot(&row) + &planted.bias;
        if spec.noise_scale > 0.0 {
            z.mapv_inplace(|v| v + spec.noise_scale * rng.sample::<f64, _>(StandardNormal));
        }
        if z.iter().all(|&v| v <= 0.0) {
            continue;
        }
        features.row_mut(filled).assign(&row);
        labels
            .row_mut(filled)
            .iter_mut()
            .zip(z.iter())
            .for_each(|(y, &v)| *y = u8::from(v > 0.0));
        filled += 1;
    }
    Ok(Dataset {
        features,
        true_labels: Some(labels.clone()),
        labels,
        meta: DatasetMeta {
            seed: Some(spec.seed),
            missing_ratio: Some(0.0),
            n_features: Some(d),
            n_classes: Some(k),
            split: Some(stream.to_string()),
            generator: Some(spec.clone()),
        },
    })
}

/// Generates a fully labeled training split.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    sample_split(spec, &planted_model(spec)?, "train")
}

/// Training and test splits sharing one planted model but drawn from
/// independent feature streams.
pub fn generate_splits(spec: &GeneratorSpec, n_test: usize) -> Result<(Dataset, Dataset)> {
    let planted = planted_model(spec)?;
    let train = sample_split(spec, &planted, "train")?;
    let test_spec = GeneratorSpec {
        n_samples: n_test,
        ..spec.clone()
    };
    let test = sample_split(&test_spec, &planted, "test")?;
    Ok((train, test))
}

/// Number of positives kept for a sample with `n` positives at missing ratio
/// `r`: `floor(n(1-r)) + 1`, capped at `n` so that `r = 0` drops nothing.
pub fn kept_count(n: usize, r: f64) -> usize {
    // The small offset keeps products such as 10 * (1 - 0.8) = 1.9999999999999996
    // from flooring one below the exact value.
    let kept = (n as f64 * (1.0 - r) + 1e-9).floor() as usize + 1;
    kept.min(n)
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "missing ratio must lie in [0, 1], got {r}"
        )))
    }
}

/// Keeps [`kept_count`] positives per sample, chosen uniformly without
/// replacement. Each sample has its own random stream, so the outcome for a
/// sample depends only on `seed` and its index.
pub fn corrupt_missing(truth: ArrayView2<'_, u8>, r: f64, seed: u64) -> Result<Array2<u8>> {
    check_ratio(r)?;
    crate::losses::check_labels(truth)?;
    let base = derive_seed(seed, "corrupt");
    let mut out = Array2::zeros(truth.dim());
    for (i, row) in truth.rows().into_iter().enumerate() {
        let positives: Vec<usize> = row
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(j, _)| j)
            .collect();
        if positives.is_empty() {
            return Err(Error::Validation {
                line: i + 1,
                message: "sample has no positive label to keep".into(),
            });
        }
        let keep = kept_count(positives.len(), r);
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(base);
        rng.set_stream(i as u64);
        for idx in rand::seq::index::sample(&mut rng, positives.len(), keep) {
            out[[i, positives[idx]]] = 1;
        }
    }
    Ok(out)
}

/// Corrupts a dataset's complete labels; the complete labels are retained.
pub fn corrupt_dataset(ds: &Dataset, r: f64, seed: u64) -> Result<Dataset> {
    let truth = ds.truth().to_owned();
    let labels = corrupt_missing(truth.view(), r, seed)?;
    let mut meta = ds.meta.clone();
    meta.missing_ratio = Some(r);
    Ok(Dataset {
        features: ds.features.clone(),
        labels,
        true_labels: Some(truth),
        meta,
    })
}

// ---------------------------------------------------------------------------
// JSON lines

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    features: Vec<f64>,
    labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    true_labels: Option<Vec<u8>>,
}

#[derive(Serialize)]
struct Header<'a> {
    meta: &'a DatasetMeta,
}

pub fn save(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut meta = ds.meta.clone();
    meta.n_features = Some(ds.n_features());
    meta.n_classes = Some(ds.n_classes());
    let mut write_line = |value: String| writeln!(w, "{value}").map_err(|e| Error::io(path, e));
    write_line(serde_json::to_string(&Header { meta: &meta })?)?;
    for i in 0..ds.n_samples() {
        let record = Record {
            features: ds.features.row(i).to_vec(),
            labels: ds.labels.row(i).to_vec(),
            true_labels: ds.true_labels.as_ref().map(|t| t.row(i).to_vec()),
        };
        write_line(serde_json::to_string(&record)?)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut meta = DatasetMeta::default();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut truth: Vec<u8> = Vec::new();
    let mut has_truth = None;
    let mut width: Option<(usize, usize)> = None;
    let mut n = 0;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(m) = value.get("meta") {
            if n > 0 || line_no != 1 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "metadata header must be the first line".into(),
                });
            }
            meta = serde_json::from_value(m.clone()).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            continue;
        }
        let record: Record = serde_json::from_value(value).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let invalid = |message: String| Error::Validation {
            line: line_no,
            message,
        };
        let (d, k) = *width.get_or_insert((record.features.len(), record.labels.len()));
        if record.features.len() != d || record.labels.len() != k {
            return Err(invalid(format!(
                "expected {d} features and {k} labels, found {} and {}",
                record.features.len(),
                record.labels.len()
            )));
        }
        if record.features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite feature".into()));
        }
        if let Some(v) = record.labels.iter().find(|&&v| v > 1) {
            return Err(invalid(format!("label value {v} is not 0 or 1")));
        }
        match (
            &record.true_labels,
            *has_truth.get_or_insert(record.true_labels.is_some()),
        ) {
            (Some(t), true) => {
                if t.len() != k {
                    return Err(invalid(format!(
                        "expected {k} true labels, found {}",
                        t.len()
                    )));
                }
                if let Some(v) = t.iter().find(|&&v| v > 1) {
                    return Err(invalid(format!("true label value {v} is not 0 or 1")));
                }
                if record.labels.iter().zip(t).any(|(&o, &t)| o > t) {
                    return Err(invalid(
                        "observed label is positive where the true label is negative".into(),
                    ));
                }
                if t.iter().all(|&v| v == 0) {
                    return Err(invalid("sample has no true positive label".into()));
                }
                truth.extend_from_slice(t);
            }
            (None, false) => {}
            _ => {
                return Err(invalid(
                    "true_labels must be present on every record or on none".into(),
                ))
            }
        }
        features.extend(record.features);
        labels.extend(record.labels);
        n += 1;
    }
    let Some((d, k)) = width else {
        return Err(Error::Validation {
            line: 0,
            message: "dataset has no samples".into(),
        });
    };
    if meta.n_features.is_some_and(|v| v != d) || meta.n_classes.is_some_and(|v| v != k) {
        return Err(Error::Validation {
            line: 1,
            message: format!("header dimensions disagree with records ({d} features, {k} classes)"),
        });
    }
    let shape_err = |_| Error::Validation {
        line: 0,
        message: "inconsistent record widths".into(),
    };
    Ok(Dataset {
        features: Array2::from_shape_vec((n, d), features).map_err(shape_err)?,
        labels: Array2::from_shape_vec((n, k), labels).map_err(shape_err)?,
        true_labels: match has_truth {
            Some(true) => Some(Array2::from_shape_vec((n, k), truth).map_err(shape_err)?),
            _ => None,
        },
        meta,
    })
}
