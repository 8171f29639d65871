use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    Linear,
    /// One hidden rectifier layer.
    Mlp { hidden: usize },
}

/// Affine map `x W^T + b` with `W` of shape out x in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Layer {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Layer {
            weight: Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Gradient of the layer parameters given the layer input and the
    /// gradient at its output.
    fn grads(x: ArrayView2<'_, f64>, dout: &Array2<f64>) -> Layer {
        Layer {
            weight: dout.t().dot(&x),
            bias: dout.sum_axis(Axis(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear { output: Layer },
    Mlp { hidden: Layer, output: Layer },
}

impl Model {
    pub fn init(
        spec: ModelSpec,
        n_features: usize,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        if n_features == 0 || n_classes == 0 {
            return Err(Error::config(
                "model needs at least one feature and one class",
            ));
        }
        Ok(match spec {
            ModelSpec::Linear => Model::Linear {
                output: Layer::init(n_features, n_classes, rng),
            },
            ModelSpec::Mlp { hidden } => {
                if hidden == 0 {
                    return Err(Error::config("hidden width must be >= 1"));
                }
                let h = Layer::init(n_features, hidden, rng);
                let o = Layer::init(hidden, n_classes, rng);
                Model::Mlp {
                    hidden: h,
                    output: o,
                }
            }
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Linear { .. } => ModelSpec::Linear,
            Model::Mlp { hidden, .. } => ModelSpec::Mlp {
                hidden: hidden.weight.nrows(),
            },
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Linear { output } => output.weight.ncols(),
            Model::Mlp { hidden, .. } => hidden.weight.ncols(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.output().weight.nrows()
    }

    pub fn output(&self) -> &Layer {
        match self {
            Model::Linear { output } | Model::Mlp { output, .. } => output,
        }
    }

    pub fn output_mut(&mut self) -> &mut Layer {
        match self {
            Model::Linear { output } | Model::Mlp { output, .. } => output,
        }
    }

    /// Checks internal shape agreement, e.g. after loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        let check = |l: &Layer| {
            if l.bias.len() == l.weight.nrows() {
                Ok(())
            } else {
                Err(Error::config(
                    "layer bias length differs from its output width",
                ))
            }
        };
        match self {
            Model::Linear { output } => check(output)?,
            Model::Mlp { hidden, output } => {
                check(hidden)?;
                check(output)?;
                if output.weight.ncols() != hidden.weight.nrows() {
                    return Err(Error::config("hidden and output layer widths disagree"));
                }
            }
        }
        if self
            .tensors()
            .iter()
            .any(|(t, _)| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::config("model has non-finite parameters"));
        }
        Ok(())
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features() {
            return Err(Error::Dimension {
                context: "model input",
                expected: (x.nrows(), self.n_features()),
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// Logits, N x K.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.logits(x))
    }

    pub(crate) fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            Model::Linear { output } => output.apply(x),
            Model::Mlp { hidden, output } => {
                let h = hidden.apply(x).mapv(|v| v.max(0.0));
                output.apply(h.view())
            }
        }
    }

    /// Sigmoid of the logits.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.mapv(sig))
    }

    /// Parameter gradients given `d loss / d logits`, returned as a model of
    /// identical shape.
    pub fn gradients(&self, x: ArrayView2<'_, f64>, dlogits: &Array2<f64>) -> Model {
        match self {
            Model::Linear { .. } => Model::Linear {
                output: Layer::grads(x, dlogits),
            },
            Model::Mlp { hidden, output } => {
                let pre = hidden.apply(x);
                let act = pre.mapv(|v| v.max(0.0));
                let out = Layer::grads(act.view(), dlogits);
                let mut dh = dlogits.dot(&output.weight);
                dh.zip_mut_with(&pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                Model::Mlp {
                    hidden: Layer::grads(x, &dh),
                    output: out,
                }
            }
        }
    }

    pub fn zeros_like(&self) -> Model {
        match self {
            Model::Linear { output } => Model::Linear {
                output: output.zeros_like(),
            },
            Model::Mlp { hidden, output } => Model::Mlp {
                hidden: hidden.zeros_like(),
                output: output.zeros_like(),
            },
        }
    }

    /// Parameter tensors in a fixed order, each flagged with whether weight
    /// decay applies (weights yes, biases no).
    pub fn tensors(&self) -> Vec<(&[f64], bool)> {
        fn layer(l: &Layer) -> [(&[f64], bool); 2] {
            [
                (l.weight.as_slice().expect("standard layout"), true),
                (l.bias.as_slice().expect("standard layout"), false),
            ]
        }
        match self {
            Model::Linear { output } => layer(output).to_vec(),
            Model::Mlp { hidden, output } => {
                let mut v = layer(hidden).to_vec();
                v.extend(layer(output));
                v
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        fn layer(l: &mut Layer) -> [(&mut [f64], bool); 2] {
            [
                (l.weight.as_slice_mut().expect("standard layout"), true),
                (l.bias.as_slice_mut().expect("standard layout"), false),
            ]
        }
        match self {
            Model::Linear { output } => layer(output).into_iter().collect(),
            Model::Mlp { hidden, output } => {
                let mut v: Vec<_> = layer(hidden).into_iter().collect();
                v.extend(layer(output));
                v
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }
}
