use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OptimizerConfig::Adam { beta1, beta2, eps } = *self {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return Err(Error::config(
                    "adam needs beta1, beta2 in [0, 1) and eps > 0",
                ));
            }
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

/// Gradient step followed by decoupled weight decay `w <- w (1 - lr wd)` on
/// tensors flagged for decay.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .tensors()
            .iter()
            .map(|(t, _)| vec![0.0; t.len()])
            .collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model, lr: f64, weight_decay: f64) {
        self.t += 1;
        let decay = 1.0 - lr * weight_decay;
        let grads = grads.tensors();
        for (i, (param, decayed)) in model.tensors_mut().into_iter().enumerate() {
            let g = grads[i].0;
            match self.cfg {
                OptimizerConfig::Sgd => {
                    for (p, &g) in param.iter_mut().zip(g) {
                        *p -= lr * g;
                    }
                }
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (p, &g)) in param.iter_mut().zip(g).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                        *p -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
            if decayed && weight_decay != 0.0 {
                param.iter_mut().for_each(|p| *p *= decay);
            }
        }
    }
}

/// Learning rate as a function of the 1-based step.
///
/// The one-cycle schedule has `w = max(1, round(warmup_frac * T))` warmup
/// steps over `T` total. For 0-based step `s`:
///
/// * `s < w`: linear from `max_lr / div_factor` (at `s = 0`) towards `max_lr`;
/// * `s >= w`: cosine from `max_lr` (at `s = w`) to `max_lr / final_div` (at `s = T - 1`).
///
/// `max_lr` is therefore reached exactly once, at step `w + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    OneCycle {
        max_lr: f64,
        warmup_frac: f64,
        div_factor: f64,
        final_div: f64,
    },
}

impl LrSchedule {
    pub fn one_cycle(max_lr: f64) -> Self {
        LrSchedule::OneCycle {
            max_lr,
            warmup_frac: 0.02,
            div_factor: 25.0,
            final_div: 1e4,
        }
    }

    pub fn peak(&self) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle { max_lr, .. } => max_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { lr } if lr.is_finite() && lr >= 0.0 => Ok(()),
            LrSchedule::OneCycle {
                max_lr,
                warmup_frac,
                div_factor,
                final_div,
            } if max_lr.is_finite()
                && max_lr >= 0.0
                && (0.0..1.0).contains(&warmup_frac)
                && div_factor >= 1.0
                && final_div >= 1.0 =>
            {
                Ok(())
            }
            _ => Err(Error::config(format!(
                "invalid learning-rate schedule {self:?}"
            ))),
        }
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::OneCycle {
                max_lr,
                warmup_frac,
                div_factor,
                final_div,
            } => {
                if total <= 2 {
                    return max_lr;
                }
                let s = step.saturating_sub(1).min(total - 1) as f64;
                let last = (total - 1) as f64;
                let w = (warmup_frac * total as f64).round().clamp(1.0, last - 1.0);
                let start = max_lr / div_factor;
                let end = max_lr / final_div;
                if s < w {
                    start + (max_lr - start) * s / w
                } else {
                    let progress = (s - w) / (last - w);
                    end + (max_lr - end) * 0.5 * (1.0 + (PI * progress).cos())
                }
            }
        }
    }
}

/// Exponential moving average of the parameters:
/// `shadow <- d * shadow + (1 - d) * current` after every step, with
/// `d = min(decay, (1 + t) / (10 + t))` at update `t` so that short runs are
/// not dominated by the initial weights.
#[derive(Debug, Clone)]
pub struct Ema {
    pub decay: f64,
    pub shadow: Model,
    pub updates: u64,
}

impl Ema {
    pub fn new(decay: f64, model: &Model) -> Self {
        Self {
            decay,
            shadow: model.clone(),
            updates: 0,
        }
    }

    pub fn update(&mut self, model: &Model) {
        self.updates += 1;
        let t = self.updates as f64;
        let d = self.decay.min((1.0 + t) / (10.0 + t));
        let current = model.tensors();
        for (i, (s, _)) in self.shadow.tensors_mut().into_iter().enumerate() {
            for (s, &c) in s.iter_mut().zip(current[i].0) {
                *s = d * *s + (1.0 - d) * c;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::model::ModelSpec;
    use rand::SeedableRng;

    fn model() -> Model {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Model::init(ModelSpec::Linear, 3, 2, &mut rng).unwrap()
    }

    fn flat(m: &Model) -> Vec<f64> {
        m.tensors().iter().flat_map(|(t, _)| t.to_vec()).collect()
    }

    #[test]
    fn zero_gradient_decays_weights_geometrically() {
        let mut m = model();
        let init = m.clone();
        let zero = m.zeros_like();
        let mut opt = Optimizer::new(OptimizerConfig::adam(), &m);
        let (lr, wd) = (0.1, 0.01);
        for _ in 0..7 {
            opt.step(&mut m, &zero, lr, wd);
        }
        let factor = (1.0f64 - lr * wd).powi(7);
        let Model::Linear { output } = &m else {
            panic!()
        };
        let Model::Linear { output: o0 } = &init else {
            panic!()
        };
        for (a, b) in output.weight.iter().zip(o0.weight.iter()) {
            assert!((a - b * factor).abs() < 1e-15);
        }
        assert_eq!(output.bias, o0.bias);
    }

    #[test]
    fn adam_matches_scripted_recurrence() {
        // Scalar oracle with bias-corrected moments, written out longhand.
        let grads = [0.5, -1.0, 0.25, 2.0, -0.1];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        let mut model = Model::Linear {
            output: super::super::model::Layer {
                weight: ndarray::array![[1.0]],
                bias: ndarray::array![0.0],
            },
        };
        let mut opt = Optimizer::new(OptimizerConfig::adam(), &model);
        for g in grads {
            let grad = Model::Linear {
                output: super::super::model::Layer {
                    weight: ndarray::array![[g]],
                    bias: ndarray::array![0.0],
                },
            };
            opt.step(&mut model, &grad, lr, 0.0);
        }
        assert!((flat(&model)[0] - p).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let mut m = model();
        let init = m.clone();
        let mut g = m.zeros_like();
        g.tensors_mut().into_iter().for_each(|(t, _)| t.fill(3.0));
        let mut opt = Optimizer::new(OptimizerConfig::Sgd, &m);
        opt.step(&mut m, &g, 0.0, 1e-4);
        assert_eq!(m, init);
    }

    #[test]
    fn one_cycle_shape() {
        let sched = LrSchedule::one_cycle(0.01);
        let total = 1890;
        let lrs: Vec<f64> = (1..=total).map(|s| sched.lr_at(s, total)).collect();
        assert!(lrs[0] < 0.01 && lrs[total - 1] < 0.01);
        assert!((lrs[0] - 0.01 / 25.0).abs() < 1e-18);
        assert!((lrs[total - 1] - 0.01 / 1e4).abs() < 1e-18);
        assert_eq!(lrs.iter().filter(|&&l| l == 0.01).count(), 1);
        let peak = lrs.iter().position(|&l| l == 0.01).unwrap();
        assert_eq!(peak, 38);
        assert!(lrs[..=peak].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn ema_extremes() {
        let m0 = model();
        let mut m = m0.clone();
        m.tensors_mut()
            .into_iter()
            .for_each(|(t, _)| t.iter_mut().for_each(|v| *v += 1.0));
        let mut follow = Ema::new(0.0, &m0);
        follow.update(&m);
        assert_eq!(follow.shadow, m);
        // Early updates are capped by the warmup: 2/11, then 3/12.
        let mut slow = Ema::new(0.99, &m0);
        slow.update(&m);
        let first = m0.tensors()[0].0[0] + 9.0 / 11.0;
        assert!((slow.shadow.tensors()[0].0[0] - first).abs() < 1e-15);
        slow.update(&m);
        let second = (3.0 / 12.0) * first + (9.0 / 12.0) * m.tensors()[0].0[0];
        assert!((slow.shadow.tensors()[0].0[0] - second).abs() < 1e-15);
        let t = 5000.0f64;
        assert_eq!(0.99f64.min((1.0 + t) / (10.0 + t)), 0.99);
    }
}
