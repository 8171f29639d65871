//! Per-label loss kernels.
//!
//! Every kernel takes a logit `x` and returns the non-negative loss that a
//! label contributes to the total objective together with `d loss / d x`.
//! Minimizing is always the right direction: positive-branch gradients are
//! negative (push `x` up) and negative-branch gradients are positive.
//!
//! Log terms are evaluated through `softplus` so saturated sigmoids never hit
//! `ln(0)`; complements `1 - p` are computed as `sigmoid(-x)` directly.

use std::ops::{Mul, Sub};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed or ground-truth binary labels, N samples by K classes.
pub type LabelMatrix = Array2<u8>;
/// Raw model outputs before the sigmoid.
pub type LogitBatch = Array2<f64>;
/// Sigmoid outputs.
pub type ProbBatch = Array2<f64>;

/// A sigmoid output, strictly inside (0, 1) for logits of moderate size.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Probability(f64);

impl Probability {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Checked sigmoid. Rejects non-finite logits.
pub fn sigmoid(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("sigmoid of non-finite logit {x}")));
    }
    Ok(Probability(sig(x)))
}

/// Unchecked, overflow-free sigmoid.
#[inline]
pub(crate) fn sig(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, so `-ln σ(x) = softplus(-x)` and `-ln(1 - σ(x)) = softplus(x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss value and its derivative with respect to the logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: f64,
    /// Set when a margin-shifted positive probability fell into the clamp
    /// region and the value was capped instead of diverging.
    pub saturated: bool,
}

impl LossGrad {
    #[inline]
    const fn new(loss: f64, grad: f64) -> Self {
        Self {
            loss,
            grad,
            saturated: false,
        }
    }

    #[inline]
    fn scaled(self, w: f64) -> Self {
        Self {
            loss: w * self.loss,
            grad: w * self.grad,
            saturated: self.saturated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha_pos: f64,
    pub alpha_neg: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            alpha_pos: 1.0,
            alpha_neg: 1.0,
        }
    }
}

impl FocalParams {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("focal gamma", self.gamma)?;
        check_positive("focal alpha_pos", self.alpha_pos)?;
        check_positive("focal alpha_neg", self.alpha_neg)
    }
}

/// Asymmetric loss parameters. `margin` is a probability shift: the shifted
/// probability is `max(p - margin, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AslParams {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub margin: f64,
    /// Shift the positive branch as well as the negative one.
    pub margin_on_positive: bool,
    /// Smallest shifted positive probability evaluated before the positive
    /// branch saturates.
    pub positive_floor: f64,
}

impl Default for AslParams {
    fn default() -> Self {
        Self {
            gamma_pos: 0.0,
            gamma_neg: 4.0,
            margin: 0.05,
            margin_on_positive: true,
            positive_floor: 1e-4,
        }
    }
}

impl AslParams {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("asl gamma_pos", self.gamma_pos)?;
        check_nonneg("asl gamma_neg", self.gamma_neg)?;
        if self.gamma_pos > self.gamma_neg {
            return Err(Error::config(format!(
                "asl gamma_pos ({}) must not exceed gamma_neg ({})",
                self.gamma_pos, self.gamma_neg
            )));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::config(format!(
                "asl margin must lie in [0, 1), got {}",
                self.margin
            )));
        }
        if !(self.positive_floor > 0.0 && self.positive_floor < 0.5) {
            return Err(Error::config(format!(
                "asl positive_floor must lie in (0, 0.5), got {}",
                self.positive_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HillParams {
    pub lambda: f64,
}

impl Default for HillParams {
    fn default() -> Self {
        Self { lambda: 1.5 }
    }
}

impl HillParams {
    pub fn validate(&self) -> Result<()> {
        // (lambda - p) p^2 stays non-negative on (0, 1) only for lambda >= 1.
        if !(self.lambda.is_finite() && self.lambda >= 1.0) {
            return Err(Error::config(format!(
                "hill lambda must be finite and >= 1, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Focal loss on a logit shifted down by `margin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalMarginParams {
    pub margin: f64,
    pub gamma: f64,
}

impl Default for FocalMarginParams {
    fn default() -> Self {
        Self {
            margin: 1.0,
            gamma: 2.0,
        }
    }
}

impl FocalMarginParams {
    pub fn validate(&self) -> Result<()> {
        check_nonneg("focal_margin margin", self.margin)?;
        check_nonneg("focal_margin gamma", self.gamma)
    }
}

pub const DEFAULT_LS_EPSILON: f64 = 0.1;

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if (0.0..1.0).contains(&eps) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "label smoothing epsilon must lie in [0, 1), got {eps}"
        )))
    }
}

fn check_wan_weight(w: f64) -> Result<()> {
    if w > 0.0 && w <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "wan weight must lie in (0, 1], got {w}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Kernels

pub fn bce_pos(x: f64) -> LossGrad {
    LossGrad::new(softplus(-x), -sig(-x))
}

pub fn bce_neg(x: f64) -> LossGrad {
    LossGrad::new(softplus(x), sig(x))
}

fn focal_pos_raw(x: f64, gamma: f64, alpha: f64) -> LossGrad {
    let p = sig(x);
    let q = sig(-x);
    let nll = softplus(-x);
    let w = q.powf(gamma);
    LossGrad::new(alpha * w * nll, alpha * w * (-gamma * p * nll - q))
}

fn focal_neg_raw(x: f64, gamma: f64, alpha: f64) -> LossGrad {
    let p = sig(x);
    let q = sig(-x);
    let nll = softplus(x);
    let w = p.powf(gamma);
    LossGrad::new(alpha * w * nll, alpha * w * (gamma * q * nll + p))
}

/// `-α+ (1-p)^γ ln p`.
pub fn focal_pos(x: f64, params: &FocalParams) -> LossGrad {
    focal_pos_raw(x, params.gamma, params.alpha_pos)
}

/// `-α- p^γ ln(1-p)`.
pub fn focal_neg(x: f64, params: &FocalParams) -> LossGrad {
    focal_neg_raw(x, params.gamma, params.alpha_neg)
}

/// Positive asymmetric loss. With `margin_on_positive` the probability is
/// shifted like the negative branch; once the shifted probability drops to
/// `positive_floor` the value is frozen at the floor and flagged.
pub fn asl_pos(x: f64, params: &AslParams) -> LossGrad {
    let m = params.margin;
    let gamma = params.gamma_pos;
    if !params.margin_on_positive || m == 0.0 {
        return focal_pos_raw(x, gamma, 1.0);
    }
    let p = sig(x);
    let pm = p - m;
    let (p, q, pm, one_minus, saturated) = if pm <= params.positive_floor {
        let p = m + params.positive_floor;
        (
            p,
            1.0 - p,
            params.positive_floor,
            1.0 - params.positive_floor,
            true,
        )
    } else {
        let q = sig(-x);
        (p, q, pm, q + m, false)
    };
    let nll = -pm.ln();
    let w = one_minus.powf(gamma);
    let grad = -p * q * w * (gamma * nll / one_minus + 1.0 / pm);
    LossGrad {
        loss: w * nll,
        grad,
        saturated,
    }
}

/// Negative asymmetric loss `-p_m^γ- ln(1 - p_m)` with `p_m = max(p - m, 0)`.
/// Identically zero (value and gradient) for `p <= m`. Shifts within a few
/// ulps of `m` count as zero so that `x = logit(m)` clamps despite rounding.
pub fn asl_neg(x: f64, params: &AslParams) -> LossGrad {
    let m = params.margin;
    let gamma = params.gamma_neg;
    if m == 0.0 {
        return focal_neg_raw(x, gamma, 1.0);
    }
    let p = sig(x);
    let pm = p - m;
    if pm <= 4.0 * f64::EPSILON * m {
        return LossGrad::new(0.0, 0.0);
    }
    let q = sig(-x);
    let one_minus = q + m;
    let nll = if pm < 0.5 {
        -(-pm).ln_1p()
    } else {
        -one_minus.ln()
    };
    let w = pm.powf(gamma);
    let focus = if gamma > 0.0 {
        gamma * w * nll / pm
    } else {
        0.0
    };
    LossGrad::new(w * nll, p * q * (focus + w / one_minus))
}

/// `p^2`.
pub fn mse_neg(x: f64) -> LossGrad {
    let p = sig(x);
    let q = sig(-x);
    LossGrad::new(p * p, 2.0 * p * p * q)
}

/// `(λ - p) p²`, generic so the polynomial can be evaluated in extended
/// precision.
#[inline]
pub fn hill_polynomial<T>(p: T, lambda: T) -> T
where
    T: Copy + Sub<Output = T> + Mul<Output = T>,
{
    (lambda - p) * p * p
}

/// Hill loss `(λ - p) p²`; gradient `p²(1-p)(2λ - 3p)`, which for `λ = 1.5`
/// is `3p²(1-p)²`, peaking at `p = 0.5`.
pub fn hill_neg(x: f64, params: &HillParams) -> LossGrad {
    let p = sig(x);
    let q = sig(-x);
    let lambda = params.lambda;
    LossGrad::new(
        hill_polynomial(p, lambda),
        p * p * q * (2.0 * lambda - 3.0 * p),
    )
}

/// Focal positive loss evaluated at `x - margin`.
pub fn focal_margin_pos(x: f64, params: &FocalMarginParams) -> LossGrad {
    focal_pos_raw(x - params.margin, params.gamma, 1.0)
}

pub fn wan_neg(x: f64, weight: f64) -> LossGrad {
    bce_neg(x).scaled(weight)
}

fn smoothed_bce(x: f64, target: f64) -> LossGrad {
    let loss = target * softplus(-x) + (1.0 - target) * softplus(x);
    LossGrad::new(loss, sig(x) - target)
}

/// BCE against the smoothed target `1 - ε/2`.
pub fn bce_ls_pos(x: f64, epsilon: f64) -> LossGrad {
    smoothed_bce(x, 1.0 - 0.5 * epsilon)
}

/// BCE against the smoothed target `ε/2`.
pub fn bce_ls_neg(x: f64, epsilon: f64) -> LossGrad {
    smoothed_bce(x, 0.5 * epsilon)
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PositiveLoss {
    Bce,
    BceLs { epsilon: f64 },
    Focal(FocalParams),
    FocalMargin(FocalMarginParams),
    Asl(AslParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NegativeLoss {
    Bce,
    BceLs {
        epsilon: f64,
    },
    /// Down-weighted BCE. `None` resolves to `1 / (K - 1)` for K classes.
    Wan {
        #[serde(default)]
        weight: Option<f64>,
    },
    Focal(FocalParams),
    Asl(AslParams),
    Mse,
    Hill(HillParams),
}

impl PositiveLoss {
    pub fn family(&self) -> &'static str {
        match self {
            PositiveLoss::Bce => "bce",
            PositiveLoss::BceLs { .. } => "bce_ls",
            PositiveLoss::Focal(_) => "focal",
            PositiveLoss::FocalMargin(_) => "focal_margin",
            PositiveLoss::Asl(_) => "asl",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PositiveLoss::Bce => Ok(()),
            PositiveLoss::BceLs { epsilon } => check_epsilon(*epsilon),
            PositiveLoss::Focal(p) => p.validate(),
            PositiveLoss::FocalMargin(p) => p.validate(),
            PositiveLoss::Asl(p) => p.validate(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> LossGrad {
        match self {
            PositiveLoss::Bce => bce_pos(x),
            PositiveLoss::BceLs { epsilon } => bce_ls_pos(x, *epsilon),
            PositiveLoss::Focal(p) => focal_pos(x, p),
            PositiveLoss::FocalMargin(p) => focal_margin_pos(x, p),
            PositiveLoss::Asl(p) => asl_pos(x, p),
        }
    }
}

impl NegativeLoss {
    pub fn family(&self) -> &'static str {
        match self {
            NegativeLoss::Bce => "bce",
            NegativeLoss::BceLs { .. } => "bce_ls",
            NegativeLoss::Wan { .. } => "wan",
            NegativeLoss::Focal(_) => "focal",
            NegativeLoss::Asl(_) => "asl",
            NegativeLoss::Mse => "mse",
            NegativeLoss::Hill(_) => "hill",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NegativeLoss::Bce | NegativeLoss::Mse => Ok(()),
            NegativeLoss::BceLs { epsilon } => check_epsilon(*epsilon),
            NegativeLoss::Wan { weight } => weight.map_or(Ok(()), check_wan_weight),
            NegativeLoss::Focal(p) => p.validate(),
            NegativeLoss::Asl(p) => p.validate(),
            NegativeLoss::Hill(p) => p.validate(),
        }
    }

    /// Evaluates the branch. An unresolved WAN weight evaluates at unit weight;
    /// [`LossConfig::resolved`] fills it in from the class count.
    #[inline]
    pub fn eval(&self, x: f64) -> LossGrad {
        match self {
            NegativeLoss::Bce => bce_neg(x),
            NegativeLoss::BceLs { epsilon } => bce_ls_neg(x, *epsilon),
            NegativeLoss::Wan { weight } => wan_neg(x, weight.unwrap_or(1.0)),
            NegativeLoss::Focal(p) => focal_neg(x, p),
            NegativeLoss::Asl(p) => asl_neg(x, p),
            NegativeLoss::Mse => mse_neg(x),
            NegativeLoss::Hill(p) => hill_neg(x, p),
        }
    }
}

/// One positive and one negative branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub positive: PositiveLoss,
    pub negative: NegativeLoss,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            positive: PositiveLoss::Bce,
            negative: NegativeLoss::Bce,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        self.positive.validate()?;
        self.negative.validate()
    }

    /// Fills class-count dependent defaults (the WAN weight).
    pub fn resolved(&self, n_classes: usize) -> LossConfig {
        let mut out = *self;
        if let NegativeLoss::Wan { weight: None } = out.negative {
            let w = if n_classes > 1 {
                1.0 / (n_classes - 1) as f64
            } else {
                1.0
            };
            out.negative = NegativeLoss::Wan { weight: Some(w) };
        }
        out
    }

    #[inline]
    pub fn eval(&self, x: f64, label: u8) -> LossGrad {
        if label == 1 {
            self.positive.eval(x)
        } else {
            self.negative.eval(x)
        }
    }
}

/// A single branch, as plotted by the gradient analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossBranch {
    Positive(PositiveLoss),
    Negative(NegativeLoss),
}

impl LossBranch {
    pub fn name(&self) -> String {
        match self {
            LossBranch::Positive(p) => format!("{}_pos", p.family()),
            LossBranch::Negative(n) => format!("{}_neg", n.family()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossBranch::Positive(p) => p.validate(),
            LossBranch::Negative(n) => n.validate(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> LossGrad {
        match self {
            LossBranch::Positive(p) => p.eval(x),
            LossBranch::Negative(n) => n.eval(x),
        }
    }

    /// Parameters as a JSON object, empty for parameter-free branches.
    pub fn params_json(&self) -> String {
        let value = match self {
            LossBranch::Positive(p) => serde_json::to_value(p),
            LossBranch::Negative(n) => serde_json::to_value(n),
        };
        let mut value = value.expect("loss params serialize");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("family");
        }
        value.to_string()
    }
}

/// Result of [`total_loss`].
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub value: f64,
    pub grad: LogitBatch,
    /// Number of entries whose positive branch saturated.
    pub saturated: usize,
}

pub(crate) fn check_labels(labels: ArrayView2<'_, u8>) -> Result<()> {
    match labels.iter().position(|&v| v > 1) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!(
            "label value {} at flat index {i} is not binary",
            labels.iter().nth(i).copied().unwrap_or_default()
        ))),
    }
}

pub(crate) fn check_logits(logits: ArrayView2<'_, f64>) -> Result<()> {
    match logits.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!("non-finite logit at flat index {i}"))),
    }
}

/// Sum over classes and mean over samples of the per-label losses.
///
/// The reduction runs in row-major order, so the result is bit-stable.
pub fn total_loss(
    logits: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, u8>,
    cfg: &LossConfig,
) -> Result<BatchLoss> {
    Error::check_shape("total_loss", logits.dim(), labels.dim())?;
    check_labels(labels)?;
    check_logits(logits)?;
    cfg.validate()?;
    let (n, k) = logits.dim();
    let cfg = cfg.resolved(k);
    let scale = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    let mut saturated = 0;
    for ((&x, &y), g) in logits.iter().zip(labels.iter()).zip(grad.iter_mut()) {
        let lg = cfg.eval(x, y);
        value += lg.loss;
        *g = lg.grad * scale;
        saturated += usize::from(lg.saturated);
    }
    Ok(BatchLoss {
        value: value * scale,
        grad,
        saturated,
    })
}
