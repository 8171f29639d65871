//! Training methods: a loss pair, optionally wrapped in SPLC or the two-stage
//! pseudo-label procedure, plus the compact text form used on the command line.
//!
//! Grammar:
//!
//! ```text
//! method   := base ("+" modifier)*
//! base     := preset (":" key "=" value)*
//!           | "pos=" branch "," "neg=" branch   (either order)
//! branch   := family (":" key "=" value)*
//! modifier := "splc" (":" ("tau" | "start") "=" value)*
//!           | "pseudo" (":" "thr" "=" value)*
//! ```
//!
//! Preset keys are applied to every branch that has that parameter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::correction::{PseudoLabelConfig, SplcConfig, DEFAULT_PSEUDO_THRESHOLD};
use crate::error::{Error, Result};
use crate::losses::{
    AslParams, FocalMarginParams, FocalParams, HillParams, LossBranch, LossConfig, NegativeLoss,
    PositiveLoss, DEFAULT_LS_EPSILON,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Plain(LossConfig),
    Splc(SplcConfig),
    PseudoLabel(PseudoLabelConfig),
}

impl Default for Method {
    fn default() -> Self {
        Method::Plain(LossConfig::default())
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("bce", "binary cross-entropy on both branches"),
    ("focal", "focal loss, gamma=2, on both branches"),
    (
        "asl",
        "asymmetric loss: gamma_pos=0, gamma_neg=4, m=0.05 on negatives",
    ),
    (
        "hill",
        "focal margin positives (m=1, gamma=2) + Hill negatives (lambda=1.5)",
    ),
    (
        "focal_margin",
        "focal margin positives (m=1, gamma=2) + BCE negatives",
    ),
    ("mse", "BCE positives + squared-probability negatives"),
    ("wan", "BCE positives + negatives down-weighted by 1/(K-1)"),
    ("bce_ls", "BCE with two-sided label smoothing, eps=0.1"),
];

impl Method {
    pub fn base(&self) -> &LossConfig {
        match self {
            Method::Plain(c) => c,
            Method::Splc(s) => &s.base,
            Method::PseudoLabel(p) => &p.base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Method::Plain(c) => c.validate(),
            Method::Splc(s) => s.validate(),
            Method::PseudoLabel(p) => p.validate(),
        }
    }

    pub fn splc(&self) -> Option<&SplcConfig> {
        match self {
            Method::Splc(s) => Some(s),
            _ => None,
        }
    }

    pub fn with_base(&self, base: LossConfig) -> Method {
        match *self {
            Method::Plain(_) => Method::Plain(base),
            Method::Splc(s) => Method::Splc(SplcConfig { base, ..s }),
            Method::PseudoLabel(p) => Method::PseudoLabel(PseudoLabelConfig { base, ..p }),
        }
    }
}

pub fn preset(name: &str) -> Option<LossConfig> {
    let focal = FocalParams::default();
    let fm = FocalMarginParams::default();
    let (positive, negative) = match name {
        "bce" => (PositiveLoss::Bce, NegativeLoss::Bce),
        "focal" => (PositiveLoss::Focal(focal), NegativeLoss::Focal(focal)),
        "asl" => {
            let p = AslParams {
                margin_on_positive: false,
                ..AslParams::default()
            };
            (PositiveLoss::Asl(p), NegativeLoss::Asl(p))
        }
        "hill" => (
            PositiveLoss::FocalMargin(fm),
            NegativeLoss::Hill(HillParams::default()),
        ),
        "focal_margin" => (PositiveLoss::FocalMargin(fm), NegativeLoss::Bce),
        "mse" => (PositiveLoss::Bce, NegativeLoss::Mse),
        "wan" => (PositiveLoss::Bce, NegativeLoss::Wan { weight: None }),
        "bce_ls" => (
            PositiveLoss::BceLs {
                epsilon: DEFAULT_LS_EPSILON,
            },
            NegativeLoss::BceLs {
                epsilon: DEFAULT_LS_EPSILON,
            },
        ),
        _ => return None,
    };
    Some(LossConfig { positive, negative })
}

fn bad(msg: impl Into<String>) -> Error {
    Error::config(msg)
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(format!("{key}: expected a number, got {v:?}")))
}

fn parse_kv(item: &str) -> Result<(&str, &str)> {
    item.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| bad(format!("expected key=value, got {item:?}")))
}

/// Sets `key` on a positive branch. Returns false when the branch has no such key.
fn set_positive(loss: &mut PositiveLoss, key: &str, v: &str) -> Result<bool> {
    match (loss, key) {
        (PositiveLoss::BceLs { epsilon }, "eps") => *epsilon = parse_f64(key, v)?,
        (PositiveLoss::Focal(p), "gamma") => p.gamma = parse_f64(key, v)?,
        (PositiveLoss::Focal(p), "alpha" | "alpha_pos") => p.alpha_pos = parse_f64(key, v)?,
        (PositiveLoss::FocalMargin(p), "m") => p.margin = parse_f64(key, v)?,
        (PositiveLoss::FocalMargin(p), "gamma") => p.gamma = parse_f64(key, v)?,
        (PositiveLoss::Asl(p), _) => return set_asl(p, key, v),
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_negative(loss: &mut NegativeLoss, key: &str, v: &str) -> Result<bool> {
    match (loss, key) {
        (NegativeLoss::BceLs { epsilon }, "eps") => *epsilon = parse_f64(key, v)?,
        (NegativeLoss::Wan { weight }, "w") => *weight = Some(parse_f64(key, v)?),
        (NegativeLoss::Focal(p), "gamma") => p.gamma = parse_f64(key, v)?,
        (NegativeLoss::Focal(p), "alpha" | "alpha_neg") => p.alpha_neg = parse_f64(key, v)?,
        (NegativeLoss::Asl(p), _) => return set_asl(p, key, v),
        (NegativeLoss::Hill(p), "lambda") => p.lambda = parse_f64(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn set_asl(p: &mut AslParams, key: &str, v: &str) -> Result<bool> {
    match key {
        "gamma_pos" => p.gamma_pos = parse_f64(key, v)?,
        "gamma_neg" => p.gamma_neg = parse_f64(key, v)?,
        "m" => p.margin = parse_f64(key, v)?,
        "floor" => p.positive_floor = parse_f64(key, v)?,
        "margin_on_positive" => {
            p.margin_on_positive = v.parse().map_err(|_| {
                bad(format!(
                    "margin_on_positive: expected true/false, got {v:?}"
                ))
            })?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

fn positive_family(name: &str) -> Option<PositiveLoss> {
    Some(match name {
        "bce" => PositiveLoss::Bce,
        "bce_ls" => PositiveLoss::BceLs {
            epsilon: DEFAULT_LS_EPSILON,
        },
        "focal" => PositiveLoss::Focal(FocalParams::default()),
        "focal_margin" => PositiveLoss::FocalMargin(FocalMarginParams::default()),
        "asl" => PositiveLoss::Asl(AslParams::default()),
        _ => return None,
    })
}

fn negative_family(name: &str) -> Option<NegativeLoss> {
    Some(match name {
        "bce" => NegativeLoss::Bce,
        "bce_ls" => NegativeLoss::BceLs {
            epsilon: DEFAULT_LS_EPSILON,
        },
        "wan" => NegativeLoss::Wan { weight: None },
        "focal" => NegativeLoss::Focal(FocalParams::default()),
        "asl" => NegativeLoss::Asl(AslParams::default()),
        "mse" => NegativeLoss::Mse,
        "hill" => NegativeLoss::Hill(HillParams::default()),
        _ => return None,
    })
}

fn parse_positive(text: &str) -> Result<PositiveLoss> {
    let mut parts = text.split(':');
    let family = parts.next().unwrap_or_default();
    let mut loss = positive_family(family)
        .ok_or_else(|| bad(format!("unknown positive loss family {family:?}")))?;
    for item in parts {
        let (k, v) = parse_kv(item)?;
        if !set_positive(&mut loss, k, v)? {
            return Err(bad(format!("positive {family} has no parameter {k:?}")));
        }
    }
    Ok(loss)
}

fn parse_negative(text: &str) -> Result<NegativeLoss> {
    let mut parts = text.split(':');
    let family = parts.next().unwrap_or_default();
    let mut loss = negative_family(family)
        .ok_or_else(|| bad(format!("unknown negative loss family {family:?}")))?;
    for item in parts {
        let (k, v) = parse_kv(item)?;
        if !set_negative(&mut loss, k, v)? {
            return Err(bad(format!("negative {family} has no parameter {k:?}")));
        }
    }
    Ok(loss)
}

/// Parses the base part of a method: a preset with keys, or an explicit pair.
pub fn parse_loss(text: &str) -> Result<LossConfig> {
    let text = text.trim();
    if text.starts_with("pos=") || text.starts_with("neg=") {
        let expected = || {
            bad(format!(
                "expected pos=...,neg=... (either order), got {text:?}"
            ))
        };
        let (a, b) = text.split_once(',').ok_or_else(expected)?;
        let (pos, neg) = match (a.split_once('='), b.split_once('=')) {
            (Some(("pos", p)), Some(("neg", n))) | (Some(("neg", n)), Some(("pos", p))) => (p, n),
            _ => return Err(expected()),
        };
        let cfg = LossConfig {
            positive: parse_positive(pos)?,
            negative: parse_negative(neg)?,
        };
        cfg.validate()?;
        return Ok(cfg);
    }
    let mut parts = text.split(':');
    let name = parts.next().unwrap_or_default();
    let mut cfg = preset(name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        bad(format!(
            "unknown loss {name:?}; presets are {}",
            names.join(", ")
        ))
    })?;
    for item in parts {
        let (k, v) = parse_kv(item)?;
        let hit_pos = set_positive(&mut cfg.positive, k, v)?;
        let hit_neg = set_negative(&mut cfg.negative, k, v)?;
        if !hit_pos && !hit_neg {
            return Err(bad(format!("loss {name} has no parameter {k:?}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(text: &str) -> Result<Method> {
        let mut parts = text.trim().split('+');
        let base = parse_loss(parts.next().unwrap_or_default())?;
        let mut method = Method::Plain(base);
        for modifier in parts {
            let mut items = modifier.split(':');
            let name = items.next().unwrap_or_default();
            if !matches!(method, Method::Plain(_)) {
                return Err(bad("at most one of +splc / +pseudo may be given"));
            }
            method = match name {
                "splc" => {
                    let mut s = SplcConfig {
                        base,
                        ..SplcConfig::default()
                    };
                    for item in items {
                        match parse_kv(item)? {
                            ("tau", v) => s.tau = parse_f64("tau", v)?,
                            ("start", v) => {
                                s.start_epoch = v.parse().map_err(|_| {
                                    bad(format!("start: expected an integer, got {v:?}"))
                                })?
                            }
                            (k, _) => return Err(bad(format!("splc has no parameter {k:?}"))),
                        }
                    }
                    Method::Splc(s)
                }
                "pseudo" => {
                    let mut p = PseudoLabelConfig {
                        threshold: DEFAULT_PSEUDO_THRESHOLD,
                        base,
                    };
                    for item in items {
                        match parse_kv(item)? {
                            ("thr", v) => p.threshold = parse_f64("thr", v)?,
                            (k, _) => return Err(bad(format!("pseudo has no parameter {k:?}"))),
                        }
                    }
                    Method::PseudoLabel(p)
                }
                other => return Err(bad(format!("unknown modifier {other:?}"))),
            };
        }
        method.validate()?;
        Ok(method)
    }
}

impl FromStr for LossBranch {
    type Err = Error;

    /// `<family>_pos` or `<family>_neg`, followed by `:key=value` items.
    fn from_str(text: &str) -> Result<LossBranch> {
        let text = text.trim();
        let (head, tail) = text.split_once(':').unwrap_or((text, ""));
        let with_tail = |family: &str| {
            if tail.is_empty() {
                family.to_string()
            } else {
                format!("{family}:{tail}")
            }
        };
        let branch = if let Some(f) = head.strip_suffix("_pos") {
            LossBranch::Positive(parse_positive(&with_tail(f))?)
        } else if let Some(f) = head.strip_suffix("_neg") {
            LossBranch::Negative(parse_negative(&with_tail(f))?)
        } else {
            return Err(bad(format!(
                "loss branch {text:?} must end in _pos or _neg, e.g. hill_neg"
            )));
        };
        branch.validate()?;
        Ok(branch)
    }
}

fn fmt_positive(p: &PositiveLoss) -> String {
    match p {
        PositiveLoss::Bce => "bce".into(),
        PositiveLoss::BceLs { epsilon } => format!("bce_ls:eps={epsilon}"),
        PositiveLoss::Focal(f) => format!("focal:gamma={}:alpha_pos={}", f.gamma, f.alpha_pos),
        PositiveLoss::FocalMargin(f) => format!("focal_margin:m={}:gamma={}", f.margin, f.gamma),
        PositiveLoss::Asl(a) => format!("asl{}", fmt_asl(a)),
    }
}

fn fmt_negative(n: &NegativeLoss) -> String {
    match n {
        NegativeLoss::Bce => "bce".into(),
        NegativeLoss::BceLs { epsilon } => format!("bce_ls:eps={epsilon}"),
        NegativeLoss::Wan { weight: None } => "wan".into(),
        NegativeLoss::Wan { weight: Some(w) } => format!("wan:w={w}"),
        NegativeLoss::Focal(f) => format!("focal:gamma={}:alpha_neg={}", f.gamma, f.alpha_neg),
        NegativeLoss::Asl(a) => format!("asl{}", fmt_asl(a)),
        NegativeLoss::Mse => "mse".into(),
        NegativeLoss::Hill(h) => format!("hill:lambda={}", h.lambda),
    }
}

fn fmt_asl(a: &AslParams) -> String {
    format!(
        ":gamma_pos={}:gamma_neg={}:m={}:margin_on_positive={}:floor={}",
        a.gamma_pos, a.gamma_neg, a.margin, a.margin_on_positive, a.positive_floor
    )
}

/// Canonical text of a loss pair: the preset name when it equals a preset
/// exactly, the explicit `pos=...,neg=...` form otherwise.
pub fn format_loss(cfg: &LossConfig) -> String {
    if let Some((name, _)) = PRESETS
        .iter()
        .find(|(n, _)| preset(n).as_ref() == Some(cfg))
    {
        return name.to_string();
    }
    format!(
        "pos={},neg={}",
        fmt_positive(&cfg.positive),
        fmt_negative(&cfg.negative)
    )
}

/// Canonical text form; parsing it gives back the same method.
impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_loss(self.base()))?;
        match self {
            Method::Plain(_) => Ok(()),
            Method::Splc(s) => write!(f, "+splc:tau={}:start={}", s.tau, s.start_epoch),
            Method::PseudoLabel(p) => write!(f, "+pseudo:thr={}", p.threshold),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplcPart {
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default = "default_start")]
    start_epoch: usize,
}

fn default_tau() -> f64 {
    crate::correction::DEFAULT_TAU
}

fn default_start() -> usize {
    crate::correction::DEFAULT_START_EPOCH
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PseudoPart {
    #[serde(default = "default_thr")]
    threshold: f64,
}

fn default_thr() -> f64 {
    DEFAULT_PSEUDO_THRESHOLD
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Structured {
    loss: LossSpec,
    #[serde(default)]
    splc: Option<SplcPart>,
    #[serde(default)]
    pseudo: Option<PseudoPart>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LossSpec {
    Text(String),
    Full(LossConfig),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MethodInput {
    Text(String),
    Structured(Structured),
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Accepts the compact text form or a table such as
/// `{ loss = "hill", splc = { tau = 0.6 } }`.
impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let method = match MethodInput::deserialize(d)? {
            MethodInput::Text(t) => t.parse().map_err(D::Error::custom)?,
            MethodInput::Structured(s) => {
                let base = match s.loss {
                    LossSpec::Text(t) => parse_loss(&t).map_err(D::Error::custom)?,
                    LossSpec::Full(c) => c,
                };
                match (s.splc, s.pseudo) {
                    (None, None) => Method::Plain(base),
                    (Some(p), None) => Method::Splc(SplcConfig {
                        tau: p.tau,
                        start_epoch: p.start_epoch,
                        base,
                    }),
                    (None, Some(p)) => Method::PseudoLabel(PseudoLabelConfig {
                        threshold: p.threshold,
                        base,
                    }),
                    (Some(_), Some(_)) => {
                        return Err(D::Error::custom("splc and pseudo are mutually exclusive"))
                    }
                }
            }
        };
        method.validate().map_err(D::Error::custom)?;
        Ok(method)
    }
}
