//! Gradient-magnitude curves over a probability grid and one-axis
//! hyper-parameter sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::correction::SplcConfig;
use crate::error::{Error, Result};
use crate::experiment::RunResult;
use crate::losses::{LossBranch, NegativeLoss, PositiveLoss};
use crate::method::Method;

/// `points` probabilities evenly spaced from `lo` to `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 999,
            lo: 0.001,
            hi: 0.999,
        }
    }
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi < 1.0) {
            return Err(Error::Domain(format!(
                "probability grid [{}, {}] must lie strictly inside (0, 1)",
                self.lo, self.hi
            )));
        }
        if self.points < 2 || self.lo >= self.hi {
            return Err(Error::Domain(
                "grid needs at least two points and lo < hi".into(),
            ));
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / last)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCurve {
    pub loss: String,
    pub params: String,
    /// `(p, |d loss / d x|)` at `x = logit(p)`.
    pub samples: Vec<(f64, f64)>,
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

pub fn gradient_curve(branch: &LossBranch, grid: &GridSpec) -> Result<GradCurve> {
    branch.validate()?;
    let samples = grid
        .values()?
        .into_iter()
        .map(|p| (p, branch.eval(logit(p)).grad.abs()))
        .collect();
    Ok(GradCurve {
        loss: branch.name(),
        params: branch.params_json(),
        samples,
    })
}

pub fn write_curves_csv(w: impl Write, curves: &[GradCurve]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["loss", "param_json", "p", "grad"])?;
    for c in curves {
        for (p, g) in &c.samples {
            out.write_record([&c.loss, &c.params, &p.to_string(), &g.to_string()])?;
        }
    }
    out.flush().map_err(|e| Error::io("curves csv", e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Focal-margin logit margin or ASL probability margin.
    Margin,
    Tau,
    StartEpoch,
    Lambda,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "margin" | "m" => SweepAxis::Margin,
            "tau" => SweepAxis::Tau,
            "start_epoch" | "start" => SweepAxis::StartEpoch,
            "lambda" => SweepAxis::Lambda,
            _ => {
                return Err(Error::config(format!(
                    "unknown sweep axis {s:?}; expected margin, tau, start_epoch or lambda"
                )))
            }
        })
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Margin => "margin",
            SweepAxis::Tau => "tau",
            SweepAxis::StartEpoch => "start_epoch",
            SweepAxis::Lambda => "lambda",
        }
    }

    /// `method` with this axis set to `value`.
    pub fn apply(self, method: &Method, value: f64) -> Result<Method> {
        let mut base = *method.base();
        let out = match self {
            SweepAxis::Margin => {
                let mut hit = false;
                match &mut base.positive {
                    PositiveLoss::FocalMargin(p) => {
                        p.margin = value;
                        hit = true;
                    }
                    PositiveLoss::Asl(p) => {
                        p.margin = value;
                        hit = true;
                    }
                    _ => {}
                }
                if let NegativeLoss::Asl(p) = &mut base.negative {
                    p.margin = value;
                    hit = true;
                }
                if !hit {
                    return Err(Error::config(
                        "margin sweep needs a focal_margin or asl branch",
                    ));
                }
                method.with_base(base)
            }
            SweepAxis::Lambda => {
                let NegativeLoss::Hill(p) = &mut base.negative else {
                    return Err(Error::config("lambda sweep needs a hill negative branch"));
                };
                p.lambda = value;
                method.with_base(base)
            }
            SweepAxis::Tau | SweepAxis::StartEpoch => {
                let Some(s) = method.splc() else {
                    return Err(Error::config(format!(
                        "{} sweep needs an SPLC method (append +splc)",
                        self.name()
                    )));
                };
                let mut s: SplcConfig = *s;
                if self == SweepAxis::Tau {
                    s.tau = value;
                } else {
                    if value.fract() != 0.0 || value < 1.0 {
                        return Err(Error::config(format!(
                            "start_epoch values must be integers >= 1, got {value}"
                        )));
                    }
                    s.start_epoch = value as usize;
                }
                Method::Splc(s)
            }
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub map: f64,
    pub cf1: f64,
    pub of1: f64,
}

/// Runs `run(method_with_value, seed)` for every value and seed, in order.
pub fn sweep(
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    method: &Method,
    mut run: impl FnMut(Method, u64) -> Result<RunResult>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len() * seeds.len());
    for &value in values {
        let m = axis.apply(method, value)?;
        for &seed in seeds {
            rows.push(sweep_row(axis, value, &run(m, seed)?));
        }
    }
    Ok(rows)
}

pub fn sweep_row(axis: SweepAxis, value: f64, r: &RunResult) -> SweepRow {
    SweepRow {
        axis: axis.name().to_string(),
        value,
        seed: r.seed,
        map: r.metrics.map,
        cf1: r.metrics.cf1,
        of1: r.metrics.of1,
    }
}

pub fn write_sweep_csv(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    if rows.is_empty() {
        out.write_record(["axis", "value", "seed", "map", "cf1", "of1"])?;
    }
    out.flush().map_err(|e| Error::io("sweep csv", e))
}
