//! Frame-wise classification loss, the smoothing losses, and their per-stage
//! sum.
//!
//! Both smoothing losses treat the earlier frame of every pair as a constant:
//! gradients reach `y[t]` but never `y[t−1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StageOutputs;
use crate::tensor::{channel_log_softmax, channel_log_softmax_backward, Scalar, Tensor, PROB_FLOOR};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    Tmse,
    Kl,
    None,
}

impl std::str::FromStr for Smoothing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tmse" | "t-mse" => Ok(Smoothing::Tmse),
            "kl" => Ok(Smoothing::Kl),
            "none" => Ok(Smoothing::None),
            other => Err(Error::InvalidConfig(format!("unknown smoothing loss `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    pub tau: f64,
    pub smoothing: Smoothing,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.15,
            tau: 4.0,
            smoothing: Smoothing::Tmse,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be non-negative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        Ok(())
    }
}

/// Value of a smoothing loss. `too_short` is set when the sequence has
/// fewer than two frames, in which case the value is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingValue {
    pub value: f64,
    pub too_short: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLoss {
    pub cls: f64,
    pub smooth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub per_stage: Vec<StageLoss>,
}

fn floored_log<S: Scalar>(p: S) -> f64 {
    p.as_f64().max(PROB_FLOOR).ln()
}

fn check_labels<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.time() {
        return Err(Error::dim("loss labels", probs.time(), labels.len()));
    }
    if let Some((frame, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= probs.channels()) {
        return Err(Error::LabelOutOfRange {
            label,
            frame,
            classes: probs.channels(),
        });
    }
    Ok(())
}

/// `(1/T) Σ_t −log y[label_t, t]`.
pub fn cross_entropy<S: Scalar>(probs: &Tensor<S>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Err(Error::Empty("cross_entropy on zero frames"));
    }
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(t, &c)| -floored_log(probs.get(c, t)))
        .sum();
    Ok(sum / labels.len() as f64)
}

/// Truncated MSE over consecutive log-probabilities:
/// `(1/(T·C)) Σ_{t≥2,c} min(|log y[c,t] − log y[c,t−1]|, τ)²`.
pub fn t_mse<S: Scalar>(probs: &Tensor<S>, tau: f64) -> SmoothingValue {
    let (c, t) = probs.shape();
    if t < 2 {
        return SmoothingValue {
            value: 0.0,
            too_short: true,
        };
    }
    let mut sum = 0.0;
    for ch in 0..c {
        let row = probs.row(ch);
        for step in 1..t {
            let delta = (floored_log(row[step]) - floored_log(row[step - 1])).abs();
            let clipped = delta.min(tau);
            sum += clipped * clipped;
        }
    }
    SmoothingValue {
        value: sum / (t * c) as f64,
        too_short: false,
    }
}

/// `(1/T) Σ_{t≥2,c} y[c,t−1] (log y[c,t−1] − log y[c,t])`.
pub fn kl_smoothing<S: Scalar>(probs: &Tensor<S>) -> SmoothingValue {
    let (c, t) = probs.shape();
    if t < 2 {
        return SmoothingValue {
            value: 0.0,
            too_short: true,
        };
    }
    let mut sum = 0.0;
    for ch in 0..c {
        let row = probs.row(ch);
        for step in 1..t {
            let prev = row[step - 1].as_f64();
            sum += prev * (floored_log(row[step - 1]) - floored_log(row[step]));
        }
    }
    SmoothingValue {
        value: sum / t as f64,
        too_short: false,
    }
}

fn smoothing_value<S: Scalar>(probs: &Tensor<S>, cfg: &LossConfig) -> f64 {
    match cfg.smoothing {
        Smoothing::Tmse => t_mse(probs, cfg.tau).value,
        Smoothing::Kl => kl_smoothing(probs).value,
        Smoothing::None => 0.0,
    }
}

fn combine(per_stage: Vec<StageLoss>, lambda: f64) -> LossValue {
    let total = per_stage.iter().map(|s| s.cls + lambda * s.smooth).sum();
    LossValue { total, per_stage }
}

/// `Σ_s (L_cls(Y^s) + λ·L_smooth(Y^s))`.
pub fn total_loss<S: Scalar>(
    outputs: &StageOutputs<S>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate()?;
    let mut per_stage = Vec::with_capacity(outputs.len());
    for probs in &outputs.probs {
        per_stage.push(StageLoss {
            cls: cross_entropy(probs, labels)?,
            smooth: smoothing_value(probs, cfg),
        });
    }
    Ok(combine(per_stage, cfg.lambda))
}

/// Stage loss terms and the gradient of `L_cls + λ·L_smooth` with respect
/// to the (floored) log-probabilities, previous frames held constant.
fn stage_terms<S: Scalar>(
    probs: &Tensor<S>,
    log_probs: &Tensor<S>,
    labels: &[usize],
    cfg: &LossConfig,
) -> (StageLoss, Tensor<S>) {
    let (c, t) = probs.shape();
    let mut grad = Tensor::<S>::zeros(c, t);
    let inv_t = 1.0 / t as f64;

    let mut cls = 0.0;
    for (step, &label) in labels.iter().enumerate() {
        cls -= log_probs.get(label, step).as_f64();
        grad.set(label, step, S::of(-inv_t));
    }
    cls *= inv_t;

    let mut smooth = 0.0;
    if t >= 2 {
        match cfg.smoothing {
            Smoothing::Tmse => {
                let scale = 1.0 / (t * c) as f64;
                for ch in 0..c {
                    let row = log_probs.row(ch);
                    for step in 1..t {
                        let delta = row[step].as_f64() - row[step - 1].as_f64();
                        if delta.abs() <= cfg.tau {
                            smooth += delta * delta;
                            let g = grad.get(ch, step).as_f64() + cfg.lambda * 2.0 * delta * scale;
                            grad.set(ch, step, S::of(g));
                        } else {
                            smooth += cfg.tau * cfg.tau;
                        }
                    }
                }
                smooth *= scale;
            }
            Smoothing::Kl => {
                for ch in 0..c {
                    let p_row = probs.row(ch);
                    let l_row = log_probs.row(ch);
                    for step in 1..t {
                        let prev = p_row[step - 1].as_f64();
                        smooth += prev * (l_row[step - 1].as_f64() - l_row[step].as_f64());
                        let g = grad.get(ch, step).as_f64() - cfg.lambda * prev * inv_t;
                        grad.set(ch, step, S::of(g));
                    }
                }
                smooth *= inv_t;
            }
            Smoothing::None => {}
        }
    }
    (StageLoss { cls, smooth }, grad)
}

/// Total loss together with its gradient with respect to every stage's
/// logits, ready for [`crate::model::Model::backward`].
pub fn total_loss_with_grad<S: Scalar>(
    outputs: &StageOutputs<S>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(LossValue, Vec<Tensor<S>>)> {
    cfg.validate()?;
    let mut per_stage = Vec::with_capacity(outputs.len());
    let mut grads = Vec::with_capacity(outputs.len());
    for (probs, logits) in outputs.probs.iter().zip(&outputs.logits) {
        check_labels(probs, labels)?;
        if labels.is_empty() {
            return Err(Error::Empty("loss on zero frames"));
        }
        let log_probs = channel_log_softmax(logits);
        let (terms, g_logp) = stage_terms(probs, &log_probs, labels, cfg);
        grads.push(channel_log_softmax_backward(probs, &log_probs, &g_logp));
        per_stage.push(terms);
    }
    Ok((combine(per_stage, cfg.lambda), grads))
}
