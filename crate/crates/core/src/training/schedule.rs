use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numcore::{NumError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

/// Optimisation settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// Stop after this many steps without a validation improvement.
    pub patience: Option<usize>,
    pub eval_every: usize,
    pub loss_kind: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 0.001,
            warmup_steps: 20_000,
            max_steps: 20_000,
            batch_size: 32,
            seeds: vec![0, 1, 2, 3, 4],
            patience: None,
            eval_every: 100,
            loss_kind: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.peak_lr > 0.0) || !self.peak_lr.is_finite() {
            return bad("peak_lr must be positive");
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        Ok(())
    }
}

/// Linear warmup to `peak_lr`, then inverse-square-root decay.
pub fn warmup_schedule(step: usize, config: &TrainConfig) -> f64 {
    let s = step.max(1) as f64;
    let w = config.warmup_steps as f64;
    config.peak_lr * (s / w).min((w / s).sqrt())
}

/// Mean squared or absolute error over all elements.
pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64, NumError> {
    if pred.shape() != target.shape() {
        return Err(NumError::ShapeMismatch {
            op: "loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let u = pred.len() as f64;
    let it = pred.data().iter().zip(target.data());
    Ok(match kind {
        LossKind::Mse => it.map(|(a, b)| (a - b).powi(2)).sum::<f64>() / u,
        LossKind::Mae => it.map(|(a, b)| (a - b).abs()).sum::<f64>() / u,
    })
}

pub fn loss_on_tape(tape: &mut Tape, pred: Var, target: Var, kind: LossKind) -> Result<Var, NumError> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(NumError::ShapeMismatch {
            op: "loss",
            left: tape.shape(pred).to_vec(),
            right: tape.shape(target).to_vec(),
        });
    }
    let d = tape.sub(pred, target)?;
    let e = match kind {
        LossKind::Mse => tape.square(d),
        LossKind::Mae => tape.abs(d),
    };
    Ok(tape.mean(e))
}
