//! SGD with momentum and weight decay, plus the validation-plateau schedule.

use crate::error::{FcnaError, Result};
use crate::network::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_factor: f64,
    /// Validation evaluations without improvement before the rate drops.
    pub patience: usize,
    pub min_delta: f64,
    pub max_drops: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_drop_factor: 10.0,
            patience: 3,
            min_delta: 1e-4,
            max_drops: 3,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FcnaError::InvalidConfig(m.to_string()));
        let finite = [self.learning_rate, self.momentum, self.weight_decay, self.lr_drop_factor, self.min_delta];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("hyperparameters must be finite");
        }
        if self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.min_delta < 0.0 {
            return bad("weight_decay and min_delta must be non-negative");
        }
        if self.lr_drop_factor <= 1.0 {
            return bad("lr_drop_factor must exceed 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub velocity: ParamSet,
    pub current_lr: f64,
    pub drops_taken: usize,
    pub best_validation_loss: f64,
    pub evals_since_improvement: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlateauSignal {
    Continue,
    DroppedLr,
    Stop,
}

impl OptimState {
    pub fn new(params: &ParamSet, cfg: &OptimConfig) -> Self {
        OptimState {
            velocity: params.zeros_like(),
            current_lr: cfg.learning_rate,
            drops_taken: 0,
            best_validation_loss: f64::INFINITY,
            evals_since_improvement: 0,
        }
    }
}

/// One momentum step:
/// `v ← momentum·v − lr·(grad + weight_decay·param)`, then `param ← param + v`.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimState, cfg: &OptimConfig) -> Result<()> {
    params.check_layout(grads, "sgd_step grads")?;
    params.check_layout(&state.velocity, "sgd_step velocity")?;
    let lr = state.current_lr as f32;
    let momentum = cfg.momentum as f32;
    let wd = cfg.weight_decay as f32;
    let iter = params.iter_mut().zip(grads.iter()).zip(state.velocity.iter_mut());
    for (((_, p), (_, g)), (_, v)) in iter {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *v = momentum * *v - lr * (g + wd * *p);
            *p += *v;
        }
    }
    Ok(())
}

/// Tracks the best validation loss and drops the learning rate after
/// `patience` consecutive evaluations that fail to improve on it by more
/// than `min_delta`. Once `max_drops` drops have been taken, the next
/// plateau signals [`PlateauSignal::Stop`].
pub fn plateau_update(state: &mut OptimState, cfg: &OptimConfig, validation_loss: f64) -> Result<PlateauSignal> {
    if !validation_loss.is_finite() {
        return Err(FcnaError::Diverged(format!("validation loss is {validation_loss}")));
    }
    if state.best_validation_loss - validation_loss > cfg.min_delta {
        state.best_validation_loss = validation_loss;
        state.evals_since_improvement = 0;
        return Ok(PlateauSignal::Continue);
    }
    state.evals_since_improvement += 1;
    if state.evals_since_improvement < cfg.patience {
        return Ok(PlateauSignal::Continue);
    }
    if state.drops_taken >= cfg.max_drops {
        return Ok(PlateauSignal::Stop);
    }
    state.drops_taken += 1;
    state.current_lr = cfg.learning_rate / cfg.lr_drop_factor.powi(state.drops_taken as i32);
    state.evals_since_improvement = 0;
    Ok(PlateauSignal::DroppedLr)
}
