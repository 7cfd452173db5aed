//! SGD with momentum and weight decay, plus a reduce-on-plateau learning
//! rate schedule.

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Number of consecutive stale checkpoints before the lr decays.
    pub plateau_patience: usize,
    /// Relative improvement below which a checkpoint counts as stale.
    pub plateau_min_rel_improve: f64,
    pub lr_decay_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            plateau_patience: 3,
            plateau_min_rel_improve: 1e-3,
            lr_decay_factor: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0,1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.plateau_min_rel_improve <= 0.0 {
            return Err(Error::Config(format!(
                "plateau_min_rel_improve must be positive, got {}",
                self.plateau_min_rel_improve
            )));
        }
        Ok(())
    }
}

/// Reduce-on-plateau state. `current_lr` only ever shrinks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LRScheduleState {
    pub best_loss: f64,
    pub stale_checks: usize,
    pub current_lr: f64,
}

impl LRScheduleState {
    pub fn new(lr: f64) -> Self {
        LRScheduleState { best_loss: f64::INFINITY, stale_checks: 0, current_lr: lr }
    }
}

/// One plateau checkpoint: improvement must beat the relative threshold
/// strictly, otherwise the check counts as stale and patience runs down.
pub fn plateau_update(state: LRScheduleState, val_loss: f64, cfg: &OptimConfig) -> LRScheduleState {
    let mut next = state;
    if val_loss < state.best_loss * (1.0 - cfg.plateau_min_rel_improve) {
        next.best_loss = val_loss;
        next.stale_checks = 0;
    } else {
        next.stale_checks += 1;
        if next.stale_checks >= cfg.plateau_patience {
            next.current_lr *= cfg.lr_decay_factor;
            next.stale_checks = 0;
        }
    }
    next
}

/// Heavy-ball update over every parameter in the store:
/// v <- momentum*v + (grad + weight_decay*value); value <- value - lr*v.
/// Gradients are zeroed afterwards.
pub fn sgd_step(store: &mut ParamStore, lr: f64, cfg: &OptimConfig) -> Result<()> {
    for (_, p) in store.iter_mut() {
        if !p.grad.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {:?}", p.name)));
        }
        let n = p.value.len();
        for idx in 0..n {
            let g = p.grad.values()[idx] + cfg.weight_decay * p.value.values()[idx];
            let v = cfg.momentum * p.velocity.values()[idx] + g;
            p.velocity.values_mut()[idx] = v;
            p.value.values_mut()[idx] -= lr * v;
        }
        if !p.value.is_finite() {
            return Err(Error::Numeric(format!("non-finite value in parameter {:?} after step", p.name)));
        }
        p.grad.values_mut().fill(0.0);
    }
    Ok(())
}

/// Optimizer owning the schedule; the training loop calls `step` every
/// iteration and `observe_val_loss` at each evaluation checkpoint.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    pub cfg: OptimConfig,
    pub schedule: LRScheduleState,
}

impl SgdOptimizer {
    pub fn new(cfg: OptimConfig) -> Self {
        let schedule = LRScheduleState::new(cfg.lr);
        SgdOptimizer { cfg, schedule }
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        sgd_step(store, self.schedule.current_lr, &self.cfg)
    }

    pub fn observe_val_loss(&mut self, val_loss: f64) {
        self.schedule = plateau_update(self.schedule, val_loss, &self.cfg);
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Matrix;

    fn store_with(value: f64) -> (ParamStore, crate::diffcore::ParamId) {
        let mut store = ParamStore::new();
        let id = store.register("w", Matrix::from_vec(1, 1, vec![value]).unwrap()).unwrap();
        (store, id)
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        for (_, p) in store.iter_mut() {
            p.grad.values_mut()[0] = g;
        }
    }

    #[test]
    fn vanilla_step() {
        let (mut store, id) = store_with(1.0);
        set_grad(&mut store, 1.0);
        let cfg = OptimConfig { momentum: 0.0, weight_decay: 0.0, ..OptimConfig::default() };
        sgd_step(&mut store, 0.1, &cfg).unwrap();
        assert!((store.value(id).get(0, 0) - 0.9).abs() < 1e-15);
        assert_eq!(store.grad(id).get(0, 0), 0.0, "grads zeroed after step");
    }

    #[test]
    fn weight_decay_folded_into_gradient() {
        // v = 1 + 0.1*1 = 1.1; w = 1 - 0.1*1.1 = 0.89
        let (mut store, id) = store_with(1.0);
        set_grad(&mut store, 1.0);
        let cfg = OptimConfig { momentum: 0.0, weight_decay: 0.1, ..OptimConfig::default() };
        sgd_step(&mut store, 0.1, &cfg).unwrap();
        assert!((store.value(id).get(0, 0) - 0.89).abs() < 1e-15);
    }

    #[test]
    fn momentum_two_steps() {
        // step1: v=1, w=0.9; step2: v=0.9+1=1.9, w=0.9-0.19=0.71
        let (mut store, id) = store_with(1.0);
        let cfg = OptimConfig { momentum: 0.9, weight_decay: 0.0, ..OptimConfig::default() };
        set_grad(&mut store, 1.0);
        sgd_step(&mut store, 0.1, &cfg).unwrap();
        assert!((store.value(id).get(0, 0) - 0.9).abs() < 1e-15);
        set_grad(&mut store, 1.0);
        sgd_step(&mut store, 0.1, &cfg).unwrap();
        assert!((store.value(id).get(0, 0) - 0.71).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_one_step_to_optimum() {
        // f(w) = 0.5*||w||^2, grad = w, lr = 1 -> w' = 0 from any start
        let (mut store, id) = store_with(3.7);
        set_grad(&mut store, 3.7);
        let cfg = OptimConfig { momentum: 0.0, weight_decay: 0.0, ..OptimConfig::default() };
        sgd_step(&mut store, 1.0, &cfg).unwrap();
        assert_eq!(store.value(id).get(0, 0), 0.0);
    }

    #[test]
    fn non_finite_grad_aborts() {
        let (mut store, _) = store_with(1.0);
        for (_, p) in store.iter_mut() {
            p.grad.values_mut()[0] = f64::NAN;
        }
        let cfg = OptimConfig::default();
        let err = sgd_step(&mut store, 0.1, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn plateau_never_decays_on_strict_improvement() {
        let cfg = OptimConfig::default();
        let mut state = LRScheduleState::new(cfg.lr);
        let mut loss = 1.0;
        for _ in 0..20 {
            state = plateau_update(state, loss, &cfg);
            loss *= 0.9;
        }
        assert_eq!(state.current_lr, cfg.lr);
    }

    #[test]
    fn plateau_constant_loss_decays_exactly_once_after_patience() {
        let cfg = OptimConfig::default();
        let mut state = LRScheduleState::new(cfg.lr);
        // patience+1 checks at the same value: first sets best, next `patience`
        // are stale which triggers a single decay
        for _ in 0..cfg.plateau_patience + 1 {
            state = plateau_update(state, 0.5, &cfg);
        }
        assert!((state.current_lr - cfg.lr * cfg.lr_decay_factor).abs() < 1e-15);
        assert_eq!(state.stale_checks, 0);
    }

    #[test]
    fn plateau_boundary_improvement_counts_stale() {
        let cfg = OptimConfig::default();
        let mut state = LRScheduleState::new(cfg.lr);
        state = plateau_update(state, 1.0, &cfg);
        // exactly best*(1-threshold): strict inequality fails -> stale
        state = plateau_update(state, 1.0 * (1.0 - cfg.plateau_min_rel_improve), &cfg);
        assert_eq!(state.stale_checks, 1);
        assert_eq!(state.best_loss, 1.0);
    }

    #[test]
    fn lr_after_r_decays_is_exact_power() {
        let cfg = OptimConfig::default();
        let mut state = LRScheduleState::new(cfg.lr);
        for _ in 0..3 * (cfg.plateau_patience + 1) {
            state = plateau_update(state, 0.5, &cfg);
        }
        // three full stale cycles after the initial best
        let decays = 3;
        let want = cfg.lr * cfg.lr_decay_factor.powi(decays);
        assert!((state.current_lr - want).abs() <= 1e-18);
    }
}
