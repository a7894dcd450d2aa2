//! First-order optimizers (SGD with heavy-ball momentum, Adam, Lion) and a
//! dual-optimizer wrapper for alternating two-objective training.
//!
//! The dual wrapper holds one optimizer per phase (forget / retain). Its
//! state buffers are reference-counted so they can either be fully decoupled
//! (each phase owns private momentum) or aliased (both phases mutate the
//! same buffer), which reproduces a single shared optimizer exactly. The
//! alias is per-buffer: first and second moments can be shared
//! independently for ablations.
//!
//! Update rules (η = step size, λ = weight decay):
//!
//! - SGD:  `m ← α·m + ĝ` (no dampening), `θ ← θ − η·m`; λ couples into the
//!   gradient (`ĝ ← ĝ + λ·θ`) before the momentum update.
//! - Adam: `m ← β1·m + (1−β1)·ĝ`, `v ← β2·v + (1−β2)·ĝ²`, bias-corrected
//!   with the step count starting at 1, `θ ← θ − η·m̂/(√v̂ + ε)`; decoupled
//!   weight decay applies `θ ← θ − η·λ·θ` separately, coupled decay folds
//!   λ·θ into ĝ.
//! - Lion: `u = sign(β1·m + (1−β1)·ĝ)` with `sign(0) = 0`,
//!   `θ ← θ − η·(u + λ·θ)`, then `m ← β2·m + (1−β2)·ĝ`.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A momentum/second-moment buffer that may be aliased between two states.
pub type SharedBuf = Rc<RefCell<Vec<f64>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
    Lion,
}

/// Step-size schedule, evaluated per optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay `η·(1 + cos(π·t/total_steps))/2` from η at t = 0
    /// to 0 at t = total_steps.
    Cosine { total_steps: u64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimKind,
    pub step_size: f64,
    /// Heavy-ball coefficient α (SGD only).
    #[serde(default)]
    pub momentum: f64,
    /// First-moment coefficient (Adam, Lion).
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    /// Second-moment coefficient (Adam) / momentum retention (Lion).
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Adam denominator offset.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Apply weight decay as a separate shrink step instead of folding it
    /// into the gradient. Only meaningful (and only allowed) for Adam.
    #[serde(default)]
    pub decoupled_weight_decay: bool,
    #[serde(default, rename = "lr_schedule")]
    pub schedule: LrSchedule,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    /// Heavy-ball SGD with the given step size and momentum.
    pub fn sgd(step_size: f64, momentum: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimKind::Sgd,
            step_size,
            momentum,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
            decoupled_weight_decay: false,
            schedule: LrSchedule::Constant,
        }
    }

    /// Adam with (β1, β2, ε) = (0.9, 0.999, 1e-8).
    pub fn adam(step_size: f64) -> OptimizerConfig {
        OptimizerConfig { kind: OptimKind::Adam, step_size, ..OptimizerConfig::sgd(step_size, 0.0) }
    }

    /// Lion with (β1, β2) = (0.9, 0.99).
    pub fn lion(step_size: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimKind::Lion,
            step_size,
            beta2: 0.99,
            ..OptimizerConfig::sgd(step_size, 0.0)
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64, decoupled: bool) -> OptimizerConfig {
        self.weight_decay = weight_decay;
        self.decoupled_weight_decay = decoupled;
        self
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> OptimizerConfig {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.decoupled_weight_decay && self.kind != OptimKind::Adam {
            return Err(Error::Config(
                "decoupled weight decay is only defined for Adam".into(),
            ));
        }
        if let LrSchedule::Cosine { total_steps } = self.schedule {
            if total_steps == 0 {
                return Err(Error::Config("cosine schedule needs total_steps >= 1".into()));
            }
        }
        Ok(())
    }

    /// Effective step size at (0-based) step `t` under this schedule.
    pub fn effective_lr(&self, t: u64) -> Result<f64> {
        schedule_lr(self.step_size, self.schedule, t)
    }
}

/// Evaluate a step-size schedule at step `t`.
pub fn schedule_lr(step_size: f64, schedule: LrSchedule, t: u64) -> Result<f64> {
    match schedule {
        LrSchedule::Constant => Ok(step_size),
        LrSchedule::Cosine { total_steps } => {
            if t > total_steps {
                return Err(Error::Config(format!(
                    "cosine schedule evaluated at step {t} past total_steps {total_steps}"
                )));
            }
            let frac = t as f64 / total_steps as f64;
            Ok(step_size * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0)
        }
    }
}

/// Mutable optimizer state: first moment `m`, second moment `v` (Adam only,
/// empty otherwise) and the step counter used for bias correction and
/// schedules. Buffers are reference-counted so a [`DualOptimizer`] can alias
/// them between its two phases.
#[derive(Debug, Clone)]
pub struct OptimState {
    m: SharedBuf,
    v: SharedBuf,
    t: Rc<Cell<u64>>,
}

impl OptimState {
    pub fn new(kind: OptimKind, param_count: usize) -> OptimState {
        let v_len = if kind == OptimKind::Adam { param_count } else { 0 };
        OptimState {
            m: Rc::new(RefCell::new(vec![0.0; param_count])),
            v: Rc::new(RefCell::new(vec![0.0; v_len])),
            t: Rc::new(Cell::new(0)),
        }
    }

    /// Steps taken so far through this state.
    pub fn step_count(&self) -> u64 {
        self.t.get()
    }

    /// Copy of the first-moment buffer.
    pub fn momentum_snapshot(&self) -> Vec<f64> {
        self.m.borrow().clone()
    }

    /// Copy of the second-moment buffer (empty unless Adam).
    pub fn second_moment_snapshot(&self) -> Vec<f64> {
        self.v.borrow().clone()
    }

    fn check_len(&self, params: &[f64], grad: &[f64]) -> Result<()> {
        let n = self.m.borrow().len();
        if params.len() != n || grad.len() != n {
            return Err(Error::Dimension(format!(
                "optimizer state holds {} coordinates, got {} params and {} gradient entries",
                n,
                params.len(),
                grad.len()
            )));
        }
        Ok(())
    }
}

/// One SGD step with the given effective step size.
pub fn sgd_step(
    params: &mut [f64],
    grad: &[f64],
    state: &OptimState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    state.check_len(params, grad)?;
    let mut m = state.m.borrow_mut();
    let (alpha, wd) = (cfg.momentum, cfg.weight_decay);
    for i in 0..params.len() {
        let g = grad[i] + wd * params[i];
        m[i] = alpha * m[i] + g;
        params[i] -= lr * m[i];
    }
    state.t.set(state.t.get() + 1);
    Ok(())
}

/// One Adam step with the given effective step size.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &OptimState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    state.check_len(params, grad)?;
    let mut m = state.m.borrow_mut();
    let mut v = state.v.borrow_mut();
    if v.len() != params.len() {
        return Err(Error::Dimension(format!(
            "second-moment buffer holds {} coordinates, expected {}",
            v.len(),
            params.len()
        )));
    }
    let t = state.t.get() + 1;
    state.t.set(t);
    let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let coupled_wd = if cfg.decoupled_weight_decay { 0.0 } else { wd };
    for i in 0..params.len() {
        let g = grad[i] + coupled_wd * params[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        if cfg.decoupled_weight_decay {
            params[i] -= lr * wd * params[i];
        }
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One Lion step with the given effective step size.
pub fn lion_step(
    params: &mut [f64],
    grad: &[f64],
    state: &OptimState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    state.check_len(params, grad)?;
    let mut m = state.m.borrow_mut();
    let (b1, b2, wd) = (cfg.beta1, cfg.beta2, cfg.weight_decay);
    for i in 0..params.len() {
        let blend = b1 * m[i] + (1.0 - b1) * grad[i];
        // sign with sign(0) = 0
        let u = if blend > 0.0 {
            1.0
        } else if blend < 0.0 {
            -1.0
        } else {
            0.0
        };
        params[i] -= lr * (u + wd * params[i]);
        m[i] = b2 * m[i] + (1.0 - b2) * grad[i];
    }
    state.t.set(state.t.get() + 1);
    Ok(())
}

/// One step of whichever rule the config selects, at an explicit step size.
pub fn step_with_lr(
    params: &mut [f64],
    grad: &[f64],
    state: &OptimState,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    match cfg.kind {
        OptimKind::Sgd => sgd_step(params, grad, state, cfg, lr),
        OptimKind::Adam => adam_step(params, grad, state, cfg, lr),
        OptimKind::Lion => lion_step(params, grad, state, cfg, lr),
    }
}

/// One step at the schedule's step size for the state's current step count.
pub fn step(
    params: &mut [f64],
    grad: &[f64],
    state: &OptimState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let lr = cfg.effective_lr(state.step_count())?;
    step_with_lr(params, grad, state, cfg, lr)
}

/// The two phases of alternating unlearning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Forget,
    Retain,
}

/// Two optimizers with per-buffer state aliasing.
///
/// With `share_m = share_v = true` (and equal kinds/configs) the wrapper
/// behaves exactly like one optimizer stepped on every phase: the buffers
/// *and* the step counter are the same objects. With both flags false the
/// phases are fully decoupled: steps in one phase never touch the other's
/// state. Mixed flags alias only the named buffer while each phase keeps
/// its own step counter.
#[derive(Debug, Clone)]
pub struct DualOptimizer {
    cfg_forget: OptimizerConfig,
    cfg_retain: OptimizerConfig,
    state_forget: OptimState,
    state_retain: OptimState,
    share_m: bool,
    share_v: bool,
}

impl DualOptimizer {
    pub fn new(
        cfg_forget: OptimizerConfig,
        cfg_retain: OptimizerConfig,
        param_count: usize,
        share_m: bool,
        share_v: bool,
    ) -> Result<DualOptimizer> {
        cfg_forget.validate()?;
        cfg_retain.validate()?;
        if (share_m || share_v) && cfg_forget.kind != cfg_retain.kind {
            return Err(Error::Config(format!(
                "state can only be shared between optimizers of the same kind, got {:?} and {:?}",
                cfg_forget.kind, cfg_retain.kind
            )));
        }
        let state_forget = OptimState::new(cfg_forget.kind, param_count);
        let state_retain = OptimState {
            m: if share_m {
                Rc::clone(&state_forget.m)
            } else {
                Rc::new(RefCell::new(vec![0.0; param_count]))
            },
            v: if share_v {
                Rc::clone(&state_forget.v)
            } else {
                Rc::new(RefCell::new(vec![
                    0.0;
                    if cfg_retain.kind == OptimKind::Adam { param_count } else { 0 }
                ]))
            },
            // A fully shared pair is one optimizer, so it advances one step
            // counter; partial sharing keeps per-phase counters (each side
            // bias-corrects its own steps).
            t: if share_m && share_v {
                Rc::clone(&state_forget.t)
            } else {
                Rc::new(Cell::new(0))
            },
        };
        Ok(DualOptimizer { cfg_forget, cfg_retain, state_forget, state_retain, share_m, share_v })
    }

    /// Convenience constructor for the single-optimizer emulation: both
    /// phases run the same config over fully aliased state.
    pub fn fully_shared(cfg: OptimizerConfig, param_count: usize) -> Result<DualOptimizer> {
        DualOptimizer::new(cfg.clone(), cfg, param_count, true, true)
    }

    pub fn is_fully_shared(&self) -> bool {
        self.share_m && self.share_v
    }

    pub fn share_flags(&self) -> (bool, bool) {
        (self.share_m, self.share_v)
    }

    pub fn config(&self, phase: Phase) -> &OptimizerConfig {
        match phase {
            Phase::Forget => &self.cfg_forget,
            Phase::Retain => &self.cfg_retain,
        }
    }

    pub fn state(&self, phase: Phase) -> &OptimState {
        match phase {
            Phase::Forget => &self.state_forget,
            Phase::Retain => &self.state_retain,
        }
    }

    /// Step the given phase's optimizer at an explicit step size.
    pub fn step_with_lr(
        &mut self,
        params: &mut [f64],
        grad: &[f64],
        phase: Phase,
        lr: f64,
    ) -> Result<()> {
        let (cfg, state) = match phase {
            Phase::Forget => (&self.cfg_forget, &self.state_forget),
            Phase::Retain => (&self.cfg_retain, &self.state_retain),
        };
        step_with_lr(params, grad, state, cfg, lr)
    }

    /// Step the given phase's optimizer at its scheduled step size.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], phase: Phase) -> Result<()> {
        let (cfg, state) = match phase {
            Phase::Forget => (&self.cfg_forget, &self.state_forget),
            Phase::Retain => (&self.cfg_retain, &self.state_retain),
        };
        let lr = cfg.effective_lr(state.step_count())?;
        step_with_lr(params, grad, state, cfg, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_reproduces_the_two_step_example() {
        // theta = 0, g = 1 twice, alpha = 0.9, eta = 0.1:
        // step 1: m = 1,   theta = -0.1
        // step 2: m = 1.9, theta = -0.29
        let cfg = OptimizerConfig::sgd(0.1, 0.9);
        let state = OptimState::new(OptimKind::Sgd, 1);
        let mut p = vec![0.0];
        sgd_step(&mut p, &[1.0], &state, &cfg, 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &[1.0], &state, &cfg, 0.1).unwrap();
        assert!((p[0] + 0.29).abs() < 1e-15);
        assert!((state.momentum_snapshot()[0] - 1.9).abs() < 1e-15);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn adam_first_step_is_roughly_signed_lr() {
        let cfg = OptimizerConfig::adam(0.001);
        let state = OptimState::new(OptimKind::Adam, 3);
        let mut p = vec![0.0, 0.0, 0.0];
        adam_step(&mut p, &[0.5, -2.0, 0.0], &state, &cfg, 0.001).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-8);
        assert!((p[1] - 0.001).abs() < 1e-8);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn adam_decoupled_and_coupled_decay_differ() {
        let mk = |decoupled| {
            let cfg = OptimizerConfig::adam(0.01).with_weight_decay(0.1, decoupled);
            let state = OptimState::new(OptimKind::Adam, 1);
            let mut p = vec![2.0];
            adam_step(&mut p, &[0.3], &state, &cfg, 0.01).unwrap();
            p[0]
        };
        assert_ne!(mk(true), mk(false));
    }

    #[test]
    fn lion_sign_of_zero_is_zero() {
        let cfg = OptimizerConfig::lion(0.1);
        let state = OptimState::new(OptimKind::Lion, 2);
        let mut p = vec![1.0, -1.0];
        lion_step(&mut p, &[0.0, 0.0], &state, &cfg, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -1.0], "no decay, zero blend: parameters must not move");
    }

    #[test]
    fn lion_moves_by_lr_in_sign_direction() {
        let cfg = OptimizerConfig::lion(0.1);
        let state = OptimState::new(OptimKind::Lion, 2);
        let mut p = vec![0.0, 0.0];
        lion_step(&mut p, &[0.3, -7.0], &state, &cfg, 0.1).unwrap();
        assert_eq!(p, vec![-0.1, 0.1]);
        // Momentum picked up (1 - beta2) * g.
        let m = state.momentum_snapshot();
        assert!((m[0] - 0.003).abs() < 1e-15);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let sched = LrSchedule::Cosine { total_steps: 100 };
        assert!((schedule_lr(0.1, sched, 0).unwrap() - 0.1).abs() < 1e-15);
        assert!((schedule_lr(0.1, sched, 50).unwrap() - 0.05).abs() < 1e-15);
        assert!(schedule_lr(0.1, sched, 100).unwrap().abs() < 1e-15);
        assert_eq!(schedule_lr(0.1, sched, 101).unwrap_err().code(), "config");
    }

    #[test]
    fn config_validation_categories() {
        let mut cfg = OptimizerConfig::adam(0.001);
        cfg.epsilon = 0.0;
        assert_eq!(cfg.validate().unwrap_err().code(), "config");
        let mut cfg = OptimizerConfig::sgd(0.1, 1.0);
        assert_eq!(cfg.validate().unwrap_err().code(), "config");
        cfg.momentum = 0.9;
        cfg.step_size = -1.0;
        assert_eq!(cfg.validate().unwrap_err().code(), "config");
        let cfg = OptimizerConfig::sgd(0.1, 0.9).with_weight_decay(1e-4, true);
        assert_eq!(cfg.validate().unwrap_err().code(), "config");
    }

    #[test]
    fn dual_sharing_requires_equal_kinds() {
        let err = DualOptimizer::new(
            OptimizerConfig::adam(1e-3),
            OptimizerConfig::sgd(0.1, 0.9),
            4,
            true,
            false,
        )
        .unwrap_err();
        assert_eq!(err.code(), "config");
        // Decoupled mixed kinds are fine.
        DualOptimizer::new(OptimizerConfig::adam(1e-3), OptimizerConfig::sgd(0.1, 0.9), 4, false, false)
            .unwrap();
    }

    #[test]
    fn share_flags_alias_the_buffers() {
        let duo = DualOptimizer::new(
            OptimizerConfig::adam(1e-3),
            OptimizerConfig::adam(1e-3),
            4,
            true,
            false,
        )
        .unwrap();
        assert!(Rc::ptr_eq(&duo.state(Phase::Forget).m, &duo.state(Phase::Retain).m));
        assert!(!Rc::ptr_eq(&duo.state(Phase::Forget).v, &duo.state(Phase::Retain).v));
        assert!(!Rc::ptr_eq(&duo.state(Phase::Forget).t, &duo.state(Phase::Retain).t));

        let duo = DualOptimizer::fully_shared(OptimizerConfig::sgd(0.1, 0.9), 4).unwrap();
        assert!(Rc::ptr_eq(&duo.state(Phase::Forget).m, &duo.state(Phase::Retain).m));
        assert!(Rc::ptr_eq(&duo.state(Phase::Forget).t, &duo.state(Phase::Retain).t));
    }

    #[test]
    fn fully_shared_adam_matches_single_adam_bitwise() {
        let cfg = OptimizerConfig::adam(0.002);
        let mut duo = DualOptimizer::fully_shared(cfg.clone(), 3).unwrap();
        let single = OptimState::new(OptimKind::Adam, 3);
        let mut p_duo = vec![0.3, -0.2, 0.9];
        let mut p_single = p_duo.clone();
        let grads = [
            (Phase::Forget, [0.1, -0.4, 0.2]),
            (Phase::Retain, [-0.3, 0.5, 0.0]),
            (Phase::Forget, [0.7, 0.7, -0.7]),
            (Phase::Retain, [0.0, -0.1, 0.25]),
        ];
        for (phase, g) in grads {
            duo.step_with_lr(&mut p_duo, &g, phase, 0.002).unwrap();
            adam_step(&mut p_single, &g, &single, &cfg, 0.002).unwrap();
        }
        for (a, b) in p_duo.iter().zip(&p_single) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(duo.state(Phase::Forget).step_count(), 4);
    }

    #[test]
    fn decoupled_phases_never_touch_each_other() {
        let mut duo = DualOptimizer::new(
            OptimizerConfig::adam(1e-3),
            OptimizerConfig::sgd(0.1, 0.9),
            2,
            false,
            false,
        )
        .unwrap();
        let mut p = vec![0.5, -0.5];
        duo.step_with_lr(&mut p, &[1.0, 2.0], Phase::Forget, 1e-3).unwrap();
        let m_f = duo.state(Phase::Forget).momentum_snapshot();
        let v_f = duo.state(Phase::Forget).second_moment_snapshot();
        for _ in 0..5 {
            duo.step_with_lr(&mut p, &[-3.0, 4.0], Phase::Retain, 0.1).unwrap();
        }
        assert_eq!(m_f, duo.state(Phase::Forget).momentum_snapshot());
        assert_eq!(v_f, duo.state(Phase::Forget).second_moment_snapshot());
        assert_eq!(duo.state(Phase::Forget).step_count(), 1);
        assert_eq!(duo.state(Phase::Retain).step_count(), 5);
    }
}
