//! Parameter updates: plain gradient descent and Adam.
//!
//! State lives outside the parameters so it can be created once per run
//! and stepped per batch. Moment buffers are allocated lazily the first
//! time a parameter is updated, keyed by parameter name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

/// Which update rule [`OptimizerState::step`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

/// Learning rate, Adam moment buffers, and the shared step counter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mode: Optimizer,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        OptimizerState {
            mode: Optimizer::Sgd,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerState {
            mode: Optimizer::Adam,
            ..OptimizerState::sgd(lr)
        }
    }

    pub fn with_mode(mode: Optimizer, lr: f64) -> Self {
        OptimizerState {
            mode,
            ..OptimizerState::sgd(lr)
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    /// Parameters absent from `grads` are left untouched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        match self.mode {
            Optimizer::Sgd => sgd_step(params, grads, self),
            Optimizer::Adam => adam_step(params, grads, self),
        }
    }
}

fn check_shapes(
    op: &'static str,
    params: &BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name).ok_or_else(|| {
            Error::validation(
                op,
                "param",
                format!("gradient for unknown parameter {name:?}"),
            )
        })?;
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// p ← p − lr·g
pub fn sgd_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
) -> Result<()> {
    check_shapes("sgd_step", params, grads)?;
    state.step += 1;
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= state.lr * gv;
        }
    }
    Ok(())
}

/// Adam with bias correction; moments start at zero on first sight of a
/// parameter.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
) -> Result<()> {
    check_shapes("adam_step", params, grads)?;
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.numel()]);
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.numel()]);
        for i in 0..g.numel() {
            let gv = g.data()[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gv;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gv * gv;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data_mut()[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
