use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// First/second moment accumulators for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Gradients are left untouched.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.m.len() != params.len()
        || params
            .iter()
            .zip(&state.m)
            .any(|(p, m)| p.value.len() != m.len())
    {
        return Err(Error::Shape(
            "optimizer state does not match the parameter set".into(),
        ));
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let c1 = T::one() - T::lit(cfg.beta1.powi(t));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * g;
            *vi = b2 * *vi + (T::one() - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
