//! Adam with decoupled weight decay.

use crate::dynamics::{DimsConfig, ParamGroup, ParameterSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && [self.learning_rate, self.weight_decay, self.epsilon]
                .iter()
                .all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// First and second moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(dims: &DimsConfig) -> Self {
        OptimizerState {
            m: ParameterSet::zeros(dims),
            v: ParameterSet::zeros(dims),
            step: 0,
        }
    }
}

/// One update of every tensor for which `trainable` holds; the rest keep
/// their values and moments.
pub fn adam_step(
    cfg: &AdamConfig,
    params: &mut ParameterSet,
    grads: &ParameterSet,
    opt: &mut OptimizerState,
    trainable: impl Fn(ParamGroup) -> bool,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != opt.m.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    opt.step += 1;
    let t = opt.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let g_all = grads.tensors();
    let m_all = opt.m.tensors_mut();
    let v_all = opt.v.tensors_mut();
    for (((group, theta), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(m_all.into_iter().zip(v_all))
    {
        if !trainable(group) {
            continue;
        }
        for i in 0..theta.len() {
            theta[i] -= cfg.learning_rate * cfg.weight_decay * theta[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            theta[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
    if !params.all_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            batch: 0,
            detail: "non-finite parameter after optimizer step".into(),
        });
    }
    Ok(())
}
