use std::collections::BTreeMap;

use ndarray::Array2;

use super::params::{decay_exempt, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

/// One Adam step with decoupled weight decay `p ← p − lr·(m̂/(√v̂+ε) + λ·p)`.
///
/// Nothing is written unless every gradient and every updated tensor is finite.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Array2<f64>>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::ShapeMismatch(format!("no gradient for {name}")))?;
        if g.dim() != p.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: gradient {:?} vs tensor {:?}",
                g.dim(),
                p.dim()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut updates = Vec::new();
    for (name, p) in params.iter() {
        let g = &grads[name];
        let mut m = state.m.get(name).cloned().unwrap_or_else(|| Array2::zeros(p.dim()));
        let mut v = state.v.get(name).cloned().unwrap_or_else(|| Array2::zeros(p.dim()));
        m.zip_mut_with(g, |m, &g| *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g);
        v.zip_mut_with(g, |v, &g| *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g);
        let decay = if decay_exempt(name) { 0.0 } else { cfg.weight_decay };
        let mut next = p.clone();
        ndarray::Zip::from(&mut next).and(&m).and(&v).for_each(|p, &m, &v| {
            let step = (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
            *p -= cfg.lr * (step + decay * *p);
        });
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("updated {name}")));
        }
        updates.push((name.clone(), next, m, v));
    }
    for (name, next, m, v) in updates {
        *params.get_mut(&name) = next;
        state.m.insert(name.clone(), m);
        state.v.insert(name, v);
    }
    state.step = t;
    Ok(())
}
