//! Classifier head, the three loss terms and evaluation metrics.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::tape::{softplus, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams {
    pub proj_w: Var,
    pub proj_b: Var,
    pub head_w: Var,
    pub head_b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Classified {
    pub logit: Var,
    pub g_cls: Var,
}

/// `g = ReLU([r̂2; r2 − r̂2]·W + b)`, `ℓ = g·w + b`.
pub fn classify(tape: &mut Tape, r_hat2: Var, r2: Var, params: &ClassifierParams) -> Classified {
    let xi = tape.sub(r2, r_hat2);
    let cat = tape.concat_cols(&[r_hat2, xi]);
    let g = tape.matmul(cat, params.proj_w);
    let g = tape.add_row(g, params.proj_b);
    let g_cls = tape.relu(g);
    let l = tape.matmul(g_cls, params.head_w);
    let logit = tape.add_row(l, params.head_b);
    Classified { logit, g_cls }
}

/// `−[β·y·log σ(ℓ) + (1−y)·log(1−σ(ℓ))]` via `softplus`.
pub fn weighted_bce(logit: f64, y: u8, beta_plus: f64) -> f64 {
    if y == 1 {
        beta_plus * softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn weighted_bce_on_tape(tape: &mut Tape, logit: Var, y: u8, beta_plus: f64) -> Var {
    if y == 1 {
        let neg = tape.scale(logit, -1.0);
        let sp = tape.softplus(neg);
        tape.scale(sp, beta_plus)
    } else {
        tape.softplus(logit)
    }
}

/// `‖r̂2 − r2‖²`.
pub fn dyn_loss(r_hat2: &[f64], r2: &[f64]) -> f64 {
    r_hat2.iter().zip(r2).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn dyn_loss_on_tape(tape: &mut Tape, r_hat2: Var, r2: Var) -> Var {
    let d = tape.sub(r_hat2, r2);
    let sq = tape.mul(d, d);
    tape.sum_all(sq)
}

/// Per-class unit prototypes with EMA updates and class temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeState {
    /// `nu[c]` for class `c ∈ {0, 1}`; `None` until first seen.
    pub nu: [Option<Vec<f64>>; 2],
    pub momentum: f64,
    /// `[ς₋, ς₊]`, indexed by class.
    pub temps: [f64; 2],
}

impl PrototypeState {
    pub fn new(momentum: f64, temp_neg: f64, temp_pos: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0,1), got {momentum}")));
        }
        if !(temp_neg > 0.0 && temp_pos > 0.0) {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        Ok(Self { nu: [None, None], momentum, temps: [temp_neg, temp_pos] })
    }

    pub fn is_ready(&self) -> bool {
        self.nu[0].is_some() && self.nu[1].is_some()
    }

    /// EMA towards each present class's batch mean; first sighting initializes.
    pub fn update(&mut self, features: &[Vec<f64>], labels: &[u8]) {
        self.update_with_momentum(features, labels, self.momentum);
    }

    fn update_with_momentum(&mut self, features: &[Vec<f64>], labels: &[u8], zeta: f64) {
        for c in 0..2u8 {
            let members: Vec<&Vec<f64>> =
                features.iter().zip(labels).filter(|(_, &y)| y == c).map(|(f, _)| f).collect();
            if members.is_empty() {
                continue;
            }
            let d = members[0].len();
            let mut mean = vec![0.0; d];
            for f in &members {
                for (m, v) in mean.iter_mut().zip(f.iter()) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            let slot = &mut self.nu[c as usize];
            let next = match slot {
                Some(old) => old.iter().zip(&mean).map(|(o, m)| zeta * o + (1.0 - zeta) * m).collect(),
                None => mean,
            };
            if let Some(unit) = unit(&next) {
                *slot = Some(unit);
            }
        }
    }

    /// Random unit vector for a class never seen during a full epoch.
    pub fn fill_missing<R: Rng>(&mut self, dim: usize, rng: &mut R) {
        for slot in &mut self.nu {
            if slot.is_none() {
                loop {
                    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                    if let Some(u) = unit(&v) {
                        *slot = Some(u);
                        break;
                    }
                }
            }
        }
    }

    /// `κ_c = ⟨ĝ, ν_c⟩ / ς_c` for both classes.
    pub fn logits(&self, g: &[f64]) -> Result<[f64; 2]> {
        let ghat = unit(g).ok_or(Error::DegenerateFeature { norm: norm(g) })?;
        let mut k = [0.0; 2];
        for c in 0..2 {
            let nu = self.nu[c]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument(format!("prototype {c} not initialized")))?;
            k[c] = ghat.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>() / self.temps[c];
        }
        Ok(k)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = norm(v);
    (n > 1e-12 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// `log(1 + exp(κ_ȳ − κ_y))`.
pub fn proto_loss(g: &[f64], y: u8, state: &PrototypeState) -> Result<f64> {
    let k = state.logits(g)?;
    Ok(softplus(k[1 - y as usize] - k[y as usize]))
}

pub fn proto_loss_on_tape(tape: &mut Tape, g: Var, y: u8, state: &PrototypeState) -> Result<Var> {
    let n = norm(tape.value(g).as_slice().expect("row vector is contiguous"));
    if !(n > 1e-12) {
        return Err(Error::DegenerateFeature { norm: n });
    }
    let own = y as usize;
    let other = 1 - own;
    let col = |c: usize| -> Result<Array2<f64>> {
        let nu = state.nu[c]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("prototype {c} not initialized")))?;
        Ok(Array2::from_shape_vec((nu.len(), 1), nu.iter().map(|v| v / state.temps[c]).collect())
            .expect("column"))
    };
    // (ν_ȳ/ς_ȳ − ν_y/ς_y) as one column keeps the graph short
    let diff = col(other)? - col(own)?;
    let ghat = tape.normalize_rows(g);
    let w = tape.constant(diff);
    let margin = tape.matmul(ghat, w);
    Ok(tape.softplus(margin))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub eta_dyn: f64,
    pub eta_con: f64,
    pub beta_plus: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { eta_dyn: 0.25, eta_con: 0.10, beta_plus: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sup: f64,
    pub dyn_: f64,
    pub proto: f64,
}

/// `L_sup + η_dyn·L_dyn + η_con·L_proto`.
pub fn total_loss(parts: LossParts, weights: &LossWeights) -> f64 {
    parts.sup + weights.eta_dyn * parts.dyn_ + weights.eta_con * parts.proto
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(probs: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Metrics {
    pub fn balanced_accuracy(&self) -> f64 {
        0.5 * (self.sensitivity + self.specificity)
    }

    pub fn from_confusion(c: &Confusion) -> Result<Self> {
        if c.total() == 0 {
            return Err(Error::UndefinedMetric("no predictions".into()));
        }
        if c.tp + c.fn_ == 0 {
            return Err(Error::UndefinedMetric("no positive labels".into()));
        }
        if c.tn + c.fp == 0 {
            return Err(Error::UndefinedMetric("no negative labels".into()));
        }
        Ok(Self {
            accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
            sensitivity: c.tp as f64 / (c.tp + c.fn_) as f64,
            specificity: c.tn as f64 / (c.tn + c.fp) as f64,
        })
    }
}

/// Accuracy, sensitivity and specificity at `threshold`.
pub fn metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    Metrics::from_confusion(&Confusion::from_predictions(probs, labels, threshold))
}

/// Dense `1×D` row from a slice.
pub(crate) fn row(v: &[f64]) -> Array2<f64> {
    Array1::from(v.to_vec()).insert_axis(ndarray::Axis(0))
}
