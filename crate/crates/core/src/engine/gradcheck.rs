//! Central finite differences against the reverse sweep, per registered tensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, TrainConfig};
use super::model::{batch_gradients, dims_for, prepare_dataset, BehaviorStats, PreparedSubject};
use super::params::{derived_rng, ModelParams};
use crate::error::{Error, Result};
use crate::objective::{LossWeights, PrototypeState};
use crate::synthdata::{gen_dataset, GenSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub scalars: usize,
    /// `‖a − f‖ / max(‖a‖, ‖f‖, 1e-7)` over the whole tensor.
    pub rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> Vec<&TensorCheck> {
        self.tensors.iter().filter(|t| !(t.rel_err <= tol)).collect()
    }
}

/// Frozen inputs of a gradient check: eval mode, fixed prototypes.
#[derive(Debug, Clone)]
pub struct CheckProblem {
    pub params: ModelParams,
    pub subjects: Vec<PreparedSubject>,
    pub stats: BehaviorStats,
    pub weights: LossWeights,
    pub protos: PrototypeState,
    pub ablation: Ablation,
}

impl CheckProblem {
    /// Two subjects (one per class), `N=8`, `D0=8`, `D=6`, `S=2`.
    pub fn small(seed: u64) -> Result<Self> {
        let spec = GenSpec {
            n_subjects: 2,
            n_nodes: 8,
            pos_rate: 0.5,
            signal_strength: 1.0,
            behavior_coupling: 1.0,
            noise_scale: 0.5,
            seed,
        };
        let cfg = TrainConfig { d0: 8, d: 6, token_steps: 2, seed, ..Default::default() };
        let subjects = prepare_dataset(&gen_dataset(&spec)?, &cfg)?;
        let dims = dims_for(&subjects, &cfg)?;
        let mut params = ModelParams::init(dims, seed, cfg.pi_init)?;
        // move the gate away from its symmetric start so υ's gradient is generic
        params.get_mut(super::params::UPSILON)[[0, 0]] = 0.3;
        // and give the zero-initialized behavior output layer a generic value
        let mut rng = derived_rng(seed, "gradcheck/beh_w2");
        params.get_mut(super::params::BEH_W2).mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let stats = BehaviorStats::fit(&subjects, &[0, 1])?;
        let mut protos = PrototypeState::new(cfg.ema_momentum, cfg.temp_neg, cfg.temp_pos)?;
        protos.fill_missing(dims.d, &mut derived_rng(seed, "gradcheck/protos"));
        Ok(Self {
            params,
            subjects,
            stats,
            weights: LossWeights { eta_dyn: cfg.eta_dyn, eta_con: cfg.eta_con, beta_plus: 2.0 },
            protos,
            ablation: Ablation::Full,
        })
    }

    fn loss(&self, params: &ModelParams) -> Result<f64> {
        let batch: Vec<&PreparedSubject> = self.subjects.iter().collect();
        Ok(batch_gradients(params, &batch, &self.stats, self.ablation, &self.weights, &self.protos, None)?
            .loss)
    }
}

/// Compares every gradient entry with `(L(p+h) − L(p−h)) / 2h`.
pub fn gradcheck(problem: &CheckProblem, h: f64) -> Result<GradcheckReport> {
    let batch: Vec<&PreparedSubject> = problem.subjects.iter().collect();
    let analytic = batch_gradients(
        &problem.params,
        &batch,
        &problem.stats,
        problem.ablation,
        &problem.weights,
        &problem.protos,
        None,
    )?
    .grads;
    let mut tensors = Vec::new();
    let names: Vec<String> = problem.params.names().map(str::to_string).collect();
    for name in names {
        let a = &analytic[&name];
        let mut work = problem.params.clone();
        let mut numeric = Vec::with_capacity(a.len());
        for idx in 0..a.len() {
            let orig = work.get(&name).as_slice().expect("standard layout")[idx];
            work.get_mut(&name).as_slice_mut().expect("standard layout")[idx] = orig + h;
            let up = problem.loss(&work)?;
            work.get_mut(&name).as_slice_mut().expect("standard layout")[idx] = orig - h;
            let down = problem.loss(&work)?;
            work.get_mut(&name).as_slice_mut().expect("standard layout")[idx] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        let mut max_abs: f64 = 0.0;
        for (x, f) in a.iter().zip(&numeric) {
            diff2 += (x - f) * (x - f);
            a2 += x * x;
            f2 += f * f;
            max_abs = max_abs.max((x - f).abs());
        }
        let rel_err = diff2.sqrt() / a2.sqrt().max(f2.sqrt()).max(1e-7);
        if !rel_err.is_finite() {
            return Err(Error::NonFinite(format!("gradient check of {name}")));
        }
        tensors.push(TensorCheck { name, scalars: a.len(), rel_err, max_abs_err: max_abs });
    }
    Ok(GradcheckReport { step: h, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tensor_is_checked() {
        let p = CheckProblem::small(0).unwrap();
        assert_eq!(p.subjects.len(), 2);
        assert_ne!(p.subjects[0].y, p.subjects[1].y);
        let report = gradcheck(&p, 1e-5).unwrap();
        assert_eq!(report.tensors.len(), p.params.names().count());
        assert!(report.max_rel_err() <= 1e-4, "{:#?}", report.failures(1e-4));
    }
}
