//! The end-to-end map from a prepared subject to a logit, and its batch gradients.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, TrainConfig};
use super::dropout::{maybe_dropout, Dropout};
use super::params::*;
use super::tape::{sigmoid, Tape, Var};
use crate::encoder::{encode_visit, EdgeGateParams, EncoderParams, GcnLayerParams};
use crate::error::{Error, Result};
use crate::fusion::{dual_attention, fuse_seed, pool, FusionParams, MixParams};
use crate::graph_tokens::{build_knn_graph, project_on_tape, tokens_on_tape, VisitGraph};
use crate::koopman::{assemble_on_tape, behavior_offset, rollout, BehaviorParams};
use crate::objective::{
    classify, dyn_loss_on_tape, proto_loss_on_tape, row, weighted_bce_on_tape, ClassifierParams, LossParts,
    LossWeights, PrototypeState,
};
use crate::spd_align::{align_pair, spd_regularize};
use crate::synthdata::SubjectRecord;

/// Per-subject inputs that do not depend on trainable parameters.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub y: u8,
    /// Node features of visit 0 and visit 2.
    pub features: [Array2<f64>; 2],
    pub graphs: [VisitGraph; 2],
    pub behavior: [Vec<f64>; 2],
}

pub fn prepare_subject(
    rec: &SubjectRecord,
    epsilon: f64,
    k: usize,
    ablation: Ablation,
) -> Result<PreparedSubject> {
    let features = match ablation {
        Ablation::Euclidean => [
            spd_regularize(rec.b0.as_array(), epsilon)?.into_array(),
            spd_regularize(rec.b2.as_array(), epsilon)?.into_array(),
        ],
        _ => {
            let pair = align_pair(rec.b0.as_array(), rec.b2.as_array(), epsilon)?;
            [pair.y0.into_array(), pair.y2.into_array()]
        }
    };
    let graphs = [build_knn_graph(&features[0], k)?, build_knn_graph(&features[1], k)?];
    Ok(PreparedSubject {
        id: rec.id.clone(),
        y: rec.y,
        features,
        graphs,
        behavior: [rec.c0.clone(), rec.c2.clone()],
    })
}

/// Alignment and graphs for every record, in input order.
pub fn prepare_dataset(records: &[SubjectRecord], cfg: &TrainConfig) -> Result<Vec<PreparedSubject>> {
    records.par_iter().map(|r| prepare_subject(r, cfg.epsilon, cfg.k, cfg.ablation)).collect()
}

/// Behavior z-scoring statistics, pooled over both visits of the fitting subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl BehaviorStats {
    pub fn fit(subjects: &[PreparedSubject], idx: &[usize]) -> Result<Self> {
        let f = subjects
            .first()
            .map(|s| s.behavior[0].len())
            .ok_or_else(|| Error::InvalidArgument("no subjects".into()))?;
        if idx.is_empty() {
            return Err(Error::InvalidArgument("no subjects to fit behavior statistics".into()));
        }
        let mut mean = vec![0.0; f];
        let mut count = 0.0;
        for &i in idx {
            for c in &subjects[i].behavior {
                for (m, v) in mean.iter_mut().zip(c) {
                    *m += v;
                }
                count += 1.0;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; f];
        for &i in idx {
            for c in &subjects[i].behavior {
                for ((s, v), m) in var.iter_mut().zip(c).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let sd = var
            .iter()
            .map(|s| {
                let sd = (s / count).sqrt();
                if sd > 1e-8 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn identity(f: usize) -> Self {
        Self { mean: vec![0.0; f], sd: vec![1.0; f] }
    }

    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        c.iter().zip(self.mean.iter().zip(&self.sd)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// Tape handles of everything the losses and edge maps need.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOut {
    pub logit: Var,
    pub g_cls: Var,
    pub r_hat2: Var,
    /// Pre-fusion pooled follow-up representation.
    pub r2: Var,
    pub delta: Var,
    pub pi: Var,
    /// Kernel-modulated gates per visit, `E×1`.
    pub gated: [Var; 2],
}

fn encoder_params(b: &BoundParams) -> EncoderParams {
    EncoderParams {
        gcn1: GcnLayerParams { weight: b.get(GCN1_W), bias: b.get(GCN1_B) },
        gate: EdgeGateParams {
            w1: b.get(GATE_W1),
            b1: b.get(GATE_B1),
            w2: b.get(GATE_W2),
            b2: b.get(GATE_B2),
        },
        gcn2: GcnLayerParams { weight: b.get(GCN2_W), bias: b.get(GCN2_B) },
    }
}

fn fusion_params(b: &BoundParams) -> FusionParams {
    FusionParams {
        wq: b.get(ATTN_Q),
        wk: b.get(ATTN_K),
        wv: b.get(ATTN_V),
        upsilon: b.get(UPSILON),
        mix: MixParams { w1: b.get(MIX_W1), b1: b.get(MIX_B1), w2: b.get(MIX_W2), b2: b.get(MIX_B2) },
    }
}

/// Tokens, encoder, attention, fusion, rollout and classifier for one subject.
///
/// `u` is the already assembled Koopman operator. Dropout, when given, acts on
/// the first GCN layer of both visits and on the fused seed.
pub fn forward(
    tape: &mut Tape,
    bound: &BoundParams,
    u: Var,
    subject: &PreparedSubject,
    stats: &BehaviorStats,
    ablation: Ablation,
    mut dropout: Option<&mut Dropout>,
) -> Result<ForwardOut> {
    let enc = encoder_params(bound);
    let mut encoded = Vec::with_capacity(2);
    for v in 0..2 {
        let y = tape.constant(subject.features[v].clone());
        let tokens = tokens_on_tape(tape, y, &subject.graphs[v], bound.get(THETA_RAW));
        let ybreve = project_on_tape(tape, &tokens, bound.get(PROJ_W), bound.get(PROJ_B))?;
        encoded.push(encode_visit(tape, ybreve, &subject.graphs[v], &enc, dropout.as_deref_mut())?);
    }
    let fusion = fusion_params(bound);
    let att = dual_attention(tape, encoded[0].r, encoded[1].r, &fusion)?;
    let rt0 = pool(tape, att.r0);
    let rt2 = pool(tape, att.r2);
    let r2 = pool(tape, encoded[1].r);
    let (seed, delta) = fuse_seed(tape, rt0, rt2, &fusion.mix);
    let seed = maybe_dropout(tape, seed, dropout);

    let d = tape.value(seed).ncols();
    let (m0, m2) = if ablation == Ablation::NoBehavior {
        let z = tape.constant(Array2::zeros((1, d)));
        (z, z)
    } else {
        let beh = BehaviorParams {
            w1: bound.get(BEH_W1),
            b1: bound.get(BEH_B1),
            w2: bound.get(BEH_W2),
            b2: bound.get(BEH_B2),
        };
        let c0 = tape.constant(row(&stats.apply(&subject.behavior[0])));
        let c2 = tape.constant(row(&stats.apply(&subject.behavior[1])));
        (behavior_offset(tape, c0, &beh), behavior_offset(tape, c2, &beh))
    };
    let (_, r_hat2) = rollout(tape, seed, u, m0, m2);
    let cls = classify(
        tape,
        r_hat2,
        r2,
        &ClassifierParams {
            proj_w: bound.get(CLS_PROJ_W),
            proj_b: bound.get(CLS_PROJ_B),
            head_w: bound.get(CLS_HEAD_W),
            head_b: bound.get(CLS_HEAD_B),
        },
    );
    Ok(ForwardOut {
        logit: cls.logit,
        g_cls: cls.g_cls,
        r_hat2,
        r2,
        delta,
        pi: att.pi,
        gated: [encoded[0].gated, encoded[1].gated],
    })
}

/// `L_sup + η_dyn·L_dyn + η_con·L_proto`; the prototype term is dropped until both prototypes exist.
pub fn subject_loss(
    tape: &mut Tape,
    out: &ForwardOut,
    y: u8,
    weights: &LossWeights,
    protos: Option<&PrototypeState>,
) -> Result<(Var, LossParts)> {
    let sup = weighted_bce_on_tape(tape, out.logit, y, weights.beta_plus);
    let dyn_ = dyn_loss_on_tape(tape, out.r_hat2, out.r2);
    let scaled_dyn = tape.scale(dyn_, weights.eta_dyn);
    let mut loss = tape.add(sup, scaled_dyn);
    let mut parts = LossParts { sup: tape.scalar(sup), dyn_: tape.scalar(dyn_), proto: 0.0 };
    if let Some(state) = protos.filter(|s| s.is_ready()) {
        let p = proto_loss_on_tape(tape, out.g_cls, y, state)?;
        parts.proto = tape.scalar(p);
        let scaled = tape.scale(p, weights.eta_con);
        loss = tape.add(loss, scaled);
    }
    Ok((loss, parts))
}

/// Koopman operator for the current parameters, with its own small tape.
pub struct OperatorTape {
    tape: Tape,
    phi: Var,
    chi: Var,
    u: Var,
}

impl OperatorTape {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let mut tape = Tape::new();
        let phi = tape.param(params.get(PHI).clone());
        let chi = tape.param(params.get(CHI).clone());
        let (u, _) = assemble_on_tape(&mut tape, phi, chi)?;
        Ok(Self { tape, phi, chi, u })
    }

    pub fn value(&self) -> &Array2<f64> {
        self.tape.value(self.u)
    }

    /// Pulls `∂L/∂U` back onto `Φ` and `χ`.
    pub fn pullback(&mut self, grad_u: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let g = self.tape.constant(grad_u.clone());
        let prod = self.tape.mul(self.u, g);
        let s = self.tape.sum_all(prod);
        let grads = self.tape.backward(s, 1.0)?;
        Ok((grads.get_or_zeros(self.phi), grads.get_or_zeros(self.chi)))
    }
}

/// Everything training needs from one batch.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Gradient of the batch-mean loss for every registered tensor.
    pub grads: BTreeMap<String, Array2<f64>>,
    pub loss: f64,
    pub parts: LossParts,
    pub logits: Vec<f64>,
    /// Detached classifier features `g_cls`.
    pub features: Vec<Vec<f64>>,
}

struct SubjectPass {
    grads: BTreeMap<String, Array2<f64>>,
    grad_u: Array2<f64>,
    loss: f64,
    parts: LossParts,
    logit: f64,
    feature: Vec<f64>,
}

/// Batch-mean loss and gradients. `dropouts[i]` is used for subject `i` when present.
pub fn batch_gradients(
    params: &ModelParams,
    batch: &[&PreparedSubject],
    stats: &BehaviorStats,
    ablation: Ablation,
    weights: &LossWeights,
    protos: &PrototypeState,
    dropouts: Option<Vec<Dropout>>,
) -> Result<BatchOutput> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut op = OperatorTape::new(params)?;
    let u_value = op.value().clone();
    let inv_b = 1.0 / batch.len() as f64;
    let mut dropouts: Vec<Option<Dropout>> = match dropouts {
        Some(d) => d.into_iter().map(Some).collect(),
        None => vec![None; batch.len()],
    };
    let passes: Vec<Result<SubjectPass>> = batch
        .par_iter()
        .zip(dropouts.par_iter_mut())
        .map(|(subject, dropout)| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, params);
            let u = tape.param(u_value.clone());
            let out = forward(&mut tape, &bound, u, subject, stats, ablation, dropout.as_mut())?;
            let (loss, parts) = subject_loss(&mut tape, &out, subject.y, weights, Some(protos))?;
            let grads = tape.backward(loss, inv_b)?;
            Ok(SubjectPass {
                grads: bound.iter().map(|(n, v)| (n.clone(), grads.get_or_zeros(*v))).collect(),
                grad_u: grads.get_or_zeros(u),
                loss: tape.scalar(loss),
                parts,
                logit: tape.scalar(out.logit),
                feature: tape.value(out.g_cls).iter().copied().collect(),
            })
        })
        .collect();

    let mut grads: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut grad_u = Array2::<f64>::zeros(u_value.dim());
    let mut out = BatchOutput {
        grads: BTreeMap::new(),
        loss: 0.0,
        parts: LossParts::default(),
        logits: Vec::with_capacity(batch.len()),
        features: Vec::with_capacity(batch.len()),
    };
    for pass in passes {
        let pass = pass?;
        for (name, g) in pass.grads {
            match grads.get_mut(&name) {
                Some(acc) => *acc += &g,
                None => {
                    grads.insert(name, g);
                }
            }
        }
        grad_u += &pass.grad_u;
        out.loss += pass.loss * inv_b;
        out.parts.sup += pass.parts.sup * inv_b;
        out.parts.dyn_ += pass.parts.dyn_ * inv_b;
        out.parts.proto += pass.parts.proto * inv_b;
        out.logits.push(pass.logit);
        out.features.push(pass.feature);
    }
    let (gphi, gchi) = op.pullback(&grad_u)?;
    *grads.get_mut(PHI).expect("registered") += &gphi;
    *grads.get_mut(CHI).expect("registered") += &gchi;
    out.grads = grads;
    Ok(out)
}

/// Eval-mode outputs for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub prob: f64,
    pub delta: [f64; 2],
    pub pi: f64,
    pub gated: [Vec<f64>; 2],
    pub feature: Vec<f64>,
}

/// Deterministic forward passes without dropout.
pub fn predict(
    params: &ModelParams,
    subjects: &[&PreparedSubject],
    stats: &BehaviorStats,
    ablation: Ablation,
) -> Result<Vec<Prediction>> {
    let op = OperatorTape::new(params)?;
    let u_value = op.value().clone();
    subjects
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let bound = BoundParams::bind(&mut tape, params);
            let u = tape.constant(u_value.clone());
            let out = forward(&mut tape, &bound, u, s, stats, ablation, None)?;
            let logit = tape.scalar(out.logit);
            if !logit.is_finite() {
                return Err(Error::NonFinite(format!("logit of subject {}", s.id)));
            }
            let delta = tape.value(out.delta);
            Ok(Prediction {
                logit,
                prob: sigmoid(logit),
                delta: [delta[[0, 0]], delta[[0, 1]]],
                pi: tape.scalar(out.pi),
                gated: [
                    tape.value(out.gated[0]).iter().copied().collect(),
                    tape.value(out.gated[1]).iter().copied().collect(),
                ],
                feature: tape.value(out.g_cls).iter().copied().collect(),
            })
        })
        .collect()
}

/// Tensor sizes implied by a dataset and a configuration.
pub fn dims_for(subjects: &[PreparedSubject], cfg: &TrainConfig) -> Result<ModelDims> {
    let first = subjects.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    Ok(ModelDims {
        n: first.features[0].nrows(),
        f: first.behavior[0].len(),
        s: cfg.token_steps,
        d0: cfg.d0,
        d: cfg.d,
    })
}
