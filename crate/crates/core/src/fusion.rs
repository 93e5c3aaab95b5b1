//! Dual-time attention, pooling and the fused dynamics seed.

use ndarray::Array2;

use crate::engine::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct MixParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    /// Gate pre-activation; `π = σ(υ)`.
    pub upsilon: Var,
    pub mix: MixParams,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOut {
    pub r0: Var,
    pub r2: Var,
    pub pi: Var,
    /// Row-stochastic maps `[self₀, cross₀, self₂, cross₂]`.
    pub maps: [Var; 4],
}

/// `softmax(Q Kᵀ / √D)` row-wise.
pub fn attention_map(tape: &mut Tape, q: Var, k: Var) -> Var {
    let d = tape.value(q).ncols() as f64;
    let logits = tape.matmul_nt(q, k);
    let logits = tape.scale(logits, 1.0 / d.sqrt());
    tape.softmax_rows(logits)
}

/// `R̃τ = π·A(Qτ,Kτ)Vτ + (1−π)·A(Qτ,Kτ̄)Vτ̄` for both visits, single head.
pub fn dual_attention(tape: &mut Tape, r0: Var, r2: Var, params: &FusionParams) -> Result<AttentionOut> {
    let (n0, d0) = tape.value(r0).dim();
    let (n2, d2) = tape.value(r2).dim();
    let dq = tape.value(params.wq).dim();
    if n0 != n2
        || d0 != d2
        || dq != (d0, d0)
        || tape.value(params.wk).dim() != dq
        || tape.value(params.wv).dim() != dq
    {
        return Err(Error::ShapeMismatch(format!(
            "attention: R0 {:?}, R2 {:?}, W {:?}",
            (n0, d0),
            (n2, d2),
            dq
        )));
    }
    let q0 = tape.matmul(r0, params.wq);
    let k0 = tape.matmul(r0, params.wk);
    let v0 = tape.matmul(r0, params.wv);
    let q2 = tape.matmul(r2, params.wq);
    let k2 = tape.matmul(r2, params.wk);
    let v2 = tape.matmul(r2, params.wv);

    let pi = tape.sigmoid(params.upsilon);
    let one = tape.constant_scalar(1.0);
    let rest = tape.sub(one, pi);

    let mixed = |tape: &mut Tape, q: Var, k_self: Var, v_self: Var, k_other: Var, v_other: Var| {
        let a_self = attention_map(tape, q, k_self);
        let a_cross = attention_map(tape, q, k_other);
        let s = tape.matmul(a_self, v_self);
        let c = tape.matmul(a_cross, v_other);
        let s = tape.mul_scalar(s, pi);
        let c = tape.mul_scalar(c, rest);
        (tape.add(s, c), a_self, a_cross)
    };
    let (rt0, s0, c0) = mixed(tape, q0, k0, v0, k2, v2);
    let (rt2, s2, c2) = mixed(tape, q2, k2, v2, k0, v0);
    Ok(AttentionOut { r0: rt0, r2: rt2, pi, maps: [s0, c0, s2, c2] })
}

/// Mean over node rows.
pub fn pool(tape: &mut Tape, r: Var) -> Var {
    tape.mean_rows(r)
}

/// `δ = softmax(MLP([r̃0; r̃2]))`, `r_seed = δ₀r̃0 + δ₂r̃2`. Returns `(r_seed, δ)`.
pub fn fuse_seed(tape: &mut Tape, rt0: Var, rt2: Var, mix: &MixParams) -> (Var, Var) {
    let cat = tape.concat_cols(&[rt0, rt2]);
    let h = tape.matmul(cat, mix.w1);
    let h = tape.add_row(h, mix.b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, mix.w2);
    let o = tape.add_row(o, mix.b2);
    let delta = tape.softmax_rows(o);
    let d0 = tape.slice_cols(delta, 0, 1);
    let d2 = tape.slice_cols(delta, 1, 2);
    let a = tape.mul_scalar(rt0, d0);
    let b = tape.mul_scalar(rt2, d2);
    (tape.add(a, b), delta)
}

/// Value-level convenience: `(R̃0, R̃2)` for fixed weights.
pub fn dual_attention_values(
    r0: &Array2<f64>,
    r2: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    upsilon: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let p = FusionParams {
        wq: tape.constant(wq.clone()),
        wk: tape.constant(wk.clone()),
        wv: tape.constant(wv.clone()),
        upsilon: tape.constant_scalar(upsilon),
        mix: MixParams {
            w1: tape.constant(Array2::zeros((1, 1))),
            b1: tape.constant(Array2::zeros((1, 1))),
            w2: tape.constant(Array2::zeros((1, 1))),
            b2: tape.constant(Array2::zeros((1, 1))),
        },
    };
    let a = tape.constant(r0.clone());
    let b = tape.constant(r2.clone());
    let out = dual_attention(&mut tape, a, b, &p)?;
    Ok((tape.value(out.r0).clone(), tape.value(out.r2).clone()))
}
