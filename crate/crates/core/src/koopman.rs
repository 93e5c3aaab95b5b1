//! Spectrally bounded linear dynamics with behavior-conditioned offsets.
//!
//! `U = Φ·diag(tanh χ)·Φ⁻¹`, so every eigenvalue of `U` lies in `(−1, 1)`.
//! Vectors are rows, so one step is `r ↦ r·Uᵀ + m`.

use ndarray::Array2;

use crate::engine::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::symmat::{sym_eig, SymMatrix};

/// Largest admissible 2-norm condition number of `Φ`.
pub const MAX_CONDITION: f64 = 1e8;
/// Diagonal shift applied once when `Φ` is too ill-conditioned.
pub const CONDITION_RIDGE: f64 = 1e-6;

/// `σ_max(Φ)/σ_min(Φ)`, infinite for a singular matrix.
pub fn condition_number(phi: &Array2<f64>) -> Result<f64> {
    let gram = SymMatrix::from_array(phi.t().dot(phi))?;
    let eig = sym_eig(&gram)?;
    let lo = eig.values[0];
    let hi = eig.values[eig.values.len() - 1];
    if lo <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((hi / lo).sqrt())
}

/// How `Φ` was admitted for assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub condition: f64,
    pub ridged: bool,
}

/// Checks `cond(Φ)`, retrying once with `Φ + 1e-6·I`.
pub fn admit_phi(phi: &Array2<f64>) -> Result<ConditionReport> {
    let condition = condition_number(phi)?;
    if condition <= MAX_CONDITION {
        return Ok(ConditionReport { condition, ridged: false });
    }
    let shifted = phi + &(Array2::<f64>::eye(phi.nrows()) * CONDITION_RIDGE);
    let condition = condition_number(&shifted)?;
    if condition <= MAX_CONDITION {
        return Ok(ConditionReport { condition, ridged: true });
    }
    Err(Error::IllConditioned { condition })
}

/// `U = Φ·diag(tanh χ)·Φ⁻¹` on the tape, after the condition check.
pub fn assemble_on_tape(tape: &mut Tape, phi: Var, chi: Var) -> Result<(Var, ConditionReport)> {
    let d = tape.value(phi).nrows();
    if tape.value(phi).dim() != (d, d) || tape.value(chi).dim() != (1, d) {
        return Err(Error::ShapeMismatch(format!(
            "koopman: Φ {:?}, χ {:?}",
            tape.value(phi).dim(),
            tape.value(chi).dim()
        )));
    }
    let report = admit_phi(tape.value(phi))?;
    let phi =
        if report.ridged { tape.add_const(phi, &(Array2::<f64>::eye(d) * CONDITION_RIDGE)) } else { phi };
    let sigma = tape.tanh(chi);
    let scaled = tape.mul_row(phi, sigma);
    let inv = tape.inverse(phi)?;
    Ok((tape.matmul(scaled, inv), report))
}

pub fn assemble_operator(phi: &Array2<f64>, chi: &[f64]) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let p = tape.constant(phi.clone());
    let c = tape.constant(
        Array2::from_shape_vec((1, chi.len()), chi.to_vec())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
    );
    let (u, _) = assemble_on_tape(&mut tape, p, c)?;
    Ok(tape.value(u).clone())
}

#[derive(Debug, Clone, Copy)]
pub struct BehaviorParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `m = W2·ReLU(W1·c + b1) + b2` for a `1×F` behavior row.
pub fn behavior_offset(tape: &mut Tape, c: Var, params: &BehaviorParams) -> Var {
    let h = tape.matmul(c, params.w1);
    let h = tape.add_row(h, params.b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, params.w2);
    tape.add_row(o, params.b2)
}

/// Two steps from the seed: `r̂1 = U·r_seed + m⁰`, `r̂2 = U·r̂1 + m²`.
pub fn rollout(tape: &mut Tape, seed: Var, u: Var, m0: Var, m2: Var) -> (Var, Var) {
    let a = tape.matmul_nt(seed, u);
    let r1 = tape.add(a, m0);
    let b = tape.matmul_nt(r1, u);
    let r2 = tape.add(b, m2);
    (r1, r2)
}

/// Zero-offset iterates `r, U r, U² r, …` as plain vectors.
pub fn free_iterates(u: &Array2<f64>, seed: &[f64], steps: usize) -> Vec<Vec<f64>> {
    let mut cur = ndarray::Array1::from(seed.to_vec());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(cur.to_vec());
    for _ in 0..steps {
        cur = u.dot(&cur);
        out.push(cur.to_vec());
    }
    out
}

/// Steps after which `κ·ρᵗ` drops below `tol`; `None` when `ρ ≥ 1`.
pub fn decay_bound(condition: f64, rho: f64, tol: f64) -> Option<usize> {
    if !(rho < 1.0) {
        return None;
    }
    if rho <= 0.0 {
        return Some(1);
    }
    Some(((tol / condition).ln() / rho.ln()).ceil().max(0.0) as usize)
}
