//! Named registry of every trainable tensor.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::engine::tape::{Tape, Var};
use crate::error::{Error, Result};

pub const THETA_RAW: &str = "tokens.theta_raw";
pub const PROJ_W: &str = "proj.weight";
pub const PROJ_B: &str = "proj.bias";
pub const GCN1_W: &str = "gcn1.weight";
pub const GCN1_B: &str = "gcn1.bias";
pub const GATE_W1: &str = "gate.w1";
pub const GATE_B1: &str = "gate.b1";
pub const GATE_W2: &str = "gate.w2";
pub const GATE_B2: &str = "gate.b2";
pub const GCN2_W: &str = "gcn2.weight";
pub const GCN2_B: &str = "gcn2.bias";
pub const ATTN_Q: &str = "attn.wq";
pub const ATTN_K: &str = "attn.wk";
pub const ATTN_V: &str = "attn.wv";
pub const UPSILON: &str = "fusion.upsilon";
pub const MIX_W1: &str = "mix.w1";
pub const MIX_B1: &str = "mix.b1";
pub const MIX_W2: &str = "mix.w2";
pub const MIX_B2: &str = "mix.b2";
pub const PHI: &str = "koopman.phi";
pub const CHI: &str = "koopman.chi";
pub const BEH_W1: &str = "behavior.w1";
pub const BEH_B1: &str = "behavior.b1";
pub const BEH_W2: &str = "behavior.w2";
pub const BEH_B2: &str = "behavior.b2";
pub const CLS_PROJ_W: &str = "cls.proj_w";
pub const CLS_PROJ_B: &str = "cls.proj_b";
pub const CLS_HEAD_W: &str = "cls.head_w";
pub const CLS_HEAD_B: &str = "cls.head_b";

/// Sizes that fix every tensor shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Nodes per connectome.
    pub n: usize,
    /// Behavior features per visit.
    pub f: usize,
    /// Heat-kernel token steps.
    pub s: usize,
    pub d0: usize,
    pub d: usize,
}

impl ModelDims {
    pub fn shapes(&self) -> Vec<(&'static str, (usize, usize))> {
        let ModelDims { n, f, s, d0, d } = *self;
        vec![
            (THETA_RAW, (1, s)),
            (PROJ_W, ((s + 1) * n, d0)),
            (PROJ_B, (1, d0)),
            (GCN1_W, (d0, d)),
            (GCN1_B, (1, d)),
            (GATE_W1, (2 * d, d)),
            (GATE_B1, (1, d)),
            (GATE_W2, (d, 1)),
            (GATE_B2, (1, 1)),
            (GCN2_W, (d, d)),
            (GCN2_B, (1, d)),
            (ATTN_Q, (d, d)),
            (ATTN_K, (d, d)),
            (ATTN_V, (d, d)),
            (UPSILON, (1, 1)),
            (MIX_W1, (2 * d, d)),
            (MIX_B1, (1, d)),
            (MIX_W2, (d, 2)),
            (MIX_B2, (1, 2)),
            (PHI, (d, d)),
            (CHI, (1, d)),
            (BEH_W1, (f, d)),
            (BEH_B1, (1, d)),
            (BEH_W2, (d, d)),
            (BEH_B2, (1, d)),
            (CLS_PROJ_W, (2 * d, d)),
            (CLS_PROJ_B, (1, d)),
            (CLS_HEAD_W, (d, 1)),
            (CLS_HEAD_B, (1, 1)),
        ]
    }
}

/// `θ = softplus(raw)`; inverse used for initialization.
pub fn softplus_inverse(theta: f64) -> f64 {
    theta + (-(-theta).exp_m1()).ln()
}

/// Default token scales: `{0.5, 1.0}` for two steps, `0.5·s` in general.
pub fn default_thetas(s: usize) -> Vec<f64> {
    (1..=s).map(|k| 0.5 * k as f64).collect()
}

/// Seed derived from the run seed and a tensor name.
pub fn derived_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ModelParams {
    /// Fan-in scaled Gaussian weights, zero biases and behavior output layer,
    /// near-identity `Φ`, uniform `χ`.
    pub fn init(dims: ModelDims, seed: u64, pi_init: f64) -> Result<Self> {
        if !(pi_init > 0.0 && pi_init < 1.0) {
            return Err(Error::InvalidArgument(format!("pi_init must lie in (0,1), got {pi_init}")));
        }
        let mut tensors = BTreeMap::new();
        for (name, shape) in dims.shapes() {
            let mut rng = derived_rng(seed, name);
            let t = match name {
                THETA_RAW => Array2::from_shape_vec(
                    shape,
                    default_thetas(dims.s).into_iter().map(softplus_inverse).collect(),
                )
                .expect("theta shape"),
                UPSILON => Array2::from_elem(shape, (pi_init / (1.0 - pi_init)).ln()),
                PHI => Array2::from_shape_fn(shape, |(i, j)| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (if i == j { 1.0 } else { 0.0 }) + 0.01 * noise
                }),
                CHI => Array2::from_shape_fn(shape, |_| rng.random_range(-0.5..0.5)),
                // offsets start at zero so the rollout first reflects the connectome seed
                BEH_W2 => Array2::zeros(shape),
                _ if is_bias(name) => Array2::zeros(shape),
                _ => {
                    let std = (2.0 / shape.0 as f64).sqrt();
                    Array2::from_shape_fn(shape, |_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        std * z
                    })
                }
            };
            tensors.insert(name.to_string(), t);
        }
        Ok(Self { dims, tensors })
    }

    pub fn from_tensors(dims: ModelDims, tensors: BTreeMap<String, Array2<f64>>) -> Result<Self> {
        let expected = dims.shapes();
        if tensors.len() != expected.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape) in expected {
            match tensors.get(name) {
                Some(t) if t.dim() == shape => {}
                Some(t) => {
                    return Err(Error::ShapeMismatch(format!(
                        "{name}: expected {shape:?}, got {:?}",
                        t.dim()
                    )))
                }
                None => return Err(Error::ShapeMismatch(format!("missing tensor {name}"))),
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        self.tensors.get(name).unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("unknown tensor {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.tensors.iter_mut() {
            if name.starts_with(prefix) {
                t.fill(0.0);
            }
        }
    }
}

pub fn is_bias(name: &str) -> bool {
    name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") || name.ends_with("_b")
}

/// Tensors exempt from weight decay: biases, the fusion gate and the Koopman spectrum.
pub fn decay_exempt(name: &str) -> bool {
    is_bias(name) || name == UPSILON || name == CHI
}

/// Parameters placed on a tape as differentiable leaves.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params.iter().map(|(name, t)| (name.clone(), tape.param(t.clone()))).collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound tensor {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims { n: 8, f: 6, s: 2, d0: 8, d: 6 }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = ModelParams::init(dims(), 7, 0.5).unwrap();
        let b = ModelParams::init(dims(), 7, 0.5).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(dims(), 8, 0.5).unwrap();
        assert_ne!(a.get(PROJ_W), c.get(PROJ_W));
        for (name, shape) in dims().shapes() {
            assert_eq!(a.get(name).dim(), shape, "{name}");
        }
    }

    #[test]
    fn gate_and_token_init() {
        let p = ModelParams::init(dims(), 1, 0.5).unwrap();
        assert_eq!(p.get(UPSILON)[[0, 0]], 0.0);
        let thetas: Vec<f64> = p.get(THETA_RAW).iter().map(|&r| crate::engine::tape::softplus(r)).collect();
        assert!((thetas[0] - 0.5).abs() < 1e-12 && (thetas[1] - 1.0).abs() < 1e-12);
        assert!(p.get(CHI).iter().all(|c| c.abs() < 0.5));
        assert!(p.get(GCN1_B).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn decay_exemptions() {
        assert!(
            decay_exempt(UPSILON) && decay_exempt(CHI) && decay_exempt(CLS_HEAD_B) && decay_exempt(GATE_B2)
        );
        assert!(!decay_exempt(PHI) && !decay_exempt(PROJ_W) && !decay_exempt(THETA_RAW));
    }

    #[test]
    fn rejects_mismatched_registry() {
        let p = ModelParams::init(dims(), 1, 0.5).unwrap();
        let mut t: BTreeMap<String, Array2<f64>> = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        t.insert(PHI.into(), Array2::zeros((2, 2)));
        assert!(ModelParams::from_tensors(dims(), t).is_err());
    }
}
