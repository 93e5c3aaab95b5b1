//! Synthetic paired connectomes with a planted class signal.
//!
//! Every subject shares a low-rank log-domain template `L`. Baseline is
//! `B0 = exp(L + W)` for a subject perturbation `W` (three times wider than the
//! within-subject change, as individual differences dominate); follow-up is
//! `B2 = exp(L + W + y·s·Δ + drift + V)` for a fixed trace-free direction `Δ`,
//! so the label lives in the baseline-to-follow-up tangent displacement.
//! Behavior at each visit is `y·coupling·u + N(0, I)`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::params::derived_rng;
use crate::error::{Error, Result};
use crate::spd_align::trace_deflate;
use crate::symmat::{sym_expm, SymMatrix};

/// Behavior features per visit.
pub const BEHAVIOR_DIM: usize = 6;

/// One subject: two connectomes, two behavior vectors and a label.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub b0: SymMatrix,
    pub b2: SymMatrix,
    pub c0: Vec<f64>,
    pub c2: Vec<f64>,
    pub y: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n_subjects: usize,
    pub n_nodes: usize,
    pub pos_rate: f64,
    /// Scale of the class displacement `Δ` in the log domain.
    pub signal_strength: f64,
    /// Shift of the behavior mean for positives, in noise standard deviations.
    pub behavior_coupling: f64,
    /// Spectral scale of the subject and visit perturbations.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_subjects: 600,
            n_nodes: 53,
            pos_rate: 220.0 / 7168.0,
            signal_strength: 1.0,
            behavior_coupling: 0.0,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_rate > 0.0 && self.pos_rate < 1.0) {
            return Err(Error::InvalidArgument(format!("pos_rate must lie in (0,1), got {}", self.pos_rate)));
        }
        if self.n_nodes < 2 {
            return Err(Error::InvalidArgument("n_nodes must be at least 2".into()));
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("behavior_coupling", self.behavior_coupling),
            ("noise_scale", self.noise_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_positive(&self) -> usize {
        (self.n_subjects as f64 * self.pos_rate).round() as usize
    }
}

/// Template, class direction, drift and behavior direction shared by all subjects.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: GenSpec,
    template: Array2<f64>,
    direction: Array2<f64>,
    drift: Array2<f64>,
    behavior_dir: Vec<f64>,
}

const TEMPLATE_RANK: usize = 3;
const DRIFT_SCALE: f64 = 0.1;
/// Between-subject baseline spread relative to within-subject change.
pub const BASELINE_SPREAD: f64 = 3.0;

/// Trace-free symmetric matrix with Frobenius norm `√(n/2)`.
fn unit_direction(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let r = random_sym(n, rng);
    let d = trace_deflate(&SymMatrix::from_array(r).expect("square")).into_array();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d * ((n as f64 / 2.0).sqrt() / norm)
}

impl Generator {
    pub fn new(spec: GenSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.n_nodes;
        let mut rng = derived_rng(spec.seed, "synth/template");
        let mut template = Array2::<f64>::zeros((n, n));
        for k in 0..TEMPLATE_RANK {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let weight = 1.5 / (k + 1) as f64;
            for i in 0..n {
                for j in 0..n {
                    template[[i, j]] += weight * v[i] * v[j] / (norm * norm);
                }
            }
        }
        let direction = unit_direction(n, &mut derived_rng(spec.seed, "synth/direction"));
        let drift = unit_direction(n, &mut derived_rng(spec.seed, "synth/drift")) * DRIFT_SCALE;
        let mut urng = derived_rng(spec.seed, "synth/behavior");
        let u: Vec<f64> = (0..BEHAVIOR_DIM).map(|_| StandardNormal.sample(&mut urng)).collect();
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(Self { spec, template, direction, drift, behavior_dir: u.iter().map(|x| x / un).collect() })
    }

    pub fn spec(&self) -> &GenSpec {
        &self.spec
    }

    /// Trace-free class direction `Δ`.
    pub fn direction(&self) -> &Array2<f64> {
        &self.direction
    }

    fn perturbation(&self, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let n = self.spec.n_nodes;
        // entries of variance σ²/n give a spectral norm near 2σ
        random_sym(n, rng) * (self.spec.noise_scale / (n as f64).sqrt())
    }

    pub fn subject(&self, id: String, y: u8, rng: &mut ChaCha8Rng) -> Result<SubjectRecord> {
        let w = self.perturbation(rng) * BASELINE_SPREAD;
        let v = self.perturbation(rng);
        let log0 = &self.template + &w;
        let mut log2 = &log0 + &self.drift + &v;
        if y == 1 {
            log2 = log2 + &self.direction * self.spec.signal_strength;
        }
        let b0 = sym_expm(&SymMatrix::from_array(log0)?)?;
        let b2 = sym_expm(&SymMatrix::from_array(log2)?)?;
        let shift = if y == 1 { self.spec.behavior_coupling } else { 0.0 };
        let mut behavior = || -> Vec<f64> {
            self.behavior_dir
                .iter()
                .map(|u| {
                    let z: f64 = StandardNormal.sample(rng);
                    shift * u + z
                })
                .collect()
        };
        let c0 = behavior();
        let c2 = behavior();
        Ok(SubjectRecord { id, b0, b2, c0, c2, y })
    }

    /// Exactly `round(n·pos_rate)` positives, in seeded random order.
    pub fn dataset(&self) -> Result<Vec<SubjectRecord>> {
        let n = self.spec.n_subjects;
        let mut labels = vec![0u8; n];
        labels[..self.spec.num_positive().min(n)].fill(1);
        labels.shuffle(&mut derived_rng(self.spec.seed, "synth/labels"));
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let mut rng = derived_rng(self.spec.seed, &format!("synth/subject/{i}"));
                self.subject(format!("sub-{i:05}"), y, &mut rng)
            })
            .collect()
    }
}

pub fn gen_subject(spec: &GenSpec, y: u8, rng: &mut ChaCha8Rng) -> Result<SubjectRecord> {
    Generator::new(*spec)?.subject("sub".into(), y, rng)
}

pub fn gen_dataset(spec: &GenSpec) -> Result<Vec<SubjectRecord>> {
    Generator::new(*spec)?.dataset()
}

/// Symmetric matrix with independent standard normal entries on and above the diagonal.
pub fn random_sym<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let z: f64 = StandardNormal.sample(rng);
            a[[i, j]] = z;
            a[[j, i]] = z;
        }
    }
    a
}

/// `exp(S)` for a random symmetric `S` scaled to spectral radius about `2·scale`.
pub fn random_spd<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> SymMatrix {
    let s = random_sym(n, rng) * (scale / (n as f64).sqrt());
    sym_expm(&SymMatrix::from_array(s).expect("square")).expect("finite input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd_align::align_pair;
    use crate::symmat::{spd_logm, sym_eig};
    use rand::SeedableRng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn small(seed: u64) -> GenSpec {
        GenSpec {
            n_subjects: 40,
            n_nodes: 10,
            pos_rate: 0.25,
            signal_strength: 1.0,
            behavior_coupling: 1.0,
            noise_scale: 0.5,
            seed,
        }
    }

    #[test]
    fn positive_count_and_determinism() {
        let spec = GenSpec { n_subjects: 600, pos_rate: 0.2, ..small(1) };
        assert_eq!(spec.num_positive(), 120);
        let a = gen_dataset(&small(3)).unwrap();
        let b = gen_dataset(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.y == 1).count(), 10);
        let c = gen_dataset(&small(4)).unwrap();
        assert_ne!(a[0].b0, c[0].b0);
        assert!((GenSpec::default().pos_rate - 0.0307).abs() < 1e-4);
    }

    #[test]
    fn matrices_are_spd_and_align_without_ridge() {
        for s in gen_dataset(&small(5)).unwrap() {
            assert!(sym_eig(&s.b0).unwrap().values[0] > 0.0);
            assert!(sym_eig(&s.b2).unwrap().values[0] > 0.0);
            align_pair(s.b0.as_array(), s.b2.as_array(), 0.0).unwrap();
            assert!(s.c0.iter().chain(&s.c2).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn noiseless_negative_differs_only_by_drift() {
        let spec = GenSpec { noise_scale: 0.0, ..small(6) };
        let g = Generator::new(spec).unwrap();
        let s = g.subject("x".into(), 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let diff = spd_logm(&s.b2).unwrap().sub(&spd_logm(&s.b0).unwrap());
        let err = (diff.as_array() - &g.drift).iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        let p = g.subject("x".into(), 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let diff = spd_logm(&p.b2).unwrap().sub(&spd_logm(&p.b0).unwrap());
        let expect = &g.drift + &(g.direction() * spec.signal_strength);
        assert!((diff.as_array() - &expect).iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn direction_is_trace_free_with_fixed_norm() {
        let g = Generator::new(small(7)).unwrap();
        let d = g.direction();
        assert!(d.diag().sum().abs() < 1e-12);
        assert!((d.iter().map(|v| v * v).sum::<f64>().sqrt() - 5f64.sqrt()).abs() < 1e-12);
    }

    /// Welch two-sample test on follow-up tangent norms; no signal means no rejection.
    #[test]
    fn null_spec_is_label_independent() {
        let spec = GenSpec {
            n_subjects: 400,
            n_nodes: 6,
            pos_rate: 0.5,
            signal_strength: 0.0,
            behavior_coupling: 0.0,
            noise_scale: 0.5,
            seed: 8,
        };
        let data = gen_dataset(&spec).unwrap();
        let mut groups = [Vec::new(), Vec::new()];
        for s in &data {
            let pair = align_pair(s.b0.as_array(), s.b2.as_array(), 1e-3).unwrap();
            let norm = pair.y2.frobenius_norm();
            groups[s.y as usize].push(norm);
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let (m0, s0) = stats(&groups[0]);
        let (m1, s1) = stats(&groups[1]);
        let z = (m0 - m1) / (s0 + s1).sqrt();
        let p = 2.0 * (1.0 - Normal::standard().cdf(z.abs()));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(Generator::new(GenSpec { pos_rate: 0.0, ..small(1) }).is_err());
        assert!(Generator::new(GenSpec { noise_scale: -1.0, ..small(1) }).is_err());
    }
}
