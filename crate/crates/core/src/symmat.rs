//! Functions of symmetric matrices via eigendecomposition.
//!
//! Every matrix function used by the manifold code (square root, inverse
//! square root, logarithm, exponential, inverse) goes through a single
//! cyclic Jacobi eigensolver followed by `V·diag(f(λ))·Vᵀ`. Results are
//! re-symmetrized so the output is bit-exactly symmetric.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

/// Eigenvalue floor applied before `log` and negative powers.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

static FLOOR_ACTIVATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of eigenvalues that have been raised to the floor since process start.
pub fn floor_activations() -> u64 {
    FLOOR_ACTIVATIONS.load(Ordering::Relaxed)
}

/// Dense symmetric matrix. Construction symmetrizes, so `m[i][j] == m[j][i]` bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(Array2<f64>);

impl SymMatrix {
    /// Symmetrizes `a` as `(a + aᵀ)/2`.
    pub fn from_array(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::ShapeMismatch(format!(
                "symmetric matrix must be square and non-empty, got {r}x{c}"
            )));
        }
        Ok(Self(symmetrize(&a)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("rows of unequal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let a = Array2::from_shape_vec((n, n), flat).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::from_array(a)
    }

    pub fn identity(n: usize) -> Self {
        Self(Array2::eye(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Array2::zeros((n, n)))
    }

    pub fn from_diag(d: &[f64]) -> Self {
        Self(Array2::from_diag(&Array1::from(d.to_vec())))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diag().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `M·S·Mᵀ`.
    pub fn congruence(&self, m: &Array2<f64>) -> SymMatrix {
        Self(symmetrize(&m.dot(&self.0).dot(&m.t())))
    }

    /// `self · inner · self`, symmetric whenever both factors are.
    pub fn sandwich(&self, inner: &SymMatrix) -> SymMatrix {
        Self(symmetrize(&self.0.dot(&inner.0).dot(&self.0)))
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        Self(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 - &other.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(sym_eig(self)?.values[0])
    }
}

/// Ascending eigenvalues with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenPair {
    /// `V·diag(f(λ))·Vᵀ`, symmetrized.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let fvals: Array1<f64> = self.values.mapv(f);
        reconstruct(&self.vectors, &fvals)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        reconstruct(&self.vectors, &self.values)
    }
}

fn reconstruct(vectors: &Array2<f64>, diag: &Array1<f64>) -> SymMatrix {
    let scaled = vectors * &diag.view().insert_axis(Axis(0));
    SymMatrix(symmetrize(&scaled.dot(&vectors.t())))
}

pub(crate) fn symmetrize(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = a[[i, i]];
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    out
}

pub(crate) fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cyclic Jacobi eigendecomposition with a fixed row-by-row sweep order.
pub fn sym_eig(s: &SymMatrix) -> Result<EigenPair> {
    if !s.is_finite() {
        return Err(Error::NonFinite("sym_eig input".into()));
    }
    let n = s.n();
    let mut a: Vec<f64> = s.0.iter().copied().collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro = frobenius(&s.0);
    let off = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
        (2.0 * acc).sqrt()
    };

    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        let residual = off(&a);
        if residual <= 1e-14 * fro || residual == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // negligible relative to both diagonal entries
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let residual = off(&a);
        if residual > 1e-12 * fro {
            return Err(Error::ConvergenceFailure { sweeps: MAX_SWEEPS, residual });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = Array1::from_iter(order.iter().map(|&i| a[i * n + i]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[[k, col]] = v[k * n + src];
        }
    }
    Ok(EigenPair { values, vectors })
}

/// Scalar function applied through the spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralFn {
    Sqrt,
    InvSqrt,
    Log,
    Exp,
    Inv,
    Pow(f64),
}

impl SpectralFn {
    pub fn requires_positive(self) -> bool {
        match self {
            SpectralFn::Exp => false,
            SpectralFn::Sqrt => false,
            SpectralFn::Pow(p) => p <= 0.0 || p.fract() != 0.0,
            SpectralFn::InvSqrt | SpectralFn::Log | SpectralFn::Inv => true,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            SpectralFn::Sqrt => x.sqrt(),
            SpectralFn::InvSqrt => 1.0 / x.sqrt(),
            SpectralFn::Log => x.ln(),
            SpectralFn::Exp => x.exp(),
            SpectralFn::Inv => 1.0 / x,
            SpectralFn::Pow(p) => x.powf(p),
        }
    }
}

/// `V·diag(f(max(λ, floor)))·Vᵀ`. A non-positive `floor` disables flooring.
pub fn spectral_apply(s: &SymMatrix, f: SpectralFn, floor: f64) -> Result<SymMatrix> {
    let eig = sym_eig(s)?;
    apply_to_eig(&eig, f, floor)
}

fn apply_to_eig(eig: &EigenPair, f: SpectralFn, floor: f64) -> Result<SymMatrix> {
    let mut vals = eig.values.clone();
    if floor > 0.0 {
        for v in vals.iter_mut() {
            if *v < floor {
                if f.requires_positive() {
                    FLOOR_ACTIVATIONS.fetch_add(1, Ordering::Relaxed);
                }
                *v = floor;
            }
        }
    }
    let bad = vals.iter().copied().find(|&v| match f {
        SpectralFn::Sqrt => v < 0.0,
        _ => f.requires_positive() && v <= 0.0,
    });
    if let Some(value) = bad {
        return Err(Error::Domain { value });
    }
    let fvals = vals.mapv(|x| f.eval(x));
    Ok(reconstruct(&eig.vectors, &fvals))
}

fn spd_apply(s: &SymMatrix, f: SpectralFn) -> Result<SymMatrix> {
    let eig = sym_eig(s)?;
    let min = eig.values[0];
    if min <= 0.0 {
        return Err(Error::NotSpd { min_eigenvalue: min });
    }
    apply_to_eig(&eig, f, DEFAULT_EIGEN_FLOOR)
}

pub fn spd_sqrt(s: &SymMatrix) -> Result<SymMatrix> {
    spd_apply(s, SpectralFn::Sqrt)
}

pub fn spd_invsqrt(s: &SymMatrix) -> Result<SymMatrix> {
    spd_apply(s, SpectralFn::InvSqrt)
}

pub fn spd_logm(s: &SymMatrix) -> Result<SymMatrix> {
    spd_apply(s, SpectralFn::Log)
}

pub fn spd_inv(s: &SymMatrix) -> Result<SymMatrix> {
    spd_apply(s, SpectralFn::Inv)
}

pub fn sym_expm(s: &SymMatrix) -> Result<SymMatrix> {
    spectral_apply(s, SpectralFn::Exp, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{random_spd, random_sym};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        frobenius(&(a - b)) / frobenius(b).max(1e-300)
    }

    #[test]
    fn diagonal_eigs_are_sorted_with_permuted_basis() {
        let e = sym_eig(&SymMatrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_eq!(e.values.to_vec(), vec![1.0, 3.0]);
        assert_eq!(e.vectors, ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn identity_eigs() {
        let e = sym_eig(&SymMatrix::identity(5)).unwrap();
        assert!(e.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn reconstruction_53() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = SymMatrix::from_array(random_sym(53, &mut rng)).unwrap();
        let e = sym_eig(&s).unwrap();
        let fro = s.frobenius_norm();
        assert!(frobenius(&(e.reconstruct().as_array() - s.as_array())) <= 1e-10 * fro);
        let vtv = e.vectors.t().dot(&e.vectors);
        assert!(frobenius(&(vtv - Array2::<f64>::eye(53))) <= 1e-10 * 53.0);
        assert!(e.values.windows(2).into_iter().all(|w| w[0] <= w[1]));
    }

    #[test]
    fn non_finite_rejected() {
        let mut a = Array2::<f64>::eye(3);
        a[[0, 1]] = f64::NAN;
        let s = SymMatrix::from_array(a).unwrap();
        assert!(matches!(sym_eig(&s), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sqrt_and_log_closed_forms() {
        let r = spd_sqrt(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(r, SymMatrix::from_diag(&[2.0, 3.0]));
        let l = spd_logm(&SymMatrix::identity(4)).unwrap();
        assert_eq!(l, SymMatrix::zeros(4));
    }

    #[test]
    fn log_of_indefinite_is_rejected() {
        let s = SymMatrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(spd_logm(&s), Err(Error::NotSpd { .. })));
        assert!(matches!(spectral_apply(&s, SpectralFn::Log, 0.0), Err(Error::Domain { .. })));
        // with a floor the negative eigenvalue is lifted
        let before = floor_activations();
        let out = spectral_apply(&s, SpectralFn::Log, 1e-10).unwrap();
        assert!((out.as_array()[[1, 1]] - 1e-10f64.ln()).abs() < 1e-9);
        assert!(floor_activations() > before);
    }

    #[test]
    fn round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [2, 10, 53] {
            let s = random_spd(n, 1.0, &mut rng);
            let back = sym_expm(&spd_logm(&s).unwrap()).unwrap();
            assert!(rel_err(back.as_array(), s.as_array()) <= 1e-9, "exp∘log n={n}");
            let r = spd_sqrt(&s).unwrap();
            assert!(rel_err(&r.as_array().dot(r.as_array()), s.as_array()) <= 1e-9);
            let w = spd_invsqrt(&s).unwrap();
            let id = w.sandwich(&s);
            assert!(frobenius(&(id.as_array() - Array2::<f64>::eye(n))) <= 1e-9);
        }
    }

    #[test]
    fn outputs_are_bit_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(17, 1.0, &mut rng);
        for m in [
            spd_sqrt(&s).unwrap(),
            spd_invsqrt(&s).unwrap(),
            spd_logm(&s).unwrap(),
            sym_expm(&s).unwrap(),
            spd_inv(&s).unwrap(),
        ] {
            let a = m.as_array();
            assert_eq!(a, &a.t().to_owned());
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = SymMatrix::from_array(random_sym(20, &mut rng)).unwrap();
        let a = sym_eig(&s).unwrap();
        let b = sym_eig(&s).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }
}
