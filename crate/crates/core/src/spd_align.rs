//! Subject-anchored tangent-space alignment of a baseline/follow-up connectome pair.
//!
//! Both visits are ridge-regularized to SPD, the affine-invariant geodesic
//! midpoint of the pair becomes the anchor, each visit is whitened by the
//! anchor and mapped through the matrix logarithm, and the isotropic (trace)
//! mode is removed. Row `i` of a deflated tangent image is the feature
//! vector of node `i`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::symmat::{spd_invsqrt, sym_eig, SpectralFn, SymMatrix, DEFAULT_EIGEN_FLOOR};

/// Anchor plus deflated tangent images of both visits.
#[derive(Debug, Clone)]
pub struct TangentPair {
    pub anchor: SymMatrix,
    pub y0: SymMatrix,
    pub y2: SymMatrix,
    pub epsilon: f64,
}

impl TangentPair {
    /// Node features of visit 0 (`false`) or visit 2 (`true`): row `i` is node `i`.
    pub fn node_features(&self, follow_up: bool) -> &Array2<f64> {
        if follow_up {
            self.y2.as_array()
        } else {
            self.y0.as_array()
        }
    }
}

/// `½(B + Bᵀ) + εI`, rejected if the result is not positive definite.
pub fn spd_regularize(b: &Array2<f64>, epsilon: f64) -> Result<SymMatrix> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {epsilon}")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("connectome".into()));
    }
    let mut s = SymMatrix::from_array(b.clone())?.into_array();
    s.diag_mut().mapv_inplace(|d| d + epsilon);
    let s = SymMatrix::from_array(s)?;
    let min = s.min_eigenvalue()?;
    if min <= 0.0 {
        return Err(Error::NotSpd { min_eigenvalue: min });
    }
    Ok(s)
}

/// Affine-invariant midpoint `B0^{1/2}(B0^{-1/2} B2 B0^{-1/2})^{1/2} B0^{1/2}`.
pub fn geodesic_midpoint(b0: &SymMatrix, b2: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(b0)?;
    let min = eig.values[0];
    if min <= 0.0 {
        return Err(Error::NotSpd { min_eigenvalue: min });
    }
    let root = eig.map(|l| l.max(DEFAULT_EIGEN_FLOOR).sqrt());
    let inv_root = eig.map(|l| 1.0 / l.max(DEFAULT_EIGEN_FLOOR).sqrt());
    let whitened = inv_root.sandwich(b2);
    let inner = sym_eig(&whitened)?;
    if inner.values[0] <= 0.0 {
        return Err(Error::NotSpd { min_eigenvalue: inner.values[0] });
    }
    let inner_root = inner.map(|l| l.max(DEFAULT_EIGEN_FLOOR).sqrt());
    Ok(root.sandwich(&inner_root))
}

/// `Logm(A^{-1/2} B̄ A^{-1/2})`.
pub fn tangent_embed(bbar: &SymMatrix, anchor: &SymMatrix) -> Result<SymMatrix> {
    if bbar.n() != anchor.n() {
        return Err(Error::ShapeMismatch(format!(
            "connectome is {}x{}, anchor is {}x{}",
            bbar.n(),
            bbar.n(),
            anchor.n(),
            anchor.n()
        )));
    }
    let w = spd_invsqrt(anchor)?;
    let eig = sym_eig(&w.sandwich(bbar))?;
    if eig.values[0] <= 0.0 {
        return Err(Error::Domain { value: eig.values[0] });
    }
    let log = SpectralFn::Log;
    Ok(eig.map(|l| log.eval(l.max(DEFAULT_EIGEN_FLOOR))))
}

/// `Y − (tr(Y)/N)·I`.
pub fn trace_deflate(y: &SymMatrix) -> SymMatrix {
    let shift = y.trace() / y.n() as f64;
    let mut a = y.as_array().clone();
    a.diag_mut().mapv_inplace(|d| d - shift);
    SymMatrix::from_array(a).expect("square input")
}

/// Full alignment of one subject's pair of connectomes.
///
/// The anchor is computed from the symmetrized raw inputs and only falls back
/// to the ridged inputs when the raw pair is not SPD; the tangent images are
/// always taken of the ridged inputs.
pub fn align_pair(b0: &Array2<f64>, b2: &Array2<f64>, epsilon: f64) -> Result<TangentPair> {
    if b0.dim() != b2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "visits differ in shape: {:?} vs {:?}",
            b0.dim(),
            b2.dim()
        )));
    }
    let bbar0 = spd_regularize(b0, epsilon)?;
    let bbar2 = spd_regularize(b2, epsilon)?;
    let raw0 = SymMatrix::from_array(b0.clone())?;
    let raw2 = SymMatrix::from_array(b2.clone())?;
    let anchor = match geodesic_midpoint(&raw0, &raw2) {
        Ok(a) => a,
        Err(Error::NotSpd { .. }) => geodesic_midpoint(&bbar0, &bbar2)?,
        Err(e) => return Err(e),
    };
    let y0 = trace_deflate(&tangent_embed(&bbar0, &anchor)?);
    let y2 = trace_deflate(&tangent_embed(&bbar2, &anchor)?);
    Ok(TangentPair { anchor, y0, y2, epsilon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmat::frobenius;
    use crate::synthdata::random_spd;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ridge_on_identity() {
        let out = spd_regularize(&Array2::eye(3), 1e-3).unwrap();
        assert_eq!(out, SymMatrix::identity(3).scaled(1.001));
    }

    #[test]
    fn ridge_symmetrizes() {
        let out = spd_regularize(&array![[1.0, 0.2], [0.4, 1.0]], 0.0).unwrap();
        assert_eq!(out.as_array(), &array![[1.0, 0.30000000000000004], [0.30000000000000004, 1.0]]);
        assert!((out.as_array()[[0, 1]] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn ridge_rescues_slightly_indefinite_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = random_spd(53, 1.0, &mut rng);
        let eig = sym_eig(&s).unwrap();
        // shift so the smallest eigenvalue is exactly -1e-4
        let shift = eig.values[0] + 1e-4;
        let mut b = s.into_array();
        b.diag_mut().mapv_inplace(|d| d - shift);
        let before = SymMatrix::from_array(b.clone()).unwrap().min_eigenvalue().unwrap();
        assert!(before < 0.0);
        let out = spd_regularize(&b, 1e-3).unwrap();
        let after = out.min_eigenvalue().unwrap();
        assert!(after > 0.0);
        assert!(after >= 1e-3 + before - 1e-12);
        assert!(matches!(spd_regularize(&b, 0.0), Err(Error::NotSpd { .. })));
    }

    #[test]
    fn midpoint_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spd(6, 1.0, &mut rng);
        let m = geodesic_midpoint(&a, &a).unwrap();
        assert!(frobenius(&(m.as_array() - a.as_array())) <= 1e-10 * a.frobenius_norm());
        let m = geodesic_midpoint(&SymMatrix::identity(2), &SymMatrix::from_diag(&[4.0, 16.0])).unwrap();
        assert!(frobenius(&(m.as_array() - &array![[2.0, 0.0], [0.0, 4.0]])) < 1e-12);
    }

    #[test]
    fn midpoint_is_symmetric_in_its_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let b0 = random_spd(7, 1.0, &mut rng);
            let b2 = random_spd(7, 1.0, &mut rng);
            let m02 = geodesic_midpoint(&b0, &b2).unwrap();
            let m20 = geodesic_midpoint(&b2, &b0).unwrap();
            assert!(frobenius(&(m02.as_array() - m20.as_array())) <= 1e-8 * m02.frobenius_norm());
        }
    }

    #[test]
    fn tangent_embed_closed_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spd(5, 1.0, &mut rng);
        let y = tangent_embed(&a, &a).unwrap();
        assert!(y.frobenius_norm() < 1e-12);
        let e = std::f64::consts::E;
        let y = tangent_embed(&SymMatrix::from_diag(&[e, e * e]), &SymMatrix::identity(2)).unwrap();
        assert!(frobenius(&(y.as_array() - &array![[1.0, 0.0], [0.0, 2.0]])) < 1e-14);
    }

    #[test]
    fn tangent_images_are_opposite_at_the_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b0 = random_spd(12, 1.0, &mut rng);
        let b2 = random_spd(12, 1.0, &mut rng);
        let a = geodesic_midpoint(&b0, &b2).unwrap();
        let y0 = tangent_embed(&b0, &a).unwrap();
        let y2 = tangent_embed(&b2, &a).unwrap();
        assert!(y0.add(&y2).frobenius_norm() <= 1e-8);
    }

    #[test]
    fn deflation() {
        assert_eq!(trace_deflate(&SymMatrix::identity(2)), SymMatrix::zeros(2));
        assert_eq!(trace_deflate(&SymMatrix::zeros(3)), SymMatrix::zeros(3));
        let mut d = vec![0.0; 53];
        d[0] = 5.3;
        let mut a = Array2::from_diag(&ndarray::Array1::from(d));
        a[[0, 1]] = 0.7;
        a[[1, 0]] = 0.7;
        let y = SymMatrix::from_array(a.clone()).unwrap();
        let out = trace_deflate(&y);
        assert!(out.trace().abs() < 1e-13);
        assert!((out.as_array()[[3, 3]] + 0.1).abs() < 1e-15);
        assert_eq!(out.as_array()[[0, 1]], 0.7);
    }

    #[test]
    fn identical_visits_give_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_spd(6, 1.0, &mut rng).into_array();
        let pair = align_pair(&a, &a, 0.0).unwrap();
        assert!(pair.y0.frobenius_norm() < 1e-12);
        assert!(pair.y2.frobenius_norm() < 1e-12);
    }

    #[test]
    fn paper_scale_pair_is_trace_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b0 = random_spd(53, 1.0, &mut rng).into_array();
        let b2 = random_spd(53, 1.0, &mut rng).into_array();
        let pair = align_pair(&b0, &b2, 1e-3).unwrap();
        for y in [&pair.y0, &pair.y2] {
            assert!(y.is_finite());
            assert!(y.trace().abs() <= 1e-9 * 53.0);
        }
        let pair = align_pair(&b0, &b2, 0.0).unwrap();
        assert!(pair.y0.add(&pair.y2).frobenius_norm() <= 1e-8);
    }

    #[test]
    fn indefinite_raw_pair_falls_back_to_ridge_anchor() {
        let b0 = array![[1.0, 0.0], [0.0, 0.0]];
        let b2 = array![[2.0, 0.0], [0.0, 0.0]];
        let pair = align_pair(&b0, &b2, 1e-3).unwrap();
        assert!(pair.anchor.min_eigenvalue().unwrap() > 0.0);
    }
}
