//! kNN graphs over tangent rows, heat-kernel tokens and the row projector.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::engine::tape::{heat_kernel, Tape, Var};
use crate::error::{Error, Result};
use crate::symmat::{sym_eig, EigenPair, SymMatrix};

/// Graph built from one visit's node features.
#[derive(Debug, Clone)]
pub struct VisitGraph {
    pub k: usize,
    /// Binary symmetric adjacency with zero diagonal.
    pub adjacency: Array2<f64>,
    /// Unordered edges `(i, j)` with `i < j`, sorted.
    pub edges: Arc<Vec<(usize, usize)>>,
    pub degrees: Array1<f64>,
    pub norm_adjacency: Array2<f64>,
    pub laplacian: SymMatrix,
    pub laplacian_eig: Arc<EigenPair>,
    /// Per-edge Euclidean distance between endpoint features.
    pub edge_distances: Vec<f64>,
    /// Per-edge Gaussian kernel weight, `E×1`.
    pub rbf: Array2<f64>,
    pub bandwidth: f64,
}

impl VisitGraph {
    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

fn row_distance(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Directed kNN by Euclidean distance, symmetrized by union.
///
/// Ties are broken toward the lower node index.
pub fn build_knn_graph(features: &Array2<f64>, k: usize) -> Result<VisitGraph> {
    let n = features.nrows();
    if k == 0 || n < k + 1 {
        return Err(Error::InvalidArgument(format!("kNN needs 1 <= k < N, got k={k}, N={n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kNN features".into()));
    }
    let mut adjacency = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (row_distance(features, i, j), j)).collect();
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in cand.iter().take(k) {
            adjacency[[i, j]] = 1.0;
            adjacency[[j, i]] = 1.0;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if adjacency[[i, j]] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    let degrees = adjacency.sum_axis(ndarray::Axis(1));
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::DegenerateGraph(format!("node {i} has no neighbours")));
    }
    let inv_sqrt = degrees.mapv(|d| 1.0 / d.sqrt());
    let norm_adjacency =
        Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * adjacency[[i, j]] * inv_sqrt[j]);
    let laplacian = SymMatrix::from_array(Array2::eye(n) - &norm_adjacency)?;
    let laplacian_eig = Arc::new(sym_eig(&laplacian)?);
    let edge_distances: Vec<f64> = edges.iter().map(|&(i, j)| row_distance(features, i, j)).collect();
    let (rbf, bandwidth) = rbf_from_distances(&edge_distances, None);
    Ok(VisitGraph {
        k,
        adjacency,
        edges: Arc::new(edges),
        degrees,
        norm_adjacency,
        laplacian,
        laplacian_eig,
        edge_distances,
        rbf,
        bandwidth,
    })
}

/// Lower median of the edge distances, floored at `1e-8`.
pub fn median_bandwidth(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 1e-8;
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    d[(d.len() - 1) / 2].max(1e-8)
}

fn rbf_from_distances(distances: &[f64], bandwidth: Option<f64>) -> (Array2<f64>, f64) {
    let omega = bandwidth.unwrap_or_else(|| median_bandwidth(distances)).max(1e-8);
    let w = Array2::from_shape_fn((distances.len(), 1), |(e, _)| {
        (-distances[e] * distances[e] / (2.0 * omega * omega)).exp()
    });
    (w, omega)
}

/// `Π_ij = exp(−‖y_i − y_j‖² / 2ω²)` per edge, with `ω` the median edge
/// distance unless overridden. Returns the weights and the bandwidth used.
pub fn rbf_weights(
    features: &Array2<f64>,
    edges: &[(usize, usize)],
    bandwidth_override: Option<f64>,
) -> Result<(Vec<f64>, f64)> {
    if let Some(w) = bandwidth_override {
        if !(w > 0.0) {
            return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {w}")));
        }
    }
    let d: Vec<f64> = edges.iter().map(|&(i, j)| row_distance(features, i, j)).collect();
    let (w, omega) = rbf_from_distances(&d, bandwidth_override);
    Ok((w.into_iter().collect(), omega))
}

/// `Ψ_0 = Ỹ` followed by `Ψ_s = exp(−θ_s J)·Ỹ`.
#[derive(Debug, Clone)]
pub struct TokenStack {
    pub tokens: Vec<Array2<f64>>,
    pub thetas: Vec<f64>,
}

impl TokenStack {
    /// Row-wise concatenation `[Ψ_0 ‖ … ‖ Ψ_S]`.
    pub fn concat(&self) -> Array2<f64> {
        let views: Vec<_> = self.tokens.iter().map(|t| t.view()).collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts")
    }
}

pub fn heat_tokens(ytilde: &Array2<f64>, graph: &VisitGraph, thetas: &[f64]) -> Result<TokenStack> {
    if ytilde.nrows() != graph.n() {
        return Err(Error::ShapeMismatch(format!(
            "features have {} rows, graph has {} nodes",
            ytilde.nrows(),
            graph.n()
        )));
    }
    if let Some(t) = thetas.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidArgument(format!("token scale must be >= 0, got {t}")));
    }
    let mut tokens = vec![ytilde.clone()];
    for &t in thetas {
        tokens.push(heat_kernel(&graph.laplacian_eig, t).dot(ytilde));
    }
    Ok(TokenStack { tokens, thetas: thetas.to_vec() })
}

/// `∂Ψ_s/∂θ_s = −J·exp(−θ_s J)·Ỹ`.
pub fn heat_token_derivative(ytilde: &Array2<f64>, graph: &VisitGraph, theta: f64) -> Array2<f64> {
    let kernel = heat_kernel(&graph.laplacian_eig, theta);
    -graph.laplacian.as_array().dot(&kernel).dot(ytilde)
}

/// Token stack on a tape, with `θ = softplus(theta_raw)` per step.
pub fn tokens_on_tape(tape: &mut Tape, ytilde: Var, graph: &VisitGraph, theta_raw: Var) -> Vec<Var> {
    let s = tape.value(theta_raw).ncols();
    let mut out = vec![ytilde];
    for step in 0..s {
        let raw = tape.slice_cols(theta_raw, step, step + 1);
        let theta = tape.softplus(raw);
        out.push(tape.heat(theta, ytilde, graph.laplacian_eig.clone()));
    }
    out
}

/// `ReLU([Ψ_0 ‖ … ‖ Ψ_S]·W + b)`.
pub fn project_on_tape(tape: &mut Tape, tokens: &[Var], weight: Var, bias: Var) -> Result<Var> {
    let width: usize = tokens.iter().map(|t| tape.value(*t).ncols()).sum();
    if width != tape.value(weight).nrows() || tape.value(bias).ncols() != tape.value(weight).ncols() {
        return Err(Error::ShapeMismatch(format!(
            "token width {width} vs projector {:?} / bias {:?}",
            tape.value(weight).dim(),
            tape.value(bias).dim()
        )));
    }
    let cat = tape.concat_cols(tokens);
    let lin = tape.matmul(cat, weight);
    let lin = tape.add_row(lin, bias);
    Ok(tape.relu(lin))
}

/// Plain evaluation of the row projector.
pub fn row_project(stack: &TokenStack, weight: &Array2<f64>, bias: &Array2<f64>) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let tokens: Vec<Var> = stack.tokens.iter().map(|t| tape.constant(t.clone())).collect();
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let out = project_on_tape(&mut tape, &tokens, w, b)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmat::frobenius;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng))
    }

    /// Brute-force kNN edge set for the oracle.
    fn brute_edges(x: &Array2<f64>, k: usize) -> Vec<(usize, usize)> {
        let n = x.nrows();
        let mut set = std::collections::BTreeSet::new();
        for i in 0..n {
            let mut best: Vec<usize> = Vec::new();
            for _ in 0..k {
                let mut pick = None;
                for j in 0..n {
                    if j == i || best.contains(&j) {
                        continue;
                    }
                    let dj: f64 = (0..x.ncols()).map(|c| (x[[i, c]] - x[[j, c]]).powi(2)).sum();
                    match pick {
                        None => pick = Some((dj, j)),
                        Some((d, _)) if dj < d => pick = Some((dj, j)),
                        _ => {}
                    }
                }
                best.push(pick.unwrap().1);
            }
            for j in best {
                set.insert((i.min(j), i.max(j)));
            }
        }
        set.into_iter().collect()
    }

    #[test]
    fn collinear_points() {
        let x = array![[0.0], [1.0], [3.0]];
        let g = build_knn_graph(&x, 1).unwrap();
        assert_eq!(*g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn matches_brute_force() {
        let x = cloud(30, 4, 3);
        let g = build_knn_graph(&x, 5).unwrap();
        assert_eq!(*g.edges, brute_edges(&x, 5));
        assert!(g.degrees.iter().all(|&d| d >= 5.0));
        assert_eq!(g.adjacency, g.adjacency.t());
        assert!(g.adjacency.diag().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn complete_graph_normalization() {
        let x = cloud(6, 3, 1);
        let g = build_knn_graph(&x, 5).unwrap();
        let expected = (Array2::<f64>::ones((6, 6)) - Array2::<f64>::eye(6)) / 5.0;
        assert!(frobenius(&(&g.norm_adjacency - &expected)) < 1e-15);
    }

    #[test]
    fn duplicate_points_prefer_lower_index() {
        let x = array![[0.0], [0.0], [0.0], [5.0]];
        let g = build_knn_graph(&x, 1).unwrap();
        // node 0 -> 1, node 1 -> 0, node 2 -> 0, node 3 -> 0
        assert_eq!(*g.edges, vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn rejects_too_few_nodes() {
        assert!(build_knn_graph(&cloud(3, 2, 0), 3).is_err());
        assert!(build_knn_graph(&cloud(3, 2, 0), 0).is_err());
    }

    #[test]
    fn laplacian_spectrum_in_range() {
        let x = cloud(53, 53, 9);
        let g = build_knn_graph(&x, 5).unwrap();
        let vals = &g.laplacian_eig.values;
        assert!(vals[0] >= -1e-10);
        assert!(vals[vals.len() - 1] <= 2.0 + 1e-10);
    }

    #[test]
    fn zero_scale_tokens_are_identity() {
        let x = cloud(10, 10, 2);
        let g = build_knn_graph(&x, 3).unwrap();
        let st = heat_tokens(&x, &g, &[0.0, 0.0]).unwrap();
        assert_eq!(st.tokens[0], x);
        for t in &st.tokens[1..] {
            assert!(frobenius(&(t - &x)) < 1e-12);
        }
    }

    #[test]
    fn heat_kernel_on_complete_graph() {
        let x = cloud(7, 2, 4);
        let g = build_knn_graph(&x, 6).unwrap();
        let id = Array2::<f64>::eye(7);
        let st = heat_tokens(&id, &g, &[0.8]).unwrap();
        let k = SymMatrix::from_array(st.tokens[1].clone()).unwrap();
        let e = sym_eig(&k).unwrap();
        assert!(e.values.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
        // complete graph: J has eigenvalue 0 once and N/(N-1) otherwise
        let expect_hi = (-0.8f64 * 7.0 / 6.0).exp();
        assert!((e.values[0] - expect_hi).abs() < 1e-12);
        assert!((e.values[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_and_monotone_spectrum() {
        let x = cloud(20, 5, 6);
        let g = build_knn_graph(&x, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut prev: Option<Vec<f64>> = None;
        for theta in [0.0, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let k = heat_kernel(&g.laplacian_eig, theta);
            for _ in 0..5 {
                let v = Array1::from_shape_fn(20, |_| StandardNormal.sample(&mut rng));
                let kv = k.dot(&v);
                assert!(kv.dot(&kv).sqrt() <= v.dot(&v).sqrt() * (1.0 + 1e-12));
            }
            // eigenvalue i of exp(−θJ) is exp(−θλ_i), with λ ascending
            let spec: Vec<f64> = g.laplacian_eig.values.iter().map(|l| (-theta * l).exp()).collect();
            if let Some(p) = prev {
                assert!(spec.iter().zip(&p).all(|(a, b)| a <= &(b + 1e-15)));
            }
            prev = Some(spec);
        }
    }

    #[test]
    fn token_derivative_matches_finite_differences() {
        let x = cloud(12, 12, 7);
        let g = build_knn_graph(&x, 3).unwrap();
        let y = SymMatrix::from_array(x.t().dot(&x)).unwrap().into_array();
        let theta = 0.7;
        let h = 1e-5;
        let plus = heat_tokens(&y, &g, &[theta + h]).unwrap().tokens[1].clone();
        let minus = heat_tokens(&y, &g, &[theta - h]).unwrap().tokens[1].clone();
        let fd = (plus - minus) / (2.0 * h);
        let an = heat_token_derivative(&y, &g, theta);
        assert!(frobenius(&(&fd - &an)) <= 1e-6 * frobenius(&an));
    }

    #[test]
    fn projector_cases() {
        let x = cloud(5, 5, 8);
        let g = build_knn_graph(&x, 2).unwrap();
        let st = heat_tokens(&x, &g, &[0.5, 1.0]).unwrap();
        let out = row_project(&st, &Array2::zeros((15, 4)), &Array2::zeros((1, 4))).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        let st0 = heat_tokens(&x, &g, &[]).unwrap();
        let out = row_project(&st0, &Array2::eye(5), &Array2::zeros((1, 5))).unwrap();
        assert_eq!(out, x.mapv(|v| v.max(0.0)));
        assert!(matches!(
            row_project(&st, &Array2::zeros((10, 4)), &Array2::zeros((1, 4))),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rbf_cases() {
        let x = array![[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]];
        let (w, _) = rbf_weights(&x, &[(0, 1)], Some(1.0)).unwrap();
        assert_eq!(w, vec![1.0]);
        let (w, omega) = rbf_weights(&x, &[(0, 2)], Some(5.0)).unwrap();
        assert_eq!(omega, 5.0);
        assert!((w[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(rbf_weights(&x, &[(0, 2)], Some(0.0)).is_err());
    }

    #[test]
    fn median_edge_gets_half_exponent() {
        let x = cloud(25, 3, 10);
        let g = build_knn_graph(&x, 3).unwrap();
        let mut sorted = g.edge_distances.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[(sorted.len() - 1) / 2];
        let e = g.edge_distances.iter().position(|&d| d == med).unwrap();
        assert!((g.rbf[[e, 0]] - (-0.5f64).exp()).abs() < 1e-14);
        assert!(g.rbf.iter().all(|&w| w > 0.0 && w <= 1.0));
    }
}
