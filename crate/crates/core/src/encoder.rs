//! Edge-gated two-layer GCN encoder for one visit.
//!
//! `R1 = ReLU(Ĝ·Y̆·W1 + b1)`; each edge gets a gate from a small perceptron
//! over its endpoint states, which is multiplied by the tangent-space RBF
//! weight and used to re-weight and re-normalize the adjacency before the
//! second, linear, layer.

use std::sync::Arc;

use ndarray::Array2;

use crate::engine::dropout::{maybe_dropout, Dropout};
use crate::engine::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph_tokens::VisitGraph;

#[derive(Debug, Clone, Copy)]
pub struct GcnLayerParams {
    pub weight: Var,
    pub bias: Var,
}

/// Perceptron `2D → D → 1` scoring an ordered endpoint pair.
#[derive(Debug, Clone, Copy)]
pub struct EdgeGateParams {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub gcn1: GcnLayerParams,
    pub gate: EdgeGateParams,
    pub gcn2: GcnLayerParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

/// `act(Â·X·W + b)`.
pub fn gcn_layer(
    tape: &mut Tape,
    x: Var,
    norm_adj: Var,
    params: &GcnLayerParams,
    activation: Activation,
) -> Result<Var> {
    let (n, din) = tape.value(x).dim();
    let (wr, wc) = tape.value(params.weight).dim();
    if din != wr || tape.value(norm_adj).dim() != (n, n) || tape.value(params.bias).dim() != (1, wc) {
        return Err(Error::ShapeMismatch(format!(
            "gcn: X {:?}, Â {:?}, W {:?}, b {:?}",
            (n, din),
            tape.value(norm_adj).dim(),
            (wr, wc),
            tape.value(params.bias).dim()
        )));
    }
    let xw = tape.matmul(x, params.weight);
    let prop = tape.matmul(norm_adj, xw);
    let out = tape.add_row(prop, params.bias);
    Ok(match activation {
        Activation::Relu => tape.relu(out),
        Activation::Linear => out,
    })
}

/// One gate per unordered edge: the mean of both directed perceptron outputs.
///
/// The first layer acting on `[R_i; R_j]` is split into the halves acting on
/// `R_i` and `R_j`, so both orders share two `N×D` products.
pub fn edge_gates(
    tape: &mut Tape,
    r1: Var,
    edges: &Arc<Vec<(usize, usize)>>,
    params: &EdgeGateParams,
) -> Result<Var> {
    let d = tape.value(r1).ncols();
    if tape.value(params.w1).dim() != (2 * d, d) || tape.value(params.w2).dim() != (d, 1) {
        return Err(Error::ShapeMismatch(format!(
            "edge gate expects w1 {:?} and w2 {:?}",
            (2 * d, d),
            (d, 1)
        )));
    }
    let src: Arc<Vec<usize>> = Arc::new(edges.iter().map(|e| e.0).collect());
    let dst: Arc<Vec<usize>> = Arc::new(edges.iter().map(|e| e.1).collect());
    let w_first = tape.slice_rows(params.w1, 0, d);
    let w_second = tape.slice_rows(params.w1, d, 2 * d);
    let p = tape.matmul(r1, w_first);
    let q = tape.matmul(r1, w_second);

    let directed = |tape: &mut Tape, a: &Arc<Vec<usize>>, b: &Arc<Vec<usize>>| {
        let pa = tape.gather_rows(p, a.clone());
        let qb = tape.gather_rows(q, b.clone());
        let h = tape.add(pa, qb);
        let h = tape.add_row(h, params.b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, params.w2);
        let o = tape.add_row(o, params.b2);
        tape.sigmoid(o)
    };
    let forward = directed(tape, &src, &dst);
    let reverse = directed(tape, &dst, &src);
    let both = tape.add(forward, reverse);
    Ok(tape.scale(both, 0.5))
}

/// `Ĝ* = D*^{-1/2} G* D*^{-1/2}` with `G*(i,j) = g_ij·Π_ij` on the edge set.
pub fn reweight_adjacency(tape: &mut Tape, graph: &VisitGraph, gates: Var) -> Result<(Var, Var)> {
    let rbf = tape.constant(graph.rbf.clone());
    let gated = tape.mul(gates, rbf);
    let norm = normalize_weighted(tape, graph, gated)?;
    Ok((norm, gated))
}

/// Symmetric normalization of edge weights scattered onto the graph.
pub fn normalize_weighted(tape: &mut Tape, graph: &VisitGraph, weights: Var) -> Result<Var> {
    let n = graph.n();
    let g_star = tape.scatter_sym(weights, graph.edges.clone(), n);
    let deg = tape.row_sums(g_star);
    if let Some(i) = tape.value(deg).iter().position(|&v| !(v > 1e-12)) {
        return Err(Error::DegenerateGraph(format!(
            "re-weighted degree of node {i} is {:e}",
            tape.value(deg)[[i, 0]]
        )));
    }
    let dinv = tape.powf(deg, -0.5);
    let dinv_row = tape.transpose(dinv);
    let left = tape.mul_col(g_star, dinv);
    Ok(tape.mul_row(left, dinv_row))
}

/// Plain evaluation of the re-normalized adjacency for given per-edge weights.
pub fn reweighted_adjacency_values(graph: &VisitGraph, weights: &[f64]) -> Result<Array2<f64>> {
    if weights.len() != graph.num_edges() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} edges",
            weights.len(),
            graph.num_edges()
        )));
    }
    let mut tape = Tape::new();
    let w = tape.constant(Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("E×1"));
    let out = normalize_weighted(&mut tape, graph, w)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedVisit {
    /// Final node embeddings `R`, `N×D`.
    pub r: Var,
    pub r1: Var,
    /// Raw gates `g`, `E×1`.
    pub gates: Var,
    /// Kernel-modulated gates `g̃ = g·Π`, `E×1`.
    pub gated: Var,
    pub norm_adj_star: Var,
}

/// `R1 = GCN₁(Y̆, Ĝ)`, gates from `R1`, `R = GCN₂(R1, Ĝ*)`.
pub fn encode_visit(
    tape: &mut Tape,
    ybreve: Var,
    graph: &VisitGraph,
    params: &EncoderParams,
    dropout: Option<&mut Dropout>,
) -> Result<EncodedVisit> {
    let adj = tape.constant(graph.norm_adjacency.clone());
    let r1 = gcn_layer(tape, ybreve, adj, &params.gcn1, Activation::Relu)?;
    let r1 = maybe_dropout(tape, r1, dropout);
    let gates = edge_gates(tape, r1, &graph.edges, &params.gate)?;
    let (norm_adj_star, gated) = reweight_adjacency(tape, graph, gates)?;
    let r = gcn_layer(tape, r1, norm_adj_star, &params.gcn2, Activation::Linear)?;
    Ok(EncodedVisit { r, r1, gates, gated, norm_adj_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::tape::sigmoid;
    use crate::graph_tokens::build_knn_graph;
    use crate::symmat::{frobenius, sym_eig, SymMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    }

    fn graph(n: usize, k: usize, seed: u64) -> VisitGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_knn_graph(&randn(n, 4, &mut rng), k).unwrap()
    }

    fn layer(tape: &mut Tape, w: Array2<f64>, b: Array2<f64>) -> GcnLayerParams {
        GcnLayerParams { weight: tape.param(w), bias: tape.param(b) }
    }

    #[test]
    fn identity_propagation_is_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(5, 3, &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let a = t.constant(Array2::eye(5));
        let p = layer(&mut t, Array2::eye(3), Array2::zeros((1, 3)));
        let out = gcn_layer(&mut t, xv, a, &p, Activation::Relu).unwrap();
        assert_eq!(t.value(out), &x.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn complete_graph_keeps_constant_rows_equal() {
        let g = graph(6, 5, 2);
        let x = Array2::from_shape_fn((6, 3), |(_, j)| j as f64 + 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tape::new();
        let xv = t.constant(x);
        let a = t.constant(g.norm_adjacency.clone());
        let p = layer(&mut t, randn(3, 4, &mut rng), randn(1, 4, &mut rng));
        let out = gcn_layer(&mut t, xv, a, &p, Activation::Linear).unwrap();
        let v = t.value(out);
        for i in 1..6 {
            assert!((&v.row(i) - &v.row(0)).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, din, dout) = (7, 5, 3);
        let x = randn(n, din, &mut rng);
        let a = randn(n, n, &mut rng);
        let w = randn(din, dout, &mut rng);
        let b = randn(1, dout, &mut rng);
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let av = t.constant(a.clone());
        let p = layer(&mut t, w.clone(), b.clone());
        let out = gcn_layer(&mut t, xv, av, &p, Activation::Relu).unwrap();
        let mut oracle = Array2::<f64>::zeros((n, dout));
        for i in 0..n {
            for o in 0..dout {
                let mut acc = 0.0;
                for j in 0..n {
                    for c in 0..din {
                        acc += a[[i, j]] * x[[j, c]] * w[[c, o]];
                    }
                }
                oracle[[i, o]] = (acc + b[[0, o]]).max(0.0);
            }
        }
        assert!(frobenius(&(t.value(out) - &oracle)) <= 1e-12);
        let bad = t.constant(Array2::zeros((3, 3)));
        assert!(matches!(gcn_layer(&mut t, xv, bad, &p, Activation::Relu), Err(Error::ShapeMismatch(_))));
    }

    fn gate_params(t: &mut Tape, d: usize, rng: &mut ChaCha8Rng, zero: bool) -> EdgeGateParams {
        let mk = |r, c, rng: &mut ChaCha8Rng| if zero { Array2::zeros((r, c)) } else { randn(r, c, rng) };
        EdgeGateParams {
            w1: t.param(mk(2 * d, d, rng)),
            b1: t.param(mk(1, d, rng)),
            w2: t.param(mk(d, 1, rng)),
            b2: t.param(mk(1, 1, rng)),
        }
    }

    #[test]
    fn zero_gate_network_gives_half() {
        let g = graph(10, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let r1 = t.constant(randn(10, 4, &mut rng));
        let p = gate_params(&mut t, 4, &mut rng, true);
        let gates = edge_gates(&mut t, r1, &g.edges, &p).unwrap();
        assert!(t.value(gates).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gates_match_direct_symmetrized_evaluation() {
        let g = graph(12, 3, 6);
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = randn(12, d, &mut rng);
        let mut t = Tape::new();
        let r1 = t.constant(r.clone());
        let p = gate_params(&mut t, d, &mut rng, false);
        let gates = edge_gates(&mut t, r1, &g.edges, &p).unwrap();
        let (w1, b1, w2, b2) =
            (t.value(p.w1).clone(), t.value(p.b1).clone(), t.value(p.w2).clone(), t.value(p.b2)[[0, 0]]);
        let direct = |i: usize, j: usize| {
            let cat: Vec<f64> = r.row(i).iter().chain(r.row(j).iter()).copied().collect();
            let mut out = b2;
            for h in 0..d {
                let mut pre = b1[[0, h]];
                for (c, v) in cat.iter().enumerate() {
                    pre += v * w1[[c, h]];
                }
                out += pre.max(0.0) * w2[[h, 0]];
            }
            sigmoid(out)
        };
        for (e, &(i, j)) in g.edges.iter().enumerate() {
            let expect = 0.5 * (direct(i, j) + direct(j, i));
            let got = t.value(gates)[[e, 0]];
            assert!((got - expect).abs() < 1e-14);
            assert!(got > 0.0 && got < 1.0);
        }
    }

    #[test]
    fn unit_gates_reproduce_normalized_adjacency() {
        let g = graph(15, 4, 7);
        let ones = vec![1.0; g.num_edges()];
        let out = reweighted_adjacency_values(&g, &ones).unwrap();
        assert!(frobenius(&(&out - &g.norm_adjacency)) < 1e-14);
        let scaled = vec![0.37; g.num_edges()];
        let out = reweighted_adjacency_values(&g, &scaled).unwrap();
        assert!(frobenius(&(&out - &g.norm_adjacency)) <= 1e-12 * frobenius(&g.norm_adjacency));
    }

    #[test]
    fn reweighted_matches_scalar_loop_and_is_contractive() {
        let g = graph(14, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..g.num_edges()).map(|_| sigmoid(StandardNormal.sample(&mut rng))).collect();
        let out = reweighted_adjacency_values(&g, &w).unwrap();
        let n = g.n();
        let mut dense = Array2::<f64>::zeros((n, n));
        for (e, &(i, j)) in g.edges.iter().enumerate() {
            dense[[i, j]] = w[e];
            dense[[j, i]] = w[e];
        }
        for i in 0..n {
            let di: f64 = dense.row(i).sum();
            for j in 0..n {
                let dj: f64 = dense.row(j).sum();
                let expect = dense[[i, j]] / (di.sqrt() * dj.sqrt());
                assert!((out[[i, j]] - expect).abs() < 1e-14);
            }
        }
        assert!((&out - &out.t()).iter().all(|v| v.abs() < 1e-15));
        let scale: Vec<f64> = w.iter().map(|v| v * 3.7).collect();
        let out2 = reweighted_adjacency_values(&g, &scale).unwrap();
        assert!(frobenius(&(&out2 - &out)) <= 1e-12 * frobenius(&out));
        let e = sym_eig(&SymMatrix::from_array(out).unwrap()).unwrap();
        assert!(e.values.iter().all(|v| v.abs() <= 1.0 + 1e-10));
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let g = graph(6, 2, 9);
        let w = vec![0.0; g.num_edges()];
        assert!(matches!(reweighted_adjacency_values(&g, &w), Err(Error::DegenerateGraph(_))));
    }

    #[test]
    fn encode_zero_input_and_eval_determinism() {
        let g = graph(10, 3, 10);
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let build = |rng: &mut ChaCha8Rng| {
            let mut t = Tape::new();
            let y = t.constant(Array2::zeros((10, 6)));
            let params = EncoderParams {
                gcn1: layer(&mut t, randn(6, d, rng), randn(1, d, rng)),
                gate: gate_params(&mut t, d, rng, false),
                gcn2: layer(&mut t, randn(d, d, rng), randn(1, d, rng)),
            };
            let enc = encode_visit(&mut t, y, &g, &params, None).unwrap();
            let h = t.value(params.gcn1.bias).mapv(|v| v.max(0.0)).dot(t.value(params.gcn2.weight));
            let s = t.value(enc.norm_adj_star).sum_axis(ndarray::Axis(1));
            (t.value(enc.r).clone(), h, s, t.value(params.gcn2.bias).clone())
        };
        let (a, h, s, b2) = build(&mut rng.clone());
        assert_eq!(a, build(&mut rng).0);
        // zero input leaves R1 = relu(b1) on every node, so R_i = s_i·relu(b1)W2 + b2
        for i in 0..10 {
            let expect = &h * s[i] + &b2;
            assert!((&a.row(i) - &expect.row(0)).iter().all(|v| v.abs() < 1e-12));
        }
    }
}
