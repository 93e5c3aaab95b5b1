//! Two-layer edge-gated GCN on one visit, with gradients from the tape.
//!
//! Run: `cargo run --example gated_encoder`

use ndarray::Array2;
use neurobridge::encoder::{encode_visit, EdgeGateParams, EncoderParams, GcnLayerParams};
use neurobridge::engine::tape::Tape;
use neurobridge::graph_tokens::build_knn_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(r: usize, c: usize, scale: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| scale * rng.sample::<f64, _>(StandardNormal))
}

fn main() -> neurobridge::Result<()> {
    let (n, f, d) = (16, 8, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = randn(n, f, 1.0, &mut rng);
    let graph = build_knn_graph(&x, 4)?;

    let mut tape = Tape::new();
    let input = tape.constant(x);
    let params = EncoderParams {
        gcn1: GcnLayerParams {
            weight: tape.param(randn(f, d, (2.0 / f as f64).sqrt(), &mut rng)),
            bias: tape.param(Array2::zeros((1, d))),
        },
        gate: EdgeGateParams {
            w1: tape.param(randn(2 * d, d, (1.0 / d as f64).sqrt(), &mut rng)),
            b1: tape.param(Array2::zeros((1, d))),
            w2: tape.param(randn(d, 1, (2.0 / d as f64).sqrt(), &mut rng)),
            b2: tape.param(Array2::zeros((1, 1))),
        },
        gcn2: GcnLayerParams {
            weight: tape.param(randn(d, d, (2.0 / d as f64).sqrt(), &mut rng)),
            bias: tape.param(Array2::zeros((1, d))),
        },
    };
    let enc = encode_visit(&mut tape, input, &graph, &params, None)?;

    let gates = tape.value(enc.gates);
    println!(
        "{} edge gates in [{:.3}, {:.3}]",
        gates.len(),
        gates.fold(f64::INFINITY, |a, &b| a.min(b)),
        gates.fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    );
    println!("embedding shape {:?}", tape.value(enc.r).dim());

    let loss = tape.sum_all(enc.r);
    let grads = tape.backward(loss, 1.0)?;
    let g = grads.get_or_zeros(params.gate.w1);
    println!("‖∂ΣR/∂W_gate‖_F = {:.4}", g.iter().map(|v| v * v).sum::<f64>().sqrt());
    Ok(())
}
