//! Weighted BCE, dynamics consistency and the EMA prototype-contrastive term.
//!
//! Run: `cargo run --example losses`

use neurobridge::objective::{
    dyn_loss, metrics, proto_loss, total_loss, weighted_bce, LossParts, LossWeights, PrototypeState,
};

fn main() -> neurobridge::Result<()> {
    // positives are up-weighted by β₊ = N₋/N₊
    let beta = 480.0 / 120.0;
    for logit in [-2.0, 0.0, 2.0] {
        println!(
            "ℓ = {logit:+}: BCE(y=1) = {:.4}, BCE(y=0) = {:.4}",
            weighted_bce(logit, 1, beta),
            weighted_bce(logit, 0, beta)
        );
    }
    println!("dynamics loss {:.4}", dyn_loss(&[1.0, 0.5, -0.2], &[0.8, 0.5, 0.1]));

    let mut protos = PrototypeState::new(0.97, 0.12, 0.08)?;
    protos.update(&[vec![1.0, 0.2, 0.0], vec![0.0, 0.1, 1.0]], &[0, 1]);
    let g = [0.9, 0.1, 0.2];
    println!(
        "prototype loss for g near class 0: y=0 {:.4}, y=1 {:.4}",
        proto_loss(&g, 0, &protos)?,
        proto_loss(&g, 1, &protos)?
    );

    let parts = LossParts { sup: 1.0, dyn_: 1.0, proto: 1.0 };
    println!("total with default weights: {}", total_loss(parts, &LossWeights::default()));

    let m = metrics(&[0.9, 0.2, 0.7, 0.4], &[1, 0, 0, 1], 0.5)?;
    println!(
        "accuracy {:.2}, sensitivity {:.2}, specificity {:.2}",
        m.accuracy, m.sensitivity, m.specificity
    );
    Ok(())
}
