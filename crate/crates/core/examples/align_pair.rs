//! Midpoint-anchored tangent alignment of one synthetic subject.
//!
//! Run: `cargo run --example align_pair`

use neurobridge::spd_align::{align_pair, geodesic_midpoint};
use neurobridge::synthdata::{gen_dataset, GenSpec};

fn main() -> neurobridge::Result<()> {
    let spec = GenSpec { n_subjects: 1, n_nodes: 12, pos_rate: 0.5, ..Default::default() };
    let subject = gen_dataset(&spec)?.remove(0);
    let anchor = geodesic_midpoint(&subject.b0, &subject.b2)?;
    println!("anchor trace {:.4}, min eigenvalue {:.4}", anchor.trace(), anchor.min_eigenvalue()?);

    // ε = 0: the two tangent images are exact negatives of each other
    let pair = align_pair(subject.b0.as_array(), subject.b2.as_array(), 0.0)?;
    let gap = (pair.y0.as_array() + pair.y2.as_array()).mapv(f64::abs).sum();
    println!("Σ|Y0 + Y2| = {gap:.2e}, trace(Y2) = {:.2e}", pair.y2.trace());

    // the default ridge used in training
    let pair = align_pair(subject.b0.as_array(), subject.b2.as_array(), 1e-3)?;
    println!("‖Y2‖_F with ε = 1e-3: {:.4}", pair.y2.frobenius_norm());
    println!("node 0 features: {:.3?}", &pair.node_features(true).row(0).to_vec()[..4]);
    Ok(())
}
