//! Dual-time self/cross attention and the π gate between them.
//!
//! Run: `cargo run --example dual_attention`

use ndarray::Array2;
use neurobridge::fusion::dual_attention_values;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> neurobridge::Result<()> {
    let (n, d) = (10, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut randn = |r, c| Array2::from_shape_fn((r, c), |_| StandardNormal.sample(&mut rng));
    let (r0, r2) = (randn(n, d), randn(n, d));
    let (wq, wk, wv) = (randn(d, d), randn(d, d), randn(d, d));

    // υ → ±∞ selects pure self or pure cross attention; υ = 0 is the π = 0.5 start
    for upsilon in [-800.0, 0.0, 800.0] {
        let pi = 1.0 / (1.0 + f64::exp(-upsilon));
        let (rt0, rt2) = dual_attention_values(&r0, &r2, &wq, &wk, &wv, upsilon)?;
        println!("π = {pi:.2}: R̃0[0] = {:.3?}, R̃2[0] = {:.3?}", rt0.row(0).to_vec(), rt2.row(0).to_vec());
    }

    let (same0, same2) = dual_attention_values(&r0, &r0, &wq, &wk, &wv, 0.3)?;
    println!("identical visits give identical outputs: {}", same0 == same2);
    Ok(())
}
