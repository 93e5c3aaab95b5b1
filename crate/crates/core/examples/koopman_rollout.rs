//! Spectrally bounded Koopman operator: spectrum, rollout and free decay.
//!
//! Run: `cargo run --example koopman_rollout`

use ndarray::Array2;
use neurobridge::engine::tape::Tape;
use neurobridge::koopman::{admit_phi, assemble_operator, decay_bound, free_iterates, rollout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> neurobridge::Result<()> {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let phi =
        Array2::<f64>::eye(d) + Array2::from_shape_fn((d, d), |_| 0.2 * rng.sample::<f64, _>(StandardNormal));
    let chi: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
    let report = admit_phi(&phi)?;
    let u = assemble_operator(&phi, &chi)?;
    let rho = chi.iter().map(|c| c.tanh().abs()).fold(0.0, f64::max);
    println!("κ(Φ) = {:.3}, spectral radius ρ = {rho:.3}", report.condition);

    // two-step rollout with behavior offsets
    let mut tape = Tape::new();
    let seed: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let s = tape.constant(Array2::from_shape_vec((1, d), seed.clone()).expect("row"));
    let uv = tape.constant(u.clone());
    let m0 = tape.constant(Array2::from_elem((1, d), 0.1));
    let m2 = tape.constant(Array2::from_elem((1, d), -0.1));
    let (r1, r2) = rollout(&mut tape, s, uv, m0, m2);
    println!("r̂1 = {:.3?}", tape.value(r1).row(0).to_vec());
    println!("r̂2 = {:.3?}", tape.value(r2).row(0).to_vec());

    // without offsets the iterates decay within the κ·ρᵗ bound
    let steps = decay_bound(report.condition, rho, 1e-6).expect("ρ < 1");
    let iters = free_iterates(&u, &seed, steps);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("after {steps} free steps ‖r‖/‖r₀‖ = {:.2e}", norm(&iters[steps]) / norm(&iters[0]));
    Ok(())
}
