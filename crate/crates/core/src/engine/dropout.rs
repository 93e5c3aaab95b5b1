use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};

/// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, rng: ChaCha8Rng) -> Self {
        Self { rate, rng }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let shape = tape.value(x).dim();
        let mask =
            Array2::from_shape_fn(shape, |_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = tape.constant(mask);
        tape.mul(x, m)
    }
}

/// Applies `dropout` when present, otherwise passes `x` through.
pub fn maybe_dropout(tape: &mut Tape, x: Var, dropout: Option<&mut Dropout>) -> Var {
    match dropout {
        Some(d) => d.apply(tape, x),
        None => x,
    }
}
