use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of the pipeline are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Ridged raw matrices as node features: no anchor, logarithm or deflation.
    Euclidean,
    /// Behavior offsets fixed at zero.
    NoBehavior,
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "euclidean" => Ok(Self::Euclidean),
            "no_behavior" => Ok(Self::NoBehavior),
            other => Err(Error::InvalidArgument(format!(
                "unknown ablation {other:?} (expected full, euclidean or no_behavior)"
            ))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    /// Neighbours per node in the visit graphs.
    pub k: usize,
    /// Heat-kernel token steps `S`.
    pub token_steps: usize,
    pub d0: usize,
    pub d: usize,
    /// SPD ridge `ε`.
    pub epsilon: f64,
    pub pi_init: f64,
    pub eta_dyn: f64,
    pub eta_con: f64,
    pub ema_momentum: f64,
    pub temp_pos: f64,
    pub temp_neg: f64,
    pub seed: u64,
    pub folds: usize,
    /// Positive-class BCE weight; the training fold's negative/positive ratio when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_plus: Option<f64>,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-4,
            batch_size: 64,
            dropout: 0.40,
            epochs: 60,
            k: 5,
            token_steps: 2,
            d0: 96,
            d: 96,
            epsilon: 1e-3,
            pi_init: 0.5,
            eta_dyn: 0.25,
            eta_con: 0.10,
            ema_momentum: 0.97,
            temp_pos: 0.08,
            temp_neg: 0.12,
            seed: 0,
            folds: 5,
            beta_plus: None,
            ablation: Ablation::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config { field: field.to_string(), message });
        let positive = [
            ("lr", self.lr),
            ("epsilon", self.epsilon),
            ("temp_pos", self.temp_pos),
            ("temp_neg", self.temp_neg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        let nonneg =
            [("weight_decay", self.weight_decay), ("eta_dyn", self.eta_dyn), ("eta_con", self.eta_con)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be non-negative, got {v}"));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("d0", self.d0),
            ("d", self.d),
            ("folds", self.folds),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(name, "must be at least 1".into());
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must lie in [0,1), got {}", self.dropout));
        }
        if !(self.pi_init > 0.0 && self.pi_init < 1.0) {
            return bad("pi_init", format!("must lie in (0,1), got {}", self.pi_init));
        }
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return bad("ema_momentum", format!("must lie in [0,1), got {}", self.ema_momentum));
        }
        if let Some(b) = self.beta_plus {
            if !(b > 0.0 && b.is_finite()) {
                return bad("beta_plus", format!("must be positive, got {b}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_values() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.batch_size, c.dropout, c.epochs), (1e-4, 5e-4, 64, 0.40, 60));
        assert_eq!((c.k, c.token_steps, c.d0, c.d, c.epsilon, c.pi_init), (5, 2, 96, 96, 1e-3, 0.5));
        assert_eq!(
            (c.eta_dyn, c.eta_con, c.ema_momentum, c.temp_pos, c.temp_neg),
            (0.25, 0.10, 0.97, 0.08, 0.12)
        );
        c.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let c = TrainConfig { dropout: 1.0, ..Default::default() };
        match c.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "dropout"),
            other => panic!("{other:?}"),
        }
        assert_eq!("no_behavior".parse::<Ablation>().unwrap(), Ablation::NoBehavior);
        assert!("nope".parse::<Ablation>().is_err());
    }
}
