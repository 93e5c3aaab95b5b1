//! Mini-batch training, held-out evaluation and stratified cross-validation.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::config::TrainConfig;
use super::dropout::Dropout;
use super::model::{batch_gradients, dims_for, predict, BehaviorStats, Prediction, PreparedSubject};
use super::params::{derived_rng, ModelParams};
use crate::error::{Error, Result};
use crate::objective::{metrics, LossParts, LossWeights, Metrics, PrototypeState};

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub sup: f64,
    pub dyn_: f64,
    pub proto: f64,
    /// Held-out metrics after this epoch, when a validation set was given.
    pub val: Option<Metrics>,
}

/// Position of the shuffling stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub protos: PrototypeState,
    pub stats: BehaviorStats,
    pub beta_plus: f64,
    pub trace: Vec<EpochRecord>,
    pub val_predictions: Vec<Prediction>,
    pub val_metrics: Option<Metrics>,
    pub rng: RngState,
}

/// `#negatives / #positives` over `idx`.
pub fn class_ratio(subjects: &[PreparedSubject], idx: &[usize]) -> Result<f64> {
    let pos = idx.iter().filter(|&&i| subjects[i].y == 1).count();
    let neg = idx.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Stratification(format!("training split has {pos} positives and {neg} negatives")));
    }
    Ok(neg as f64 / pos as f64)
}

/// Trains on `train_idx`; evaluates on `val_idx` after every epoch.
pub fn train(
    subjects: &[PreparedSubject],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let beta_plus = match cfg.beta_plus {
        Some(b) => b,
        None => class_ratio(subjects, train_idx)?,
    };
    let dims = dims_for(subjects, cfg)?;
    let mut params = ModelParams::init(dims, cfg.seed, cfg.pi_init)?;
    let stats = BehaviorStats::fit(subjects, train_idx)?;
    let weights = LossWeights { eta_dyn: cfg.eta_dyn, eta_con: cfg.eta_con, beta_plus };
    let adam = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let mut state = AdamState::default();
    let mut protos = PrototypeState::new(cfg.ema_momentum, cfg.temp_neg, cfg.temp_pos)?;
    let mut shuffle = derived_rng(cfg.seed, "train/shuffle");
    let val: Vec<&PreparedSubject> = val_idx.iter().map(|&i| &subjects[i]).collect();
    let val_labels: Vec<u8> = val.iter().map(|s| s.y).collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.to_vec();
    let mut val_predictions = Vec::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sums = LossParts::default();
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PreparedSubject> = chunk.iter().map(|&i| &subjects[i]).collect();
            let dropouts = (cfg.dropout > 0.0).then(|| {
                (0..batch.len())
                    .map(|j| Dropout::new(cfg.dropout, dropout_rng(cfg.seed, epoch, b, j)))
                    .collect()
            });
            let out = batch_gradients(&params, &batch, &stats, cfg.ablation, &weights, &protos, dropouts)?;
            if !out.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            adam_step(&mut params, &out.grads, &mut state, &adam)?;
            let labels: Vec<u8> = batch.iter().map(|s| s.y).collect();
            protos.update(&out.features, &labels);
            let w = batch.len() as f64;
            total += out.loss * w;
            sums.sup += out.parts.sup * w;
            sums.dyn_ += out.parts.dyn_ * w;
            sums.proto += out.parts.proto * w;
        }
        if !protos.is_ready() {
            protos.fill_missing(dims.d, &mut derived_rng(cfg.seed, &format!("train/proto-fallback/{epoch}")));
        }
        let n = order.len().max(1) as f64;
        let val_m = if val.is_empty() {
            None
        } else {
            val_predictions = predict(&params, &val, &stats, cfg.ablation)?;
            let probs: Vec<f64> = val_predictions.iter().map(|p| p.prob).collect();
            Some(metrics(&probs, &val_labels, 0.5)?)
        };
        trace.push(EpochRecord {
            epoch: epoch + 1,
            loss: total / n,
            sup: sums.sup / n,
            dyn_: sums.dyn_ / n,
            proto: sums.proto / n,
            val: val_m,
        });
    }
    let val_metrics = trace.last().and_then(|r| r.val);
    Ok(TrainOutcome {
        params,
        protos,
        stats,
        beta_plus,
        trace,
        val_predictions,
        val_metrics,
        rng: RngState { seed: cfg.seed, word_pos: shuffle.get_word_pos() },
    })
}

fn dropout_rng(seed: u64, epoch: usize, batch: usize, slot: usize) -> ChaCha8Rng {
    derived_rng(seed, &format!("train/dropout/{epoch}/{batch}/{slot}"))
}

/// Test-index sets of `folds` stratified folds.
///
/// Each class is shuffled and dealt round-robin, so every fold's class count
/// is within one of its share.
pub fn stratified_folds(labels: &[u8], folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let mut out = vec![Vec::new(); folds];
    let mut rng = derived_rng(seed, "cv/folds");
    let mut offset = 0;
    for c in 0..2u8 {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.len() < folds {
            return Err(Error::Stratification(format!(
                "class {c} has {} subjects, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (j, i) in members.into_iter().enumerate() {
            out[(j + offset) % folds].push(i);
        }
        // continue dealing where the previous class stopped to balance fold sizes
        offset = (offset + labels.iter().filter(|&&y| y == c).count()) % folds;
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// `(train, test)` indices with fold `k` held out.
pub fn split_for_fold(n: usize, test: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut held = vec![false; n];
    for &i in test {
        held[i] = true;
    }
    ((0..n).filter(|&i| !held[i]).collect(), test.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub accuracy: MeanSd,
    pub sensitivity: MeanSd,
    pub specificity: MeanSd,
    pub balanced_accuracy: MeanSd,
}

impl CvSummary {
    pub fn from_metrics(per_fold: &[Metrics]) -> Self {
        let col = |f: fn(&Metrics) -> f64| MeanSd::of(&per_fold.iter().map(f).collect::<Vec<_>>());
        Self {
            accuracy: col(|m| m.accuracy),
            sensitivity: col(|m| m.sensitivity),
            specificity: col(|m| m.specificity),
            balanced_accuracy: col(|m| m.balanced_accuracy()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub folds: Vec<TrainOutcome>,
    pub test_sets: Vec<Vec<usize>>,
    pub summary: CvSummary,
}

/// Trains one model per stratified fold and summarizes held-out metrics.
pub fn cross_validate(subjects: &[PreparedSubject], cfg: &TrainConfig) -> Result<CvOutcome> {
    let labels: Vec<u8> = subjects.iter().map(|s| s.y).collect();
    let test_sets = stratified_folds(&labels, cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(test_sets.len());
    for test in &test_sets {
        let (tr, te) = split_for_fold(subjects.len(), test);
        folds.push(train(subjects, &tr, &te, cfg)?);
    }
    let per_fold: Vec<Metrics> =
        folds.iter().map(|f| f.val_metrics.expect("every fold has a test set")).collect();
    Ok(CvOutcome { summary: CvSummary::from_metrics(&per_fold), folds, test_sets })
}

/// A single stratified 80:20 split: fold 0 of a 5-fold partition.
pub fn holdout_split(labels: &[u8], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let folds = stratified_folds(labels, 5, seed)?;
    Ok(split_for_fold(labels.len(), &folds[0]))
}
