//! Stratified k-fold cross-validation with mean ± sd reporting.
//!
//! Run: `cargo run --release --example cross_validate`

use neurobridge::engine::config::TrainConfig;
use neurobridge::engine::model::prepare_dataset;
use neurobridge::engine::train::cross_validate;
use neurobridge::synthdata::{gen_dataset, GenSpec};

fn main() -> neurobridge::Result<()> {
    let spec =
        GenSpec { n_subjects: 100, n_nodes: 16, pos_rate: 0.3, signal_strength: 1.0, ..Default::default() };
    let cfg = TrainConfig { epochs: 8, lr: 1e-3, d0: 24, d: 24, folds: 5, ..Default::default() };
    let subjects = prepare_dataset(&gen_dataset(&spec)?, &cfg)?;
    let cv = cross_validate(&subjects, &cfg)?;
    for (k, (fold, test)) in cv.folds.iter().zip(&cv.test_sets).enumerate() {
        let positives = test.iter().filter(|&&i| subjects[i].y == 1).count();
        let m = fold.val_metrics.expect("test fold");
        println!(
            "fold {k}: {} test subjects ({positives} positive), balanced accuracy {:.3}",
            test.len(),
            m.balanced_accuracy()
        );
    }
    let s = &cv.summary;
    println!(
        "accuracy {:.3} ± {:.3}, sensitivity {:.3} ± {:.3}, specificity {:.3} ± {:.3}",
        s.accuracy.mean,
        s.accuracy.sd,
        s.sensitivity.mean,
        s.sensitivity.sd,
        s.specificity.mean,
        s.specificity.sd
    );
    Ok(())
}
