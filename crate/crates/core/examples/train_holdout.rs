//! Train on a stratified 80:20 split and save a checkpoint.
//!
//! Run: `cargo run --release --example train_holdout`

use neurobridge::cli::formats::{trace_to_csv, Checkpoint};
use neurobridge::engine::config::TrainConfig;
use neurobridge::engine::model::prepare_dataset;
use neurobridge::engine::train::{holdout_split, train};
use neurobridge::synthdata::{gen_dataset, GenSpec};

fn main() -> neurobridge::Result<()> {
    let spec =
        GenSpec { n_subjects: 150, n_nodes: 20, pos_rate: 0.2, signal_strength: 1.0, ..Default::default() };
    // a smaller model and a larger step so the demo finishes in seconds
    let cfg = TrainConfig { epochs: 15, lr: 1e-3, d0: 32, d: 32, ..Default::default() };
    let subjects = prepare_dataset(&gen_dataset(&spec)?, &cfg)?;
    let labels: Vec<u8> = subjects.iter().map(|s| s.y).collect();
    let (tr, te) = holdout_split(&labels, cfg.seed)?;
    let outcome = train(&subjects, &tr, &te, &cfg)?;

    print!("{}", trace_to_csv(&outcome.trace));
    let m = outcome.val_metrics.expect("held-out split");
    println!(
        "held-out accuracy {:.3}, sensitivity {:.3}, specificity {:.3} (β₊ = {})",
        m.accuracy, m.sensitivity, m.specificity, outcome.beta_plus
    );
    let path = std::env::temp_dir().join("neurobridge-checkpoint.json");
    Checkpoint::from_outcome(&outcome, &cfg).save(&path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
