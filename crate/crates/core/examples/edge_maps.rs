//! Class-averaged time-mixed edge maps with top-percent thresholding.
//!
//! Run: `cargo run --release --example edge_maps`

use neurobridge::cli::edges::{average, top_edges, EdgeMap};
use neurobridge::engine::config::TrainConfig;
use neurobridge::engine::model::{predict, prepare_dataset, PreparedSubject};
use neurobridge::engine::train::{holdout_split, train};
use neurobridge::synthdata::{gen_dataset, GenSpec};

fn main() -> neurobridge::Result<()> {
    let spec =
        GenSpec { n_subjects: 60, n_nodes: 53, pos_rate: 0.25, signal_strength: 1.0, ..Default::default() };
    let cfg = TrainConfig { epochs: 3, lr: 1e-3, d0: 16, d: 16, ..Default::default() };
    let subjects = prepare_dataset(&gen_dataset(&spec)?, &cfg)?;
    let labels: Vec<u8> = subjects.iter().map(|s| s.y).collect();
    let (tr, te) = holdout_split(&labels, cfg.seed)?;
    let outcome = train(&subjects, &tr, &te, &cfg)?;

    let refs: Vec<&PreparedSubject> = subjects.iter().collect();
    let preds = predict(&outcome.params, &refs, &outcome.stats, cfg.ablation)?;
    let maps: Vec<EdgeMap> = subjects.iter().zip(&preds).map(|(s, p)| EdgeMap::for_subject(s, p)).collect();
    for class in 0..2u8 {
        let members: Vec<_> =
            maps.iter().zip(&subjects).filter(|(_, s)| s.y == class).map(|(m, _)| &m.mixed).collect();
        let mean = average(&members)?;
        let kept = top_edges(&mean, 3.0);
        println!("class {class}: {} subjects, top 3% keeps {} edges", members.len(), kept.len());
        for (i, j, w) in kept.iter().take(3) {
            println!("  ({i:>2}, {j:>2})  {w:.4}");
        }
    }
    Ok(())
}
