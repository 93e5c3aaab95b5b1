//! Generate a synthetic longitudinal dataset and write it as JSON lines.
//!
//! Run: `cargo run --example simulate -- /tmp/synthetic.jsonl`

use std::path::PathBuf;

use neurobridge::cli::formats::{read_dataset, write_dataset};
use neurobridge::synthdata::{gen_dataset, GenSpec};

fn main() -> neurobridge::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("neurobridge-synthetic.jsonl"));
    let spec = GenSpec {
        n_subjects: 100,
        n_nodes: 53,
        pos_rate: 0.2,
        signal_strength: 1.0,
        behavior_coupling: 1.0,
        ..Default::default()
    };
    let data = gen_dataset(&spec)?;
    write_dataset(&path, &data)?;
    let back = read_dataset(&path)?;
    let positives = back.iter().filter(|s| s.y == 1).count();
    println!(
        "wrote {} subjects ({positives} positive, {}×{} connectomes) to {}",
        back.len(),
        back[0].b0.n(),
        back[0].b0.n(),
        path.display()
    );
    Ok(())
}
