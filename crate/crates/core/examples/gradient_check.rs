//! Full-model reverse-mode gradients against central finite differences.
//!
//! Run: `cargo run --release --example gradient_check`

use neurobridge::engine::gradcheck::{gradcheck, CheckProblem};

fn main() -> neurobridge::Result<()> {
    let problem = CheckProblem::small(0)?;
    let report = gradcheck(&problem, 1e-5)?;
    for t in &report.tensors {
        println!("{:<20} {:>4} scalars  rel err {:.2e}", t.name, t.scalars, t.rel_err);
    }
    println!(
        "max rel err {:.2e}; {} tensor(s) above 1e-4",
        report.max_rel_err(),
        report.failures(1e-4).len()
    );
    Ok(())
}
