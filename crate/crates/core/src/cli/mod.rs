//! Command-line surface: simulate, train, eval, gradcheck and export-edges.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or IO error, 3 failed
//! gradient check.

pub mod edges;
pub mod formats;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::engine::config::{Ablation, TrainConfig};
use crate::engine::gradcheck::{gradcheck, CheckProblem};
use crate::engine::model::{predict, prepare_dataset, PreparedSubject};
use crate::engine::train::{cross_validate, holdout_split, train, CvSummary, TrainOutcome};
use crate::error::{Error, Result};
use crate::objective::{metrics, Metrics};
use crate::synthdata::{gen_dataset, GenSpec};
use edges::{average, edges_csv, matrix_csv, top_edges, EdgeMap};
use formats::{read_config, read_dataset, trace_to_csv, write_dataset, write_text, Checkpoint};

#[derive(Debug, Parser)]
#[command(name = "neurobridge", version, about = "Longitudinal connectome classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic JSON-lines dataset.
    Simulate(SimulateArgs),
    /// Train on a dataset; cross-validate when --folds > 1.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Compare reverse-mode gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write class-averaged time-mixed edge maps.
    ExportEdges(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub n_subjects: usize,
    #[arg(long, default_value_t = 53)]
    pub n_nodes: usize,
    #[arg(long, default_value_t = 220.0 / 7168.0)]
    pub pos_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal_strength: f64,
    #[arg(long, default_value_t = 0.0)]
    pub behavior_coupling: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file of hyperparameters; missing keys take the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 1 trains on a single stratified 80:20 split.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "small")]
    pub dims: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    pub top_percent: f64,
    #[arg(long, default_value = "label")]
    pub group_by: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
        Command::ExportEdges(a) => cmd_export_edges(&a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let spec = GenSpec {
        n_subjects: a.n_subjects,
        n_nodes: a.n_nodes,
        pos_rate: a.pos_rate,
        signal_strength: a.signal_strength,
        behavior_coupling: a.behavior_coupling,
        noise_scale: a.noise_scale,
        seed: a.seed,
    };
    let data = gen_dataset(&spec)?;
    write_dataset(&a.out, &data)?;
    let pos = data.iter().filter(|s| s.y == 1).count();
    say(out, &format!("wrote {} subjects ({pos} positive) to {}", data.len(), a.out.display()))
}

/// Resolved configuration: file values, then flag overrides.
pub fn resolve_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.folds {
        cfg.folds = f;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(ab) = a.ablation {
        cfg.ablation = ab;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    metrics: Metrics,
    balanced_accuracy: f64,
}

#[derive(Serialize)]
struct CvReport {
    folds: Vec<FoldReport>,
    summary: CvSummary,
}

#[derive(Serialize)]
struct HoldoutReport {
    #[serde(flatten)]
    metrics: Metrics,
    balanced_accuracy: f64,
}

fn write_run(dir: &Path, outcome: &TrainOutcome, cfg: &TrainConfig) -> Result<()> {
    Checkpoint::from_outcome(outcome, cfg).save(&dir.join("checkpoint.json"))?;
    write_text(&dir.join("trace.csv"), &trace_to_csv(&outcome.trace))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(a)?;
    let records = read_dataset(&a.data)?;
    let subjects = prepare_dataset(&records, &cfg)?;
    if cfg.folds > 1 {
        let cv = cross_validate(&subjects, &cfg)?;
        let mut folds = Vec::new();
        for (k, f) in cv.folds.iter().enumerate() {
            write_run(&a.out.join(format!("fold-{k}")), f, &cfg)?;
            let m = f.val_metrics.expect("fold has a test set");
            folds.push(FoldReport { fold: k, metrics: m, balanced_accuracy: m.balanced_accuracy() });
        }
        let report = CvReport { folds, summary: cv.summary.clone() };
        write_text(&a.out.join("metrics.json"), &to_json(&report)?)?;
        let s = &cv.summary;
        say(
            out,
            &format!(
                "{}-fold CV: accuracy {:.4} ± {:.4}, sensitivity {:.4} ± {:.4}, specificity {:.4} ± {:.4}",
                cfg.folds,
                s.accuracy.mean,
                s.accuracy.sd,
                s.sensitivity.mean,
                s.sensitivity.sd,
                s.specificity.mean,
                s.specificity.sd
            ),
        )
    } else {
        let labels: Vec<u8> = subjects.iter().map(|s| s.y).collect();
        let (tr, te) = holdout_split(&labels, cfg.seed)?;
        let outcome = train(&subjects, &tr, &te, &cfg)?;
        write_run(&a.out, &outcome, &cfg)?;
        let m = outcome.val_metrics.expect("holdout has a test set");
        let report = HoldoutReport { metrics: m, balanced_accuracy: m.balanced_accuracy() };
        write_text(&a.out.join("metrics.json"), &to_json(&report)?)?;
        say(
            out,
            &format!(
                "held-out accuracy {:.4}, sensitivity {:.4}, specificity {:.4}",
                m.accuracy, m.sensitivity, m.specificity
            ),
        )
    }
}

/// Loads a checkpoint and prepares `data` the way it was trained, checking sizes.
fn load_for_eval(data: &Path, checkpoint: &Path) -> Result<(Checkpoint, Vec<PreparedSubject>)> {
    let ck = Checkpoint::load(checkpoint)?;
    let records = read_dataset(data)?;
    let dims = ck.dims();
    let first = &records[0];
    if first.b0.n() != dims.n || first.c0.len() != dims.f {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects N={}, F={}; data has N={}, F={}",
            dims.n,
            dims.f,
            first.b0.n(),
            first.c0.len()
        )));
    }
    let subjects = prepare_dataset(&records, &ck.config)?;
    Ok((ck, subjects))
}

/// Eval-mode metrics of a checkpoint on a dataset.
pub fn evaluate_checkpoint(ck: &Checkpoint, subjects: &[PreparedSubject]) -> Result<Metrics> {
    let params = ck.params()?;
    let refs: Vec<&PreparedSubject> = subjects.iter().collect();
    let preds = predict(&params, &refs, &ck.behavior_stats, ck.config.ablation)?;
    let probs: Vec<f64> = preds.iter().map(|p| p.prob).collect();
    let labels: Vec<u8> = subjects.iter().map(|s| s.y).collect();
    metrics(&probs, &labels, 0.5)
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (ck, subjects) = load_for_eval(&a.data, &a.checkpoint)?;
    let m = evaluate_checkpoint(&ck, &subjects)?;
    let text = to_json(&HoldoutReport { metrics: m, balanced_accuracy: m.balanced_accuracy() })?;
    if let Some(p) = &a.out {
        write_text(p, &text)?;
    }
    say(out, &text)
}

pub fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    if a.dims != "small" {
        return Err(Error::InvalidArgument(format!("unknown --dims {:?} (only `small`)", a.dims)));
    }
    let problem = CheckProblem::small(a.seed)?;
    let report = gradcheck(&problem, a.step)?;
    for t in &report.tensors {
        let verdict = if t.rel_err <= a.tol { "ok  " } else { "FAIL" };
        say(out, &format!("{verdict} {:<20} n={:<4} rel_err={:.3e}", t.name, t.scalars, t.rel_err))?;
    }
    let failed = report.failures(a.tol);
    if failed.is_empty() {
        say(out, &format!("all {} tensors within {:e}", report.tensors.len(), a.tol))
    } else {
        let names: Vec<&str> = failed.iter().map(|t| t.name.as_str()).collect();
        Err(Error::GradientCheck(names.join(", ")))
    }
}

pub fn cmd_export_edges(a: &ExportArgs, out: &mut dyn Write) -> Result<()> {
    if a.group_by != "label" {
        return Err(Error::InvalidArgument(format!("unknown --group-by {:?} (only `label`)", a.group_by)));
    }
    if !(a.top_percent >= 0.0 && a.top_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "--top-percent must lie in [0,100], got {}",
            a.top_percent
        )));
    }
    let (ck, subjects) = load_for_eval(&a.data, &a.checkpoint)?;
    let params = ck.params()?;
    let refs: Vec<&PreparedSubject> = subjects.iter().collect();
    let preds = predict(&params, &refs, &ck.behavior_stats, ck.config.ablation)?;
    let maps: Vec<EdgeMap> = subjects.iter().zip(&preds).map(|(s, p)| EdgeMap::for_subject(s, p)).collect();
    for class in 0..2u8 {
        let members: Vec<&ndarray::Array2<f64>> =
            maps.iter().zip(&subjects).filter(|(_, s)| s.y == class).map(|(m, _)| &m.mixed).collect();
        if members.is_empty() {
            continue;
        }
        let mean = average(&members)?;
        let kept = top_edges(&mean, a.top_percent);
        write_text(&a.out.join(format!("edges_class{class}.csv")), &edges_csv(&kept))?;
        write_text(&a.out.join(format!("mixed_class{class}.csv")), &matrix_csv(&mean))?;
        say(out, &format!("class {class}: {} subjects, {} edges retained", members.len(), kept.len()))?;
    }
    Ok(())
}
