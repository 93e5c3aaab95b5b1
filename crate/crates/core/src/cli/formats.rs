//! Dataset, configuration, checkpoint, trace and metrics files.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::engine::config::TrainConfig;
use crate::engine::model::BehaviorStats;
use crate::engine::params::{ModelDims, ModelParams};
use crate::engine::train::{EpochRecord, RngState, TrainOutcome};
use crate::error::{Error, Result};
use crate::objective::PrototypeState;
use crate::symmat::SymMatrix;
use crate::synthdata::SubjectRecord;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    b0: Vec<Vec<f64>>,
    b2: Vec<Vec<f64>>,
    c0: Vec<f64>,
    c2: Vec<f64>,
    y: u8,
}

fn rows(m: &SymMatrix) -> Vec<Vec<f64>> {
    m.as_array().rows().into_iter().map(|r| r.to_vec()).collect()
}

/// One JSON object per line, numbers in shortest round-trip form.
pub fn dataset_to_string(records: &[SubjectRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            b0: rows(&r.b0),
            b2: rows(&r.b2),
            c0: r.c0.clone(),
            c2: r.c2.clone(),
            y: r.y,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| Error::InvalidArgument(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn matrix(rows: Vec<Vec<f64>>, line: usize, key: &str) -> Result<SymMatrix> {
    let data = |message: String| Error::Data { line, message };
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(data(format!("`{key}` must be a non-empty square matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(data(format!("`{key}` has non-finite entries")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    SymMatrix::from_array(Array2::from_shape_vec((n, n), flat).expect("square"))
        .map_err(|e| data(e.to_string()))
}

pub fn parse_dataset(text: &str) -> Result<Vec<SubjectRecord>> {
    let mut out: Vec<SubjectRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let data = |message: String| Error::Data { line, message };
        let rec: RecordLine = serde_json::from_str(raw).map_err(|e| data(e.to_string()))?;
        if rec.y > 1 {
            return Err(data(format!("label must be 0 or 1, got {}", rec.y)));
        }
        if rec.c0.len() != rec.c2.len() || rec.c0.is_empty() {
            return Err(data("behavior vectors must be non-empty and of equal length".into()));
        }
        if rec.c0.iter().chain(&rec.c2).any(|v| !v.is_finite()) {
            return Err(data("behavior has non-finite entries".into()));
        }
        let b0 = matrix(rec.b0, line, "b0")?;
        let b2 = matrix(rec.b2, line, "b2")?;
        if b0.n() != b2.n() {
            return Err(data(format!("visits differ in size: {} vs {}", b0.n(), b2.n())));
        }
        if let Some(first) = out.first() {
            if first.b0.n() != b0.n() || first.c0.len() != rec.c0.len() {
                return Err(data(format!(
                    "record shape ({} nodes, {} behavior) differs from the first record ({}, {})",
                    b0.n(),
                    rec.c0.len(),
                    first.b0.n(),
                    first.c0.len()
                )));
            }
        }
        out.push(SubjectRecord { id: rec.id, b0, b2, c0: rec.c0, c2: rec.c2, y: rec.y });
    }
    if out.is_empty() {
        return Err(Error::Data { line: 0, message: "dataset is empty".into() });
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<SubjectRecord>> {
    parse_dataset(&read_text(path)?)
}

pub fn write_dataset(path: &Path, records: &[SubjectRecord]) -> Result<()> {
    write_text(path, &dataset_to_string(records)?)
}

/// Flat `key = value` TOML; unknown keys are rejected, missing keys take defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = message.split('`').nth(1).map(str::to_string).unwrap_or_else(|| "<config>".to_string());
        Error::Config { field, message }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    parse_config(&read_text(path)?)
}

pub fn config_to_string(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub const CHECKPOINT_FORMAT: &str = "neurobridge-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Row-major values.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DimsEntry {
    n: usize,
    f: usize,
    s: usize,
    d0: usize,
    d: usize,
}

/// Everything needed to evaluate a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    dims: DimsEntry,
    pub config: TrainConfig,
    pub rng: RngState,
    pub beta_plus: f64,
    pub behavior_stats: BehaviorStats,
    pub prototypes: PrototypeState,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, config: &TrainConfig) -> Self {
        let dims = outcome.params.dims;
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dims: DimsEntry { n: dims.n, f: dims.f, s: dims.s, d0: dims.d0, d: dims.d },
            config: config.clone(),
            rng: outcome.rng,
            beta_plus: outcome.beta_plus,
            behavior_stats: outcome.stats.clone(),
            prototypes: outcome.protos.clone(),
            tensors: outcome
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                    values: t.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { n: self.dims.n, f: self.dims.f, s: self.dims.s, d0: self.dims.d0, d: self.dims.d }
    }

    pub fn params(&self) -> Result<ModelParams> {
        let mut tensors = BTreeMap::new();
        for t in &self.tensors {
            let a = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.values.clone())
                .map_err(|e| Error::ShapeMismatch(format!("{}: {e}", t.name)))?;
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint tensor {}", t.name)));
            }
            tensors.insert(t.name.clone(), a);
        }
        ModelParams::from_tensors(self.dims(), tensors)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::Data { line: e.line(), message: format!("checkpoint: {e}") })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data {
                line: 1,
                message: format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            });
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }
}

pub fn trace_to_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,sup,dyn,proto,val_accuracy,val_sensitivity,val_specificity\n");
    for r in trace {
        let (a, s, p) = match r.val {
            Some(m) => (m.accuracy.to_string(), m.sensitivity.to_string(), m.specificity.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(out, "{},{},{},{},{},{a},{s},{p}", r.epoch, r.loss, r.sup, r.dyn_, r.proto);
    }
    out
}
