//! Time-mixed edge maps from gate scores.

use std::fmt::Write;

use ndarray::Array2;

use crate::engine::model::{Prediction, PreparedSubject};
use crate::error::{Error, Result};

/// Gate-score maps of both visits, the mixture weights and their mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub e0: Array2<f64>,
    pub e2: Array2<f64>,
    pub delta: [f64; 2],
    pub mixed: Array2<f64>,
}

fn scatter(n: usize, edges: &[(usize, usize)], values: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    for (&(i, j), &v) in edges.iter().zip(values) {
        m[[i, j]] = v;
        m[[j, i]] = v;
    }
    m
}

impl EdgeMap {
    pub fn new(e0: Array2<f64>, e2: Array2<f64>, delta: [f64; 2]) -> Self {
        let mixed = &e0 * delta[0] + &e2 * delta[1];
        Self { e0, e2, delta, mixed }
    }

    /// `𝓔^(τ)` from the kernel-modulated gates on each visit's edge set.
    pub fn for_subject(subject: &PreparedSubject, pred: &Prediction) -> Self {
        let n = subject.features[0].nrows();
        let e0 = scatter(n, &subject.graphs[0].edges, &pred.gated[0]);
        let e2 = scatter(n, &subject.graphs[1].edges, &pred.gated[1]);
        Self::new(e0, e2, pred.delta)
    }
}

/// Entrywise mean of mixed maps.
pub fn average(maps: &[&Array2<f64>]) -> Result<Array2<f64>> {
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("no maps to average".into()))?;
    let mut acc = Array2::<f64>::zeros(first.dim());
    for m in maps {
        acc += *m;
    }
    Ok(acc / maps.len() as f64)
}

/// `⌈p/100 · N(N−1)/2⌉`, capped at the number of pairs.
pub fn retained_count(n: usize, percent: f64) -> usize {
    let pairs = n * n.saturating_sub(1) / 2;
    let raw = percent / 100.0 * pairs as f64;
    // guard against products like 0.07·100 landing a hair above an integer
    let k = (raw - 1e-9).ceil().max(0.0) as usize;
    k.min(pairs)
}

/// The strongest `retained_count` undirected pairs, ties broken by index.
pub fn top_edges(mixed: &Array2<f64>, percent: f64) -> Vec<(usize, usize, f64)> {
    let n = mixed.nrows();
    let mut all: Vec<(usize, usize, f64)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| (i, j, mixed[[i, j]])).collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all.truncate(retained_count(n, percent));
    all
}

/// Zeroes everything but the retained pairs.
pub fn threshold(mixed: &Array2<f64>, percent: f64) -> Array2<f64> {
    let mut out = Array2::zeros(mixed.dim());
    for (i, j, w) in top_edges(mixed, percent) {
        out[[i, j]] = w;
        out[[j, i]] = w;
    }
    out
}

pub fn edges_csv(edges: &[(usize, usize, f64)]) -> String {
    let mut out = String::from("i,j,weight\n");
    for (i, j, w) in edges {
        let _ = writeln!(out, "{i},{j},{w}");
    }
    out
}

pub fn matrix_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
