//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is an append-only list of nodes. Every node stores its forward
//! value and the operation that produced it; parents always precede their
//! children, so a single reverse sweep accumulates all gradients. Vectors are
//! `1×D` rows and scalars are `1×1`.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::symmat::EigenPair;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Powf(Var, f64),
    SoftmaxRows(Var),
    SumAll(Var),
    MeanRows(Var),
    RowSums(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    ScatterSym(Var, Arc<Vec<(usize, usize)>>),
    Heat(Var, Var, Arc<EigenPair>),
    Inverse(Var),
    NormalizeRows(Var),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b)
            | Sub(a, b)
            | Mul(a, b)
            | AddRow(a, b)
            | MulRow(a, b)
            | MulCol(a, b)
            | MulScalar(a, b)
            | MatMul(a, b)
            | MatMulNt(a, b) => vec![*a, *b],
            Heat(t, x, _) => vec![*t, *x],
            Scale(a, _)
            | AddConst(a)
            | Transpose(a)
            | Relu(a)
            | Sigmoid(a)
            | Tanh(a)
            | Softplus(a)
            | Powf(a, _)
            | SoftmaxRows(a)
            | SumAll(a)
            | MeanRows(a)
            | RowSums(a)
            | SliceCols(a, ..)
            | SliceRows(a, ..)
            | GatherRows(a, _)
            | ScatterSym(a, _)
            | Inverse(a)
            | NormalizeRows(a) => vec![*a],
            ConcatCols(vs) => vs.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; `None` for nodes that received no gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the right shape when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(self.shapes[v.0]))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn invert(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch(format!("inverse of {}x{}", n, a.ncols())));
    }
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let mut piv = col;
        let mut best = m[[col, col]].abs();
        for r in (col + 1)..n {
            if m[[r, col]].abs() > best {
                best = m[[r, col]].abs();
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::IllConditioned { condition: f64::INFINITY });
        }
        if piv != col {
            for c in 0..n {
                m.swap([col, c], [piv, c]);
                inv.swap([col, c], [piv, c]);
            }
        }
        let p = m[[col, col]];
        m.row_mut(col).mapv_inplace(|v| v / p);
        inv.row_mut(col).mapv_inplace(|v| v / p);
        let mrow = m.row(col).to_owned();
        let irow = inv.row(col).to_owned();
        for r in 0..n {
            if r != col {
                let f = m[[r, col]];
                if f != 0.0 {
                    m.row_mut(r).scaled_add(-f, &mrow);
                    inv.row_mut(r).scaled_add(-f, &irow);
                }
            }
        }
    }
    Ok(inv)
}

fn heat_operator(eig: &EigenPair, theta: f64, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    let scaled = &eig.vectors * &eig.values.mapv(|l| f(theta, l)).insert_axis(Axis(0));
    scaled.dot(&eig.vectors.t())
}

/// `exp(−θJ)` from the eigendecomposition of `J`.
pub fn heat_kernel(eig: &EigenPair, theta: f64) -> Array2<f64> {
    heat_operator(eig, theta, |t, l| (-t * l).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (data).
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// `a + row` broadcast over rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1xC row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    /// Scales column `j` of `a` by `row[j]`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a 1xC row");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.value(col).ncols(), 1, "mul_col expects an Rx1 column");
        let v = self.value(a) * self.value(col);
        self.push(v, Op::MulCol(a, col))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.value(s).dim(), (1, 1), "mul_scalar expects a 1x1 scalar");
        let v = self.value(a) * self.scalar(s);
        self.push(v, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).mapv(|x| x.powf(p));
        self.push(v, Op::Powf(a, p))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Column means as a `1×C` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Row sums as an `R×1` column.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSums(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        self.push(v, Op::GatherRows(a, idx))
    }

    /// Places edge values (`E×1`) at `(i, j)` and `(j, i)` of an `n×n` zero matrix.
    pub fn scatter_sym(&mut self, values: Var, edges: Arc<Vec<(usize, usize)>>, n: usize) -> Var {
        let vals = self.value(values);
        assert_eq!(vals.dim(), (edges.len(), 1), "one value per edge");
        let mut out = Array2::zeros((n, n));
        for (e, &(i, j)) in edges.iter().enumerate() {
            out[[i, j]] = vals[[e, 0]];
            out[[j, i]] = vals[[e, 0]];
        }
        self.push(out, Op::ScatterSym(values, edges))
    }

    /// `exp(−θJ)·X` with `J` given by its eigendecomposition.
    pub fn heat(&mut self, theta: Var, x: Var, eig: Arc<EigenPair>) -> Var {
        let t = self.scalar(theta);
        let v = heat_kernel(&eig, t).dot(self.value(x));
        self.push(v, Op::Heat(theta, x, eig))
    }

    pub fn inverse(&mut self, a: Var) -> Result<Var> {
        let v = invert(self.value(a))?;
        Ok(self.push(v, Op::Inverse(a)))
    }

    /// Each row scaled to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let n = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / n);
        }
        self.push(v, Op::NormalizeRows(a))
    }

    /// Reverse sweep from a scalar `loss`, seeding it with `seed`.
    pub fn backward(&self, loss: Var, seed: f64) -> Result<Gradients> {
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.value(loss).dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::from_elem((1, 1), seed));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for p in node.op.parents() {
                if p.0 >= idx {
                    return Err(Error::GraphCycle { node: idx, parent: p.0 });
                }
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.dim()).collect() })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*row));
                }
                if self.wants(*row) {
                    let gr = (g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(grads, *row, gr);
                }
            }
            Op::MulCol(a, col) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*col));
                }
                if self.wants(*col) {
                    let gc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *col, gc);
                }
            }
            Op::MulScalar(a, s) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.scalar(*s));
                }
                if self.wants(*s) {
                    let gs = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, Array2::from_elem((1, 1), gs));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g * &out.mapv(|y| y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g * &out.mapv(|y| 1.0 - y * y);
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g * &self.value(*a).mapv(sigmoid);
                self.accumulate(grads, *a, d);
            }
            Op::Powf(a, p) => {
                let d = g * &self.value(*a).mapv(|x| p * x.powf(p - 1.0));
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let gy = g * out;
                let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = &gy - &(out * &dots);
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let shape = self.value(*a).dim();
                self.accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).dim();
                let row = g / r as f64;
                let d = row.broadcast((r, c)).expect("broadcast").to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::RowSums(a) => {
                let (r, c) = self.value(*a).dim();
                let d = g.broadcast((r, c)).expect("broadcast").to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                d.slice_mut(s![*start..*end, ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScatterSym(v, edges) => {
                let mut d = Array2::zeros((edges.len(), 1));
                for (e, &(i, j)) in edges.iter().enumerate() {
                    d[[e, 0]] = g[[i, j]] + g[[j, i]];
                }
                self.accumulate(grads, *v, d);
            }
            Op::Heat(theta, x, eig) => {
                let t = self.scalar(*theta);
                if self.wants(*x) {
                    self.accumulate(grads, *x, heat_kernel(eig, t).dot(g));
                }
                if self.wants(*theta) {
                    let dk = heat_operator(eig, t, |t, l| -l * (-t * l).exp());
                    let gt = (g * &dk.dot(self.value(*x))).sum();
                    self.accumulate(grads, *theta, Array2::from_elem((1, 1), gt));
                }
            }
            Op::Inverse(a) => {
                let it = out.t();
                let d = -it.dot(g).dot(&it);
                self.accumulate(grads, *a, d);
            }
            Op::NormalizeRows(a) => {
                let x = self.value(*a);
                let mut d = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let norm = x.row(r).dot(&x.row(r)).sqrt();
                    let y = out.row(r);
                    let gr = g.row(r);
                    let proj = y.dot(&gr);
                    let mut dr = d.row_mut(r);
                    dr.assign(&((&gr - &(&y * proj)) / norm));
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmat::{sym_eig, SymMatrix};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| StandardNormal.sample(rng))
    }

    /// Central-difference check of `build` with respect to every entry of `inputs`.
    fn check(inputs: Vec<Array2<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out, 1.0).unwrap();
        let h = 1e-6;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k]);
            for idx in 0..x.len() {
                let eval = |delta: f64| {
                    let mut perturbed = inputs.clone();
                    let (r, c) = (idx / x.ncols(), idx % x.ncols());
                    perturbed[k][[r, c]] += delta;
                    let mut t = Tape::new();
                    let vs: Vec<Var> = perturbed.into_iter().map(|x| t.param(x)).collect();
                    let o = build(&mut t, &vs);
                    t.scalar(o)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[[idx / x.ncols(), idx % x.ncols()]];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "input {k} entry {idx}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0]]);
        let y = t.mul(x, x);
        let g = t.backward(y, 1.0).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 6.0);
    }

    #[test]
    fn zero_path_gives_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0, 1.0]]);
        let z = t.scale(x, 0.0);
        let loss = t.sum_all(z);
        let g = t.backward(loss, 1.0).unwrap();
        assert!(g.get_or_zeros(x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_reference_is_a_cycle() {
        let mut c = Tape::new();
        c.nodes.push(Node { value: array![[1.0]], op: Op::Scale(Var(1), 1.0), requires_grad: true });
        c.nodes.push(Node { value: array![[1.0]], op: Op::Scale(Var(0), 1.0), requires_grad: true });
        assert!(matches!(c.backward(Var(0), 1.0), Err(Error::GraphCycle { .. })));
    }

    #[test]
    fn elementwise_and_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(3, 4, &mut rng);
        let b = randn(3, 4, &mut rng);
        let row = randn(1, 4, &mut rng);
        let col = randn(3, 1, &mut rng);
        let s = randn(1, 1, &mut rng);
        check(vec![a, b, row, col, s], |t, v| {
            let x = t.mul(v[0], v[1]);
            let x = t.add_row(x, v[2]);
            let x = t.mul_row(x, v[2]);
            let x = t.mul_col(x, v[3]);
            let x = t.mul_scalar(x, v[4]);
            let y = t.sub(x, v[0]);
            let y = t.tanh(y);
            let z = t.sigmoid(v[1]);
            let z = t.softplus(z);
            let w = t.add(y, z);
            let w = t.scale(w, 0.7);
            t.sum_all(w)
        });
    }

    #[test]
    fn matrix_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = randn(3, 4, &mut rng);
        let b = randn(4, 2, &mut rng);
        let c = randn(5, 4, &mut rng);
        check(vec![a, b, c], |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let act = t.matmul_nt(v[0], v[2]);
            let sm = t.softmax_rows(act);
            let tr = t.transpose(ab);
            let m = t.mean_rows(sm);
            let rs = t.row_sums(tr);
            let cat = t.concat_cols(&[m, m]);
            let sl = t.slice_cols(cat, 2, 7);
            let sq = t.mul(sl, sl);
            let l1 = t.sum_all(sq);
            let rs2 = t.mul(rs, rs);
            let l2 = t.sum_all(rs2);
            let sr = t.slice_rows(v[2], 1, 3);
            let nr = t.normalize_rows(sr);
            let l3 = t.sum_all(nr);
            let x = t.add(l1, l2);
            t.add(x, l3)
        });
    }

    #[test]
    fn relu_pow_gather_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(4, 3, &mut rng);
        let e = randn(3, 1, &mut rng).mapv(|x| x.abs() + 0.5);
        let edges = Arc::new(vec![(0, 1), (1, 2), (0, 3)]);
        let idx = Arc::new(vec![2, 0, 2, 1]);
        check(vec![a, e], move |t, v| {
            let r = t.relu(v[0]);
            let g = t.gather_rows(r, idx.clone());
            let l1 = t.sum_all(g);
            let m = t.scatter_sym(v[1], edges.clone(), 4);
            let d = t.row_sums(m);
            let d = t.add_const(d, &Array2::from_elem((4, 1), 0.1));
            let p = t.powf(d, -0.5);
            let n = t.mul_col(m, p);
            let l2 = t.sum_all(n);
            t.add(l1, l2)
        });
    }

    #[test]
    fn inverse_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::<f64>::eye(4) + randn(4, 4, &mut rng) * 0.2;
        let w = randn(4, 4, &mut rng);
        check(vec![a, w], |t, v| {
            let inv = t.inverse(v[0]).unwrap();
            let p = t.mul(inv, v[1]);
            t.sum_all(p)
        });
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let inv = invert(&a).unwrap();
        let id = a.dot(&inv);
        assert!((id - Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn heat_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = randn(5, 5, &mut rng);
        let j = SymMatrix::from_array(m.t().dot(&m)).unwrap();
        let eig = Arc::new(sym_eig(&j).unwrap());
        let x = randn(5, 3, &mut rng);
        let w = randn(5, 3, &mut rng);
        check(vec![array![[0.7]], x, w], move |t, v| {
            let h = t.heat(v[0], v[1], eig.clone());
            let p = t.mul(h, v[2]);
            t.sum_all(p)
        });
    }
}
