use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::matrix::Matrix;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Transpose(Var),
    RowSoftmax(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LayerNorm { input: Var, inv_std: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    Sum(Var),
    Mean(Var),
    Square(Var),
    NormalizeRows(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
    KlRows { target: Matrix<T>, q: Var },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Transpose(..) => "transpose",
            Op::RowSoftmax(..) => "row_softmax",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding_lookup",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Square(..) => "square",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::CrossEntropy { .. } => "cross_entropy_with_logits",
            Op::KlRows { .. } => "kl_divergence_rows",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass; nodes are stored in creation order, which is a
/// topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Matrix<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads[v.0].take()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va.matmul(vb);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Matrix<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                name,
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Matrix::from_vec(va.rows(), va.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Matrix<T>> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(shape_err(
                name,
                format!("{:?} with row {:?}", va.shape(), vr.shape()),
            ));
        }
        let mut out = va.clone();
        let r = vr.as_slice();
        for i in 0..out.rows() {
            for (x, &y) in out.row_mut(i).iter_mut().zip(r) {
                *x = f(*x, y);
            }
        }
        Ok(out)
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Softmax over each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        let rg = self.rg(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    /// Per-row standardization `(x − mean) / sqrt(var + 1e-5)`, no affine part.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let eps = T::lit(LAYER_NORM_EPS);
        let mut out = self.value(a).clone();
        let n = T::from_usize(out.cols()).unwrap();
        let mut inv_std = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LayerNorm { input: a, inv_std }, rg)
    }

    /// Gathers rows of `table` by index.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vt.rows()) {
            return Err(shape_err(
                "embedding_lookup",
                format!("id {bad} out of range for table {:?}", vt.shape()),
            ));
        }
        let mut out = Matrix::zeros(ids.len(), vt.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(vt.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| shape_err("concat_rows", "no inputs".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err(
                    "concat_rows",
                    format!("column count {} vs {}", v.cols(), cols),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.as_slice());
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err(
                    "concat_cols",
                    format!("row count {} vs {}", v.rows(), rows),
                ));
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("rows {start}..{} of {:?}", start + len, va.shape()),
            ));
        }
        let cols = va.cols();
        let out = Matrix::from_vec(
            len,
            cols,
            va.as_slice()[start * cols..(start + len) * cols].to_vec(),
        );
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows { input: a, start }, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("cols {start}..{} of {:?}", start + len, va.shape()),
            ));
        }
        let mut out = Matrix::zeros(va.rows(), len);
        for r in 0..va.rows() {
            out.row_mut(r)
                .copy_from_slice(&va.row(r)[start..start + len]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols { input: a, start }, rg))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean of all entries, as 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.len().max(1)).unwrap();
        let out = Matrix::scalar(v.sum() / n);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(&[a]);
        self.push(out, Op::Square(a), rg)
    }

    /// Divides each row by its sum.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let s: T = row.iter().copied().sum();
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::NormalizeRows(a), rg)
    }

    /// `−log softmax(logits)[target]` for a 1×c logit row, as 1×1.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, target: usize) -> Result<Var> {
        let v = self.value(logits);
        if v.rows() != 1 || target >= v.cols() {
            return Err(shape_err(
                "cross_entropy_with_logits",
                format!("logits {:?}, target {target}", v.shape()),
            ));
        }
        let z = v.row(0);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + z.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
        let probs: Vec<T> = z.iter().map(|&x| (x - lse).exp()).collect();
        let loss = lse - z[target];
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            rg,
        ))
    }

    /// `Σ_rows Σ_i p_i log(p_i / q_i)` with `p` a fixed target; zero target
    /// entries contribute nothing.
    pub fn kl_divergence_rows(&mut self, target: &Matrix<T>, q: Var) -> Result<Var> {
        let vq = self.value(q);
        if vq.shape() != target.shape() {
            return Err(shape_err(
                "kl_divergence_rows",
                format!("target {:?} vs q {:?}", target.shape(), vq.shape()),
            ));
        }
        let total: T = target
            .as_slice()
            .iter()
            .zip(vq.as_slice())
            .filter(|(&p, _)| p > T::zero())
            .map(|(&p, &q)| p * (p / q).ln())
            .sum();
        let rg = self.rg(&[q]);
        Ok(self.push(
            Matrix::scalar(total),
            Op::KlRows {
                target: target.clone(),
                q,
            },
            rg,
        ))
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss { shape });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    g.matmul_nt_into(vb, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    va.matmul_tn_into(g, gb);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.add_scaled(g, -T::one());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &gi), &bi) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((x, &gi), &ai) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    let gr = gr.as_mut_slice();
                    for r in 0..g.rows() {
                        for (x, &gi) in gr.iter_mut().zip(g.row(r)) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        for ((x, &gi), &ri) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(vr.as_slice()) {
                            *x += gi * ri;
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *row) {
                    let gr = gr.as_mut_slice();
                    for r in 0..g.rows() {
                        for ((x, &gi), &ai) in gr.iter_mut().zip(g.row(r)).zip(va.row(r)) {
                            *x += gi * ai;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_scaled(g, *c);
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.add_assign(&g.transpose());
                }
            }
            Op::RowSoftmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for ((x, &yi), &gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &yi), &gi) in ga.as_mut_slice().iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                        *x += gi * (T::one() - yi * yi);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &yi), &gi) in ga.as_mut_slice().iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                        *x += gi * yi * (T::one() - yi);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((x, &yi), &gi) in ga.as_mut_slice().iter_mut().zip(y.as_slice()).zip(g.as_slice()) {
                        if yi > T::zero() {
                            *x += gi;
                        }
                    }
                }
            }
            Op::LayerNorm { input, inv_std } => {
                if let Some(ga) = self.slot(grads, *input) {
                    let n = T::from_usize(y.cols()).unwrap();
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mean_g = gr.iter().copied().sum::<T>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                        let inv = inv_std[r];
                        for ((x, &yi), &gi) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *x += inv * (gi - mean_g - yi * mean_gy);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if let Some(gt) = self.slot(grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for (x, &gi) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if let Some(gp) = self.slot(grads, p) {
                        let cols = g.cols();
                        for (x, &gi) in gp
                            .as_mut_slice()
                            .iter_mut()
                            .zip(&g.as_slice()[offset * cols..(offset + rows) * cols])
                        {
                            *x += gi;
                        }
                    }
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if let Some(gp) = self.slot(grads, p) {
                        for r in 0..g.rows() {
                            for (x, &gi) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + cols]) {
                                *x += gi;
                            }
                        }
                    }
                    offset += cols;
                }
            }
            Op::SliceRows { input, start } => {
                if let Some(ga) = self.slot(grads, *input) {
                    for r in 0..g.rows() {
                        for (x, &gi) in ga.row_mut(start + r).iter_mut().zip(g.row(r)) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::SliceCols { input, start } => {
                if let Some(ga) = self.slot(grads, *input) {
                    for r in 0..g.rows() {
                        for (x, &gi) in ga.row_mut(r)[*start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let gi = g.item();
                if let Some(ga) = self.slot(grads, *a) {
                    ga.as_mut_slice().iter_mut().for_each(|x| *x += gi);
                }
            }
            Op::Mean(a) => {
                let n = T::from_usize(self.value(*a).len().max(1)).unwrap();
                let gi = g.item() / n;
                if let Some(ga) = self.slot(grads, *a) {
                    ga.as_mut_slice().iter_mut().for_each(|x| *x += gi);
                }
            }
            Op::Square(a) => {
                let va = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    let two = T::lit(2.0);
                    for ((x, &ai), &gi) in ga.as_mut_slice().iter_mut().zip(va.as_slice()).zip(g.as_slice()) {
                        *x += two * ai * gi;
                    }
                }
            }
            Op::NormalizeRows(a) => {
                let va = self.value(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for r in 0..y.rows() {
                        let s: T = va.row(r).iter().copied().sum();
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for (x, &gi) in ga.row_mut(r).iter_mut().zip(gr) {
                            *x += (gi - dot) / s;
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let gi = g.item();
                if let Some(gl) = self.slot(grads, *logits) {
                    for (i, (x, &p)) in gl.as_mut_slice().iter_mut().zip(probs).enumerate() {
                        let onehot = if i == *target { T::one() } else { T::zero() };
                        *x += gi * (p - onehot);
                    }
                }
            }
            Op::KlRows { target, q } => {
                let gi = g.item();
                let vq = self.value(*q);
                if let Some(gq) = self.slot(grads, *q) {
                    for ((x, &p), &qi) in gq.as_mut_slice().iter_mut().zip(target.as_slice()).zip(vq.as_slice()) {
                        if p > T::zero() {
                            *x -= gi * p / qi;
                        }
                    }
                }
            }
        }
    }

    /// Gradient accumulator for `v`, allocated lazily; `None` for nodes that
    /// do not need one.
    fn slot<'g>(&self, grads: &'g mut [Option<Matrix<T>>], v: Var) -> Option<&'g mut Matrix<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let (r, c) = node.value.shape();
        Some(grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c)))
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
