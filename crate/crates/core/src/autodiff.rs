//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records one forward evaluation as a list of nodes. Parameters
//! are borrowed from a [`ParamStore`] rather than copied, so building a graph
//! per scene stays cheap. [`Tape::backward`] seeds any number of output nodes
//! with upstream gradients and returns gradients for every node that needs one.

use crate::nn::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    CumsumPairs(Var),
    // `winners[j]` is the row that won column j, `None` when the default was used.
    MaskedMax { input: Var, fallback: Var, winners: Vec<Option<usize>> },
    SelectRows { on: Var, off: Var, mask: Vec<bool> },
    Mean(Vec<Var>),
}

struct Node<S> {
    op: Op<S>,
    value: Option<Matrix<S>>,
    needs_grad: bool,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_nodes: Vec<Option<Var>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<S> {
    grads: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Matrix<S>> {
        self.grads[v.0].as_ref()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (_, Some(value)) => value,
            (Op::Param(id), None) => self.params.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op<S>, value: Matrix<S>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value: Some(value), needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(Op::Input, value, false)
    }

    /// Input whose gradient [`Tape::backward`] will report.
    pub fn input(&mut self, value: Matrix<S>) -> Var {
        self.push(Op::Input, value, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id] {
            return v;
        }
        self.nodes.push(Node { op: Op::Param(id), value: None, needs_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulBt(a, b), value, ng)
    }

    /// Adds the `1 × d` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    /// Multiplies every row of `a` elementwise by the `1 × d` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "mul_row expects a row vector");
        assert_eq!(av.cols(), rv.cols(), "mul_row width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o *= b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(Op::MulRow(a, row), value, ng)
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        let value = self.value(a).map(|v| v * s);
        let ng = self.needs(a);
        self.push(Op::Scale(a, s), value, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(S::zero()));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut value = Matrix::zeros(av.rows(), av.cols());
        for r in 0..av.rows() {
            let p = crate::scalar::softmax(av.row(r));
            value.row_mut(r).copy_from_slice(&p);
        }
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
                value.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
                offset += pv.cols();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::ConcatRows(parts.to_vec()), Matrix::from_vec(rows, cols, data), ng)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols out of range");
        let mut value = Matrix::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            value.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let ng = self.needs(a);
        self.push(Op::SliceCols(a, start), value, ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let value = self.value(a).clone().reshaped(rows, cols);
        let ng = self.needs(a);
        self.push(Op::Reshape(a), value, ng)
    }

    /// Running sum along each row over interleaved `(x, y)` pairs:
    /// `out[2t + c] = Σ_{s ≤ t} in[2s + c]`.
    pub fn cumsum_pairs(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols() % 2, 0, "cumsum_pairs needs an even width");
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for i in 2..row.len() {
                let prev = row[i - 2];
                row[i] += prev;
            }
        }
        let ng = self.needs(a);
        self.push(Op::CumsumPairs(a), value, ng)
    }

    /// Column-wise max over the rows of `input` whose `mask` entry is true.
    /// Returns `fallback` (a `1 × d` row) when no row is valid.
    pub fn masked_max_rows(&mut self, input: Var, mask: &[bool], fallback: Var) -> Var {
        let iv = self.value(input);
        let fv = self.value(fallback);
        assert_eq!(iv.rows(), mask.len(), "mask length must equal row count");
        assert_eq!(fv.shape(), (1, iv.cols()), "fallback must be a matching row vector");
        let mut winners = vec![None; iv.cols()];
        let mut out = fv.data().to_vec();
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (j, &v) in iv.row(r).iter().enumerate() {
                // Strict comparison: earliest row wins ties.
                if winners[j].is_none() || v > out[j] {
                    out[j] = v;
                    winners[j] = Some(r);
                }
            }
        }
        let ng = self.needs(input) || self.needs(fallback);
        self.push(Op::MaskedMax { input, fallback, winners }, Matrix::row_vector(out), ng)
    }

    /// Row `i` of the result is row `i` of `on` when `mask[i]`, else of `off`.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Var {
        let (onv, offv) = (self.value(on), self.value(off));
        assert_eq!(onv.shape(), offv.shape(), "select_rows shape mismatch");
        assert_eq!(onv.rows(), mask.len(), "mask length must equal row count");
        let mut value = offv.clone();
        for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            value.row_mut(r).copy_from_slice(onv.row(r));
        }
        let ng = self.needs(on) || self.needs(off);
        self.push(Op::SelectRows { on, off, mask: mask.to_vec() }, value, ng)
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of no parts");
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            value.add_assign(self.value(p));
        }
        value.scale_in_place(S::one() / S::lit(parts.len() as f64));
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Mean(parts.to_vec()), value, ng)
    }

    /// Back-propagates the given output gradients.
    pub fn backward(&self, seeds: &[(Var, Matrix<S>)]) -> Gradients<S> {
        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape mismatch");
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, idx: usize, g: &Matrix<S>, grads: &mut [Option<Matrix<S>>]) {
        let out = self.nodes[idx].value.as_ref();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul_bt(self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, self.value(*a).matmul_at(g));
                }
            }
            Op::MatMulBt(a, b) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.matmul_at(self.value(*a)));
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*row) {
                    accumulate(grads, *row, column_sums(g));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        accumulate(grads, *v, g.clone());
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        for (o, &b) in ga.row_mut(r).iter_mut().zip(rv.data()) {
                            *o *= b;
                        }
                    }
                    accumulate(grads, *a, ga);
                }
                if self.needs(*row) {
                    let mut gr = vec![S::zero(); rv.cols()];
                    for r in 0..g.rows() {
                        for ((o, &gv), &x) in gr.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += gv * x;
                        }
                    }
                    accumulate(grads, *row, Matrix::row_vector(gr));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::Relu(a) => {
                let out = out.expect("relu value");
                let mut ga = g.clone();
                for (o, &y) in ga.data_mut().iter_mut().zip(out.data()) {
                    if y <= S::zero() {
                        *o = S::zero();
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = out.expect("softmax value");
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: S = g.row(r).iter().zip(y.row(r)).map(|(&gv, &yv)| gv * yv).sum();
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yv * (gv - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    if self.needs(p) {
                        let data = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(grads, p, Matrix::from_vec(rows, cols, data));
                    }
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                let (rows, cols) = self.value(*a).shape();
                accumulate(grads, *a, g.clone().reshaped(rows, cols));
            }
            Op::CumsumPairs(a) => {
                let mut ga = g.clone();
                for r in 0..ga.rows() {
                    let row = ga.row_mut(r);
                    for i in (0..row.len().saturating_sub(2)).rev() {
                        let next = row[i + 2];
                        row[i] += next;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::MaskedMax { input, fallback, winners } => {
                let iv = self.value(*input);
                let mut gi = Matrix::zeros(iv.rows(), iv.cols());
                let mut gf = Matrix::zeros(1, iv.cols());
                for (j, w) in winners.iter().enumerate() {
                    match w {
                        Some(r) => gi.set(*r, j, gi.get(*r, j) + g.get(0, j)),
                        None => gf.set(0, j, g.get(0, j)),
                    }
                }
                if self.needs(*input) {
                    accumulate(grads, *input, gi);
                }
                if self.needs(*fallback) {
                    accumulate(grads, *fallback, gf);
                }
            }
            Op::SelectRows { on, off, mask } => {
                let cols = g.cols();
                let mut gon = Matrix::zeros(g.rows(), cols);
                let mut goff = Matrix::zeros(g.rows(), cols);
                for (r, &m) in mask.iter().enumerate() {
                    let target = if m { &mut gon } else { &mut goff };
                    target.row_mut(r).copy_from_slice(g.row(r));
                }
                if self.needs(*on) {
                    accumulate(grads, *on, gon);
                }
                if self.needs(*off) {
                    accumulate(grads, *off, goff);
                }
            }
            Op::Mean(parts) => {
                let w = S::one() / S::lit(parts.len() as f64);
                for &p in parts {
                    if self.needs(p) {
                        accumulate(grads, p, g.map(|v| v * w));
                    }
                }
            }
        }
    }

    /// Gradient for every parameter touched by this tape, indexed by [`ParamId`].
    pub fn param_gradients(&self, grads: &Gradients<S>) -> Vec<Option<Matrix<S>>> {
        self.param_nodes
            .iter()
            .map(|v| v.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Matrix<S>>], v: Var, g: Matrix<S>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums<S: Scalar>(g: &Matrix<S>) -> Matrix<S> {
    let mut out = vec![S::zero(); g.cols()];
    for r in 0..g.rows() {
        for (o, &v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Matrix::row_vector(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    /// Scalar objective `Σ w ⊙ f(x)` and its finite-difference gradient.
    fn check_op(build: impl Fn(&mut Tape<'_, f64>, Var) -> Var, x: Matrix<f64>) {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let xv = tape.input(x.clone());
        let y = build(&mut tape, xv);
        let weights: Vec<f64> =
            (0..tape.value(y).len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
        let seed = Matrix::from_vec(tape.value(y).rows(), tape.value(y).cols(), weights.clone());
        let grads = tape.backward(&[(y, seed)]);
        let analytic = grads.get(xv).cloned().unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));

        let eval = |x: &Matrix<f64>| {
            let mut t = Tape::new(&store);
            let xv = t.input(x.clone());
            let y = build(&mut t, xv);
            t.value(y).data().iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "entry {i}: fd {fd} vs analytic {a}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|i| ((i * 37 + 11) % 23) as f64 / 7.0 - 1.5).collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn elementary_ops_have_correct_gradients() {
        check_op(|t, x| t.relu(x), sample(3, 4));
        check_op(|t, x| t.softmax_rows(x), sample(3, 4));
        check_op(|t, x| t.cumsum_pairs(x), sample(2, 6));
        check_op(|t, x| t.scale(x, -2.5), sample(2, 2));
        check_op(|t, x| t.matmul_bt(x, x), sample(3, 4));
        check_op(
            |t, x| {
                let block = t.reshape(x, 3, 2);
                let row = t.slice_cols(x, 1, 3);
                let m = t.mul_row(block, row);
                let a = t.add_row(m, row);
                let c = t.concat_cols(&[a, block]);
                t.concat_rows(&[c, c])
            },
            sample(1, 6),
        );
    }

    #[test]
    fn masked_max_routes_gradient_to_winner_or_fallback() {
        let mut store = ParamStore::<f64>::new();
        let fb = store.add("fallback", ParamGroup::Shared, Matrix::row_vector(vec![9.0, 9.0]));
        let mut tape = Tape::new(&store);
        let x = tape.input(Matrix::from_vec(3, 2, vec![1.0, 5.0, 4.0, 2.0, 100.0, 100.0]));
        let f = tape.param(fb);
        let y = tape.masked_max_rows(x, &[true, true, false], f);
        assert_eq!(tape.value(y).data(), &[4.0, 5.0]);
        let g = tape.backward(&[(y, Matrix::row_vector(vec![1.0, 2.0]))]);
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 2.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.get(f).unwrap().data(), &[0.0, 0.0]);

        let mut tape = Tape::new(&store);
        let x = tape.input(Matrix::from_vec(1, 2, vec![1.0, 5.0]));
        let f = tape.param(fb);
        let y = tape.masked_max_rows(x, &[false], f);
        assert_eq!(tape.value(y).data(), &[9.0, 9.0]);
        let g = tape.backward(&[(y, Matrix::row_vector(vec![1.0, 2.0]))]);
        assert_eq!(tape.param_gradients(&g)[fb].as_ref().unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn select_and_mean_split_gradients() {
        check_op(
            |t, x| {
                let y = t.scale(x, 3.0);
                let s = t.select_rows(&[true, false, true], y, x);
                t.mean(&[s, x, y])
            },
            sample(3, 2),
        );
    }
}
