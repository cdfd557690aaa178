//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value and the
//! information needed to route gradients to its parents. Nodes are only ever
//! appended, so index order is a topological order and [`Tape::backward`]
//! walks it in reverse, visiting each node once.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    GatherRows { input: Var, index: Vec<usize> },
    SliceRows { input: Var, start: usize },
    MaxAggregate { input: Var, argmax: Vec<usize> },
    Concat(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Tensor },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`]. Only leaf gradients
/// are retained.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled to `v`'s shape when absent.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn expect_2d(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerics(format!("{name} produced a non-finite value")));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Record an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// `input · weight + bias` for `input: [n, a]`, `weight: [a, b]`, `bias: [b]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        self.affine(input, weight, Some(bias))
    }

    /// `input · weight` without bias.
    pub fn matmul(&mut self, input: Var, weight: Var) -> Result<Var> {
        self.affine(input, weight, None)
    }

    fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let (_, a) = expect_2d(x, "linear input")?;
        let (wa, b) = expect_2d(w, "linear weight")?;
        if a != wa {
            return Err(Error::Shape(format!(
                "linear: input {:?} does not conform to weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let mut out = Tensor::from_array2(x.view2().dot(&w.view2()));
        if let Some(bias) = bias {
            let bv = self.value(bias);
            if bv.shape() != [b] {
                return Err(Error::Shape(format!("linear: bias {:?} for width {b}", bv.shape())));
            }
            let bv = bv.data().to_vec();
            for r in 0..out.rows() {
                for (o, bb) in out.row_mut(r).iter_mut().zip(&bv) {
                    *o += bb;
                }
            }
        }
        self.push(out, Op::Linear { input, weight, bias }, "linear")
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Relu(input), "relu")
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if !x.same_shape(y) {
            return Err(Error::Shape(format!("{name}: shapes {:?} and {:?} differ", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |p, q| p + q)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |p, q| p - q)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |p, q| p * q)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Row `t` of the output is row `index[t]` of the input.
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let (n, c) = expect_2d(x, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows: index {bad} out of {n} rows")));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(vec![index.len(), c], data)?;
        self.push(out, Op::GatherRows { input, index: index.to_vec() }, "gather_rows")
    }

    /// Rows `range` of a matrix.
    pub fn slice_rows(&mut self, input: Var, range: std::ops::Range<usize>) -> Result<Var> {
        let x = self.value(input);
        let (n, c) = expect_2d(x, "slice_rows")?;
        if range.start > range.end || range.end > n {
            return Err(Error::Shape(format!("slice_rows: {range:?} out of {n} rows")));
        }
        let data = x.data()[range.start * c..range.end * c].to_vec();
        let out = Tensor::new(vec![range.len(), c], data)?;
        self.push(out, Op::SliceRows { input, start: range.start }, "slice_rows")
    }

    /// Per destination node, the elementwise max over the rows of `input`
    /// whose `dst` entry names that node.
    ///
    /// The backward pass routes each output gradient to the first row that
    /// attains the max.
    pub fn max_aggregate(&mut self, input: Var, dst: &[usize], node_count: usize) -> Result<Var> {
        let x = self.value(input);
        let (m, c) = expect_2d(x, "max_aggregate")?;
        if dst.len() != m {
            return Err(Error::Shape(format!("max_aggregate: {} destinations for {m} rows", dst.len())));
        }
        let mut out = vec![f64::NEG_INFINITY; node_count * c];
        let mut argmax = vec![usize::MAX; node_count * c];
        for (e, &d) in dst.iter().enumerate() {
            if d >= node_count {
                return Err(Error::Shape(format!("max_aggregate: destination {d} out of {node_count}")));
            }
            let row = x.row(e);
            let base = d * c;
            for ch in 0..c {
                if argmax[base + ch] == usize::MAX || row[ch] > out[base + ch] {
                    out[base + ch] = row[ch];
                    argmax[base + ch] = e;
                }
            }
        }
        if c > 0 {
            if let Some(node) = (0..node_count).find(|&i| argmax[i * c] == usize::MAX) {
                return Err(Error::Aggregation(format!("node {node} has no incoming edges")));
            }
        }
        let out = Tensor::new(vec![node_count, c], out)?;
        self.push(out, Op::MaxAggregate { input, argmax }, "max_aggregate")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape("concat: no parts".into()));
        }
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect_2d(self.value(p), "concat")?;
            if *rows.get_or_insert(r) != r {
                return Err(Error::Shape(format!("concat: row counts {} and {r} differ", rows.unwrap())));
            }
            widths.push(c);
        }
        let rows = rows.unwrap();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, classes) = expect_2d(z, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::Shape(format!("cross_entropy: {} targets for {n} rows", targets.len())));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cross_entropy: empty batch".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::InvalidArgument(format!("target {bad} out of {classes} classes")));
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = z.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = sum.ln();
            loss += log_sum - (row[t] - max);
            probs.extend(row.iter().map(|&v| (v - max).exp() / sum));
        }
        let probs = Tensor::new(vec![n, classes], probs)?;
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        self.push(Tensor::scalar(loss / n as f64), op, "cross_entropy")
    }

    /// Sum of all entries.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.value(input).sum();
        self.push(Tensor::scalar(s), Op::Sum(input), "sum")
    }

    /// Propagate `seed · ∂root/∂v` to every recorded value.
    pub fn backward(&self, root: Var, seed: f64) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), seed));

        fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if !g.is_finite() {
                        return Err(Error::Numerics(format!("non-finite gradient at node {idx}")));
                    }
                    grads[idx] = Some(g);
                }
                Op::Linear { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let gv = g.view2();
                    accumulate(&mut grads, *input, Tensor::from_array2(gv.dot(&w.view2().t())));
                    accumulate(&mut grads, *weight, Tensor::from_array2(x.view2().t().dot(&gv)));
                    if let Some(b) = bias {
                        let mut gb = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, *b, Tensor::vector(gb));
                    }
                }
                Op::Relu(input) => {
                    let x = self.value(*input);
                    let data = g.data().iter().zip(x.data()).map(|(&gg, &v)| if v > 0.0 { gg } else { 0.0 }).collect();
                    accumulate(&mut grads, *input, Tensor::new(x.shape().to_vec(), data)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| -v).collect())?;
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let ga = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                    let gb = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                    accumulate(&mut grads, *a, Tensor::new(x.shape().to_vec(), ga)?);
                    accumulate(&mut grads, *b, Tensor::new(y.shape().to_vec(), gb)?);
                }
                Op::GatherRows { input, index } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    for (t, &i) in index.iter().enumerate() {
                        for (acc, v) in gi.row_mut(i).iter_mut().zip(g.row(t)) {
                            *acc += v;
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::SliceRows { input, start } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    let c = g.cols();
                    gi.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *input, gi);
                }
                Op::MaxAggregate { input, argmax } => {
                    let mut gi = Tensor::zeros(self.value(*input).shape());
                    let c = g.cols();
                    for (o, &e) in argmax.iter().enumerate() {
                        gi.data_mut()[e * c + o % c] += g.data()[o];
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let w = shape[1];
                        let mut gp = Vec::with_capacity(shape[0] * w);
                        for r in 0..g.rows() {
                            gp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        accumulate(&mut grads, p, Tensor::new(shape, gp)?);
                        offset += w;
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = targets.len() as f64;
                    let scale = g.data()[0] / n;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl.row_mut(r)[t] -= 1.0;
                    }
                    for v in gl.data_mut() {
                        *v *= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Sum(input) => {
                    let gi = Tensor::full(self.value(*input).shape(), g.data()[0]);
                    accumulate(&mut grads, *input, gi);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
