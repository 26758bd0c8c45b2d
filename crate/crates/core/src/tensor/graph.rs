use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::Tensor;

/// Variance guard used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Silu(Var),
    Softplus(Var),
    Relu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    RepeatRows(Var),
    GatherRows(Var, Vec<usize>),
    GroupMax(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Mse(Var, Var),
    L1(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Operation tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted.
#[derive(Debug)]
pub struct Graph<'p, T: Scalar> {
    nodes: Vec<Node<T>>,
    store: Option<&'p ParamStore<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of one backward pass, kept for tracked leaves only.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter that took part in the graph, in
    /// parameter-id order.
    pub fn into_param_grads(mut self) -> ParamGrads<T> {
        let mut out: Vec<(ParamId, Vec<T>)> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.leaves[v.0].take().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        ParamGrads(out)
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph without parameters.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            store: None,
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore<T>) -> Self {
        Self {
            nodes: Vec::new(),
            store: Some(store),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf holding `t`; gradients are kept when `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad();
        self.push(t, Op::Leaf, tracked)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Parameter leaf; repeated requests for one id share a node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(id.0).copied().flatten() {
            return v;
        }
        let store = self.store.expect("Graph::param needs a graph built with_params");
        let value = store.get(id).value.clone();
        let v = self.push(value, Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(x).map(f);
        let tracked = self.tracked(x);
        self.push(value, op, tracked)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (dims(self.value(a)), dims(self.value(b)));
        if sa != sb {
            bail!(Shape, "{what}: {sa:?} vs {sb:?}");
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims(self.value(a));
        let (k2, n) = dims(self.value(b));
        if k != k2 {
            bail!(Shape, "matmul: [{m}x{k}] · [{k2}x{n}]");
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), tracked))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let (r, c) = dims(self.value(a));
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(Tensor::matrix(r, c, data).expect("zip shape"), op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds the `1 × n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (m, n) = dims(self.value(a));
        let (rr, rn) = dims(self.value(r));
        if rr != 1 || rn != n {
            bail!(Shape, "add_row: [{m}x{n}] + [{rr}x{rn}]");
        }
        let row = self.value(r).data().to_vec();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(&row).map(|(&x, &y)| x + y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(r);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, r), tracked))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Silu(a), |x| x * sigmoid(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |x| {
            x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
        })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(T::zero()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    /// Softmax along `axis` (0: down columns, 1: along rows), max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        match axis {
            1 => Ok(self.softmax_rows(x)),
            0 => {
                let t = self.transpose(x);
                let s = self.softmax_rows(t);
                Ok(self.transpose(s))
            }
            _ => bail!(InvalidArgument, "softmax axis {axis} on a 2-D tensor"),
        }
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = dims(self.value(x));
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let tracked = self.tracked(x);
        self.push(Tensor::matrix(r, c, out).expect("softmax shape"), Op::SoftmaxRows(x), tracked)
    }

    /// Per-row standardisation followed by `gain ⊙ x̂ + bias` (both `1 × n`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if c < 2 {
            bail!(Shape, "layer_norm needs at least 2 features, got {c}");
        }
        for (p, name) in [(gain, "gain"), (bias, "bias")] {
            if dims(self.value(p)) != (1, c) {
                bail!(Shape, "layer_norm {name}: {:?}, expected [1x{c}]", dims(self.value(p)));
            }
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let n = T::from_usize_lossy(c);
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in xs.chunks(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * rs;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let tracked = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            tracked,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (r, c) = dims(self.value(x));
        let out = transpose_raw(self.value(x).data(), r, c);
        let tracked = self.tracked(x);
        self.push(Tensor::matrix(c, r, out).expect("transpose shape"), Op::Transpose(x), tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat_rows: nothing to concatenate");
        };
        let c = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = dims(self.value(p));
            if pc != c {
                bail!(Shape, "concat_rows: {pc} columns vs {c}");
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::matrix(rows, c, data)?, Op::ConcatRows(parts.to_vec()), tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Shape, "concat_cols: nothing to concatenate");
        };
        let r = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = dims(self.value(p));
            if pr != r {
                bail!(Shape, "concat_cols: {pr} rows vs {r}");
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::matrix(r, total, data)?, Op::ConcatCols(parts.to_vec()), tracked))
    }

    /// Rows `start .. start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if len == 0 || start + len > r {
            bail!(Index, "slice_rows {start}..{} of {r} rows", start + len);
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(len, c, data)?, Op::SliceRows(x, start), tracked))
    }

    /// Columns `start .. start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if len == 0 || start + len > c {
            bail!(Index, "slice_cols {start}..{} of {c} columns", start + len);
        }
        let src = self.value(x).data();
        let data = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + len].iter().copied())
            .collect();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(r, len, data)?, Op::SliceCols(x, start), tracked))
    }

    /// Stacks `n` copies of the `1 × c` row `x`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if r != 1 || n == 0 {
            bail!(Shape, "repeat_rows needs a single row and n ≥ 1, got [{r}x{c}], n={n}");
        }
        let row = self.value(x).data();
        let data = (0..n).flat_map(|_| row.iter().copied()).collect();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::matrix(n, c, data)?, Op::RepeatRows(x), tracked))
    }

    /// Row lookup `table[ids[i]]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(table));
        if ids.is_empty() {
            bail!(Shape, "gather_rows: no ids");
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            bail!(Index, "gather_rows: id {bad} of {r} rows");
        }
        let src = self.value(table).data();
        let data = ids
            .iter()
            .flat_map(|&i| src[i * c..(i + 1) * c].iter().copied())
            .collect();
        let tracked = self.tracked(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), c, data)?,
            Op::GatherRows(table, ids.to_vec()),
            tracked,
        ))
    }

    /// Splits the rows into consecutive groups of the given sizes and takes
    /// the column-wise maximum of each group (first maximum wins ties).
    pub fn group_max(&mut self, x: Var, group_sizes: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        if group_sizes.is_empty() || group_sizes.contains(&0) {
            bail!(Shape, "group_max: groups must be non-empty");
        }
        if group_sizes.iter().sum::<usize>() != r {
            bail!(Shape, "group_max: groups cover {} of {r} rows", group_sizes.iter().sum::<usize>());
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(group_sizes.len() * c);
        let mut argmax = Vec::with_capacity(group_sizes.len() * c);
        let mut start = 0;
        for &g in group_sizes {
            for j in 0..c {
                let mut best = start;
                for i in start + 1..start + g {
                    if src[i * c + j] > src[best * c + j] {
                        best = i;
                    }
                }
                out.push(src[best * c + j]);
                argmax.push(best);
            }
            start += g;
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::matrix(group_sizes.len(), c, out)?,
            Op::GroupMax(x, argmax),
            tracked,
        ))
    }

    /// Column means as a `1 × c` row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = dims(self.value(x));
        let mut out = vec![T::zero(); c];
        for row in self.value(x).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = T::from_usize_lossy(r);
        out.iter_mut().for_each(|o| *o /= n);
        let tracked = self.tracked(x);
        self.push(Tensor::matrix(1, c, out).expect("mean_rows shape"), Op::MeanRows(x), tracked)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), tracked)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_usize_lossy(t.numel());
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), tracked)
    }

    /// Mean over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(logits));
        if targets.len() != r {
            bail!(Shape, "cross_entropy: {} targets for {r} rows", targets.len());
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            bail!(Index, "cross_entropy: target {bad} with {c} classes");
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &t) in probs.chunks_mut(c).zip(targets) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += lse - row[t];
            softmax_in_place(row);
        }
        loss /= T::from_usize_lossy(r);
        let tracked = self.tracked(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Cross-entropy of a single row of logits against one class.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        if self.value(logits).rows() != 1 {
            bail!(Shape, "cross_entropy expects one row of logits");
        }
        self.cross_entropy_rows(logits, &[target])
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse_loss")?;
        let (a, b) = (self.value(pred).data(), self.value(target).data());
        let s = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>()
            / T::from_usize_lossy(a.len());
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), tracked))
    }

    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "l1_loss")?;
        let (a, b) = (self.value(pred).data(), self.value(target).data());
        let s = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<T>()
            / T::from_usize_lossy(a.len());
        let tracked = self.tracked(pred) || self.tracked(target);
        Ok(self.push(Tensor::scalar(s), Op::L1(pred, target), tracked))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param => leaves[i] = Some(g),
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
        }
        let params = self
            .param_vars
            .iter()
            .enumerate()
            .filter_map(|(id, v)| v.map(|v| (ParamId(id), v)))
            .collect();
        Ok(Gradients { leaves, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.value(v);
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(val(*a));
                let n = val(*b).cols();
                if self.tracked(*a) {
                    // g · bᵀ
                    let bd = val(*b).data();
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = dot(grow, brow);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    // aᵀ · g
                    let ad = val(*a).data();
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (o, &x) in gbrow.iter_mut().zip(grow) {
                                *o += av * x;
                            }
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.iter().zip(bd).map(|(&x, &y)| x * y).collect());
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.iter().zip(ad).map(|(&x, &y)| x * y).collect());
                }
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.to_vec());
                if self.tracked(*r) {
                    self.accumulate(grads, *r, column_sums(g, out.cols()));
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, g.iter().map(|&x| x * *c).collect());
            }
            Op::Silu(a) => {
                let gx = val(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| {
                        let s = sigmoid(x);
                        gy * s * (T::one() + x * (T::one() - s))
                    })
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Softplus(a) => {
                let gx = val(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| gy * sigmoid(x))
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Relu(a) => {
                let gx = val(*a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > T::zero() { gy } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::Tanh(a) => {
                let gx = out
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gy)| gy * (T::one() - y * y))
                    .collect();
                self.accumulate(grads, *a, gx);
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let mut gx = Vec::with_capacity(g.len());
                for (yrow, grow) in out.data().chunks(c).zip(g.chunks(c)) {
                    let s = dot(yrow, grow);
                    gx.extend(yrow.iter().zip(grow).map(|(&y, &gy)| y * (gy - s)));
                }
                self.accumulate(grads, *a, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = out.cols();
                let gd = val(*gain).data();
                let n = T::from_usize_lossy(c);
                if self.tracked(*x) {
                    let mut gx = Vec::with_capacity(g.len());
                    for ((grow, hrow), &rs) in g.chunks(c).zip(xhat.chunks(c)).zip(rstd) {
                        let dh: Vec<T> = grow.iter().zip(gd).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / n;
                        let mean_dhh = dot(&dh, hrow) / n;
                        gx.extend(
                            dh.iter()
                                .zip(hrow)
                                .map(|(&d, &h)| rs * (d - mean_dh - h * mean_dhh)),
                        );
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.tracked(*gain) {
                    let prod: Vec<T> = g.iter().zip(xhat).map(|(&a, &b)| a * b).collect();
                    self.accumulate(grads, *gain, column_sums(&prod, c));
                }
                if self.tracked(*bias) {
                    self.accumulate(grads, *bias, column_sums(g, c));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims(out);
                self.accumulate(grads, *a, transpose_raw(g, r, c));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).numel();
                    self.accumulate(grads, p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = dims(out);
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.tracked(p) {
                        let gp = (0..r)
                            .flat_map(|i| g[i * total + start..i * total + start + w].iter().copied())
                            .collect();
                        self.accumulate(grads, p, gp);
                    }
                    start += w;
                }
            }
            Op::SliceRows(x, start) => {
                let c = out.cols();
                let mut gx = vec![T::zero(); val(*x).numel()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                self.accumulate(grads, *x, gx);
            }
            Op::SliceCols(x, start) => {
                let (r, len) = dims(out);
                let c = val(*x).cols();
                let mut gx = vec![T::zero(); val(*x).numel()];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::RepeatRows(x) => {
                self.accumulate(grads, *x, column_sums(g, out.cols()));
            }
            Op::GatherRows(table, ids) => {
                let c = out.cols();
                let mut gt = vec![T::zero(); val(*table).numel()];
                for (k, &i) in ids.iter().enumerate() {
                    for j in 0..c {
                        gt[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::GroupMax(x, argmax) => {
                let c = out.cols();
                let mut gx = vec![T::zero(); val(*x).numel()];
                for (k, &row) in argmax.iter().enumerate() {
                    gx[row * c + k % c] += g[k];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MeanRows(x) => {
                let (r, c) = dims(val(*x));
                let n = T::from_usize_lossy(r);
                let gx = (0..r).flat_map(|_| g.iter().map(move |&v| v / n)).collect();
                debug_assert_eq!(g.len(), c);
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                self.accumulate(grads, *x, vec![g[0]; val(*x).numel()]);
            }
            Op::MeanAll(x) => {
                let n = val(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / T::from_usize_lossy(n); n]);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = val(*logits).cols();
                let scale = g[0] / T::from_usize_lossy(targets.len());
                let mut gx: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    gx[i * c + t] -= scale;
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::Mse(a, b) => {
                let n = T::from_usize_lossy(val(*a).numel());
                let k = T::lit(2.0) * g[0] / n;
                let ga: Vec<T> = val(*a)
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(&x, &y)| k * (x - y))
                    .collect();
                if self.tracked(*b) {
                    self.accumulate(grads, *b, ga.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, ga);
            }
            Op::L1(a, b) => {
                let n = T::from_usize_lossy(val(*a).numel());
                let k = g[0] / n;
                let ga: Vec<T> = val(*a)
                    .data()
                    .iter()
                    .zip(val(*b).data())
                    .map(|(&x, &y)| {
                        if x > y {
                            k
                        } else if x < y {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.tracked(*b) {
                    self.accumulate(grads, *b, ga.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn column_sums<T: Scalar>(g: &[T], c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for row in g.chunks(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, d: &[f64]) -> Tensor<f64> {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(Tensor::identity(3));
        let m = g.constant(t(3, 2, &[1., 2., 3., 4., 5., 6.]));
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p).data(), g.value(m).data());
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.constant(Tensor::scalar(3.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).item().unwrap(), 6.0);
        assert!(matches!(g.matmul(m, m), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(1, 2, &[0.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let big = g.constant(t(1, 2, &[1000.0, 0.0]));
        let s = g.softmax(big, 1).unwrap();
        assert_eq!(g.value(s).data()[0], 1.0);
        assert!(g.value(s).data()[1] < 1e-300);
        let a = g.constant(t(2, 3, &[0.3, -1.2, 2.0, 5.0, 5.0, -3.0]));
        let b = g.constant(t(2, 3, &[7.3, 5.8, 9.0, 12.0, 12.0, 4.0]));
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        assert!(g.value(sa).max_abs_diff(g.value(sb)) <= 1e-12);
        let s0 = g.softmax(a, 0).unwrap();
        let v = g.value(s0);
        for j in 0..3 {
            assert!((v.get(0, j) + v.get(1, j) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let mut g = Graph::<f64>::new();
        let gain = g.constant(Tensor::full(vec![1, 2], 1.0));
        let bias = g.constant(Tensor::zeros(vec![1, 2]));
        let x = g.constant(t(1, 2, &[1.0, -1.0]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        assert!((g.value(y).data()[0] - 1.0).abs() < 1e-7);
        assert!((g.value(y).data()[1] + 1.0).abs() < 1e-7);

        let gain4 = g.constant(Tensor::full(vec![1, 4], 1.0));
        let bias4 = g.constant(Tensor::zeros(vec![1, 4]));
        let c = g.constant(t(1, 4, &[3.0; 4]));
        let y = g.layer_norm(c, gain4, bias4).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let one = g.constant(t(3, 1, &[1.0, 2.0, 3.0]));
        let g1 = g.constant(Tensor::full(vec![1, 1], 1.0));
        assert!(g.layer_norm(one, g1, g1).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let mut g = Graph::<f64>::new();
        let u = g.constant(t(1, 5, &[0.7; 5]));
        let l = g.cross_entropy(u, 3).unwrap();
        assert!((g.value(l).item().unwrap() - 5f64.ln()).abs() < 1e-12);
        let z = g.constant(t(1, 2, &[0.0, 0.0]));
        let l = g.cross_entropy(z, 0).unwrap();
        assert!((g.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let huge = g.constant(t(1, 3, &[500.0, 0.0, 0.0]));
        let l = g.cross_entropy(huge, 0).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-200);
        assert!(matches!(g.cross_entropy(z, 2), Err(Error::Index(_))));
    }

    #[test]
    fn regression_losses() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(1, 1, &[0.0]));
        let b = g.constant(t(1, 1, &[2.0]));
        let m = g.mse_loss(a, b).unwrap();
        let l = g.l1_loss(a, b).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 4.0);
        assert_eq!(g.value(l).item().unwrap(), 2.0);
        let z = g.mse_loss(b, b).unwrap();
        assert_eq!(g.value(z).item().unwrap(), 0.0);
        let wide = g.constant(t(1, 2, &[0.0, 0.0]));
        assert!(matches!(g.mse_loss(a, wide), Err(Error::Shape(_))));
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(3.0).with_requires_grad(true));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("w", Tensor::full(vec![2, 2], 0.5)).unwrap();
        let mut g = Graph::with_params(&store);
        let w = g.param(p);
        let zero = g.scale(w, 0.0);
        let loss = g.sum_all(zero);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(1, 2, &[1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn group_max_and_gather() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(4, 2, &[1., 5., 3., 2., 0., 0., -1., 7.]).with_requires_grad(true));
        let m = g.group_max(x, &[2, 2]).unwrap();
        assert_eq!(g.value(m).data(), &[3., 5., 0., 7.]);
        let s = g.sum_all(m);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[0., 1., 1., 0., 1., 0., 0., 1.]);
        assert!(g.group_max(x, &[3]).is_err());

        let table = g.input(t(3, 2, &[1., 2., 3., 4., 5., 6.]).with_requires_grad(true));
        let rows = g.gather_rows(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(rows).data(), &[5., 6., 1., 2., 5., 6.]);
        let s = g.sum_all(rows);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(table).unwrap(), &[1., 1., 0., 0., 2., 2.]);
        assert!(matches!(g.gather_rows(table, &[3]), Err(Error::Index(_))));
    }
}
