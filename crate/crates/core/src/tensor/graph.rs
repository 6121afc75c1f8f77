use super::{matmul_kernel, normal_cdf, transpose_kernel, Result, Tensor, TensorError};

/// Smallest argument `log` evaluates; anything below is clamped.
pub const LOG_CLAMP: f64 = 1e-12;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that made it.
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
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Log(a)
            | Op::Gelu(a) => vec![*a],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::Softmax { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward computation. Nodes are appended in evaluation order, so
/// every node's inputs precede it and a single reverse sweep is a valid
/// topological traversal.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "input")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor, op: Op, leaf_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = match op {
            Op::Leaf => leaf_grad,
            ref op => op.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Add(a, b), false, "add")
    }

    /// Adds a bias row (`[n]` or `[1, n]`) to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("add_row")?;
        if self.value(row).numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *v += b;
            }
        }
        let t = Tensor::new(vec![m, n], data)?;
        self.push(t, Op::AddRow(a, row), false, "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Mul(a, b), false, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Scale(a, s), false, "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], data)?;
        self.push(t, Op::MatMul(a, b), false, "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2("transpose")?;
        let data = transpose_kernel(self.value(a).data(), m, n);
        let t = Tensor::new(vec![n, m], data)?;
        self.push(t, Op::Transpose(a), false, "transpose")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec()).map_err(|_| {
            TensorError::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            }
        })?;
        self.push(t, Op::Reshape(a), false, "reshape")
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::contract("concat_rows", "no inputs"))?;
        let (_, n) = self.value(first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_rows")?;
            if c != n {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, n], data)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), false, "concat_rows")
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("slice_rows")?;
        if start >= end || end > m {
            return Err(TensorError::contract(
                "slice_rows",
                format!("range {start}..{end} invalid for {m} rows"),
            ));
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let t = Tensor::new(vec![end - start, n], data)?;
        self.push(t, Op::SliceRows(a, start), false, "slice_rows")
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::contract("concat_cols", "no inputs"))?;
        let (m, _) = self.value(first).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != m {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], data)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), false, "concat_cols")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2("slice_cols")?;
        if start >= end || end > n {
            return Err(TensorError::contract(
                "slice_cols",
                format!("range {start}..{end} invalid for {n} columns"),
            ));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        let t = Tensor::new(vec![m, end - start], data)?;
        self.push(t, Op::SliceCols(a, start), false, "slice_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), false, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), false, "mean")
    }

    /// Natural log with the argument clamped below at [`LOG_CLAMP`].
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.max(LOG_CLAMP).ln())
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Log(a), false, "log")
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x * normal_cdf(x))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push(t, Op::Gelu(a), false, "gelu")
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::contract(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let x = self.value(a).data();
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * len * inner + k * inner + i;
                let max = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[at(k)] - max).exp();
                    y[at(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    y[at(k)] /= total;
                }
            }
        }
        let t = Tensor::new(shape, y)?;
        self.push(
            t,
            Op::Softmax {
                x: a,
                outer,
                len,
                inner,
            },
            false,
            "softmax",
        )
    }

    /// Normalizes over the last dimension with biased variance, `eps` inside
    /// the square root, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::contract("layer_norm", "eps must be positive"));
        }
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("rank >= 1");
        for p in [gamma, beta] {
            if self.value(p).numel() != d {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = src.len() / d;
        let mut xhat = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            false,
            "layer_norm",
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients of every node that
    /// depends on a [`Graph::param`] leaf become available through
    /// [`Graph::grad`]; previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        let mut acc = |v: Var, delta: &dyn Fn(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            delta(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &|g| add_into(g, gy));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, &|g| add_into(g, gy));
                let n = self.value(*row).numel();
                acc(*row, &|g| {
                    for chunk in gy.chunks(n) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|g| {
                    for ((gi, y), o) in g.iter_mut().zip(gy).zip(bv) {
                        *gi += y * o;
                    }
                });
                acc(*b, &|g| {
                    for ((gi, y), o) in g.iter_mut().zip(gy).zip(av) {
                        *gi += y * o;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &|g| {
                for (gi, y) in g.iter_mut().zip(gy) {
                    *gi += s * y;
                }
            }),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                acc(*a, &|g| {
                    let bt = transpose_kernel(self.value(*b).data(), k, n);
                    add_into(g, &matmul_kernel(gy, &bt, m, n, k));
                });
                acc(*b, &|g| {
                    let at = transpose_kernel(self.value(*a).data(), m, k);
                    add_into(g, &matmul_kernel(&at, gy, k, m, n));
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (self.shape(*a)[0], self.shape(*a)[1]);
                acc(*a, &|g| add_into(g, &transpose_kernel(gy, n, m)));
            }
            Op::Reshape(a) => acc(*a, &|g| add_into(g, gy)),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, &|g| add_into(g, &gy[offset..offset + len]));
                    offset += len;
                }
            }
            Op::SliceRows(a, start) => {
                let n = self.shape(*a)[1];
                acc(*a, &|g| add_into(&mut g[start * n..start * n + gy.len()], gy));
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = (self.shape(p)[0], self.shape(p)[1]);
                    acc(p, &|g| {
                        for i in 0..m {
                            let src = &gy[i * total + offset..i * total + offset + w];
                            add_into(&mut g[i * w..(i + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.shape(*a)[1];
                let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
                acc(*a, &|g| {
                    for i in 0..m {
                        let dst = &mut g[i * n + start..i * n + start + w];
                        add_into(dst, &gy[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|g| g.iter_mut().for_each(|gi| *gi += gy[0])),
            Op::Mean(a) => {
                let scale = gy[0] / self.value(*a).numel() as f64;
                acc(*a, &|g| g.iter_mut().for_each(|gi| *gi += scale));
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((gi, y), &xi) in g.iter_mut().zip(gy).zip(x) {
                        if xi > LOG_CLAMP {
                            *gi += y / xi;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((gi, y), &xi) in g.iter_mut().zip(gy).zip(x) {
                        let pdf = (-0.5 * xi * xi).exp() / (2.0 * std::f64::consts::PI).sqrt();
                        *gi += y * (normal_cdf(xi) + xi * pdf);
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = node.value.data();
                acc(*x, &|g| {
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |k: usize| o * len * inner + k * inner + i;
                            let dot: f64 = (0..*len).map(|k| gy[at(k)] * y[at(k)]).sum();
                            for k in 0..*len {
                                g[at(k)] += y[at(k)] * (gy[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                acc(*x, &|g| {
                    for (r, &is) in inv_std.iter().enumerate() {
                        let span = r * d..(r + 1) * d;
                        let dy = &gy[span.clone()];
                        let h = &xhat[span.clone()];
                        let dh: Vec<f64> = dy.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let dst = &mut g[span];
                        for j in 0..d {
                            dst[j] += is / d as f64 * (d as f64 * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                });
                acc(*gamma, &|g| {
                    for (dy, h) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            g[j] += dy[j] * h[j];
                        }
                    }
                });
                acc(*beta, &|g| {
                    for dy in gy.chunks(d) {
                        add_into(g, dy);
                    }
                });
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
