//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! A [`Tape`] records every operation of one forward pass. Values live in an
//! arena and are addressed by [`Var`] handles. [`Tape::backward`] walks the
//! list in reverse once, leaving `∂output/∂v` on every variable that was
//! marked `requires_grad`, whether it is a weight or an input feature.

use crate::tensor::{Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Tape`].
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
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Conv1d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: usize,
    },
    GlobalAvgPool(Var),
    DropoutMask(Var, Vec<f64>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    BceMean(Var, Vec<f64>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![*input, *kernel];
                v.extend(bias.iter().copied());
                v
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::GlobalAvgPool(a)
            | Op::DropoutMask(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::BceMean(a, _) => vec![*a],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Probability clamp used by the binary cross-entropy op.
pub const BCE_CLAMP: f64 = 1e-12;

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
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

    /// Records an input value. Gradients are only produced for leaves
    /// with `requires_grad` set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient left by the last backward pass, if `v` was tracked.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(|n| n.grad.as_ref())
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(TensorError::NumericOverflow { op: name });
        }
        let inputs = op.inputs();
        let tracked = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if tracked { op } else { Op::Constant };
        Ok(self.push(value, op, tracked))
    }

    fn check_alive(&self) -> Result<()> {
        if self.consumed {
            Err(TensorError::TapeConsumed)
        } else {
            Ok(())
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.check_alive()?;
        self.same_shape(name, a, b)?;
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.record(name, value, op)
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check_alive()?;
        let ta = &self.node(a)?.value;
        let value = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        self.record(name, value, op)
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_alive()?;
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_kernel(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        self.record("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[n]` row vector to every row of a `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_alive()?;
        let (ta, tr) = (&self.node(a)?.value, &self.node(row)?.value);
        if ta.ndim() != 2 || tr.ndim() != 1 || ta.shape()[1] != tr.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: ta.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let n = tr.numel();
        let r = tr.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + r[i % n])
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.record("add_row", value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, factor), |x| x * factor)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, Op::Sigmoid(a), sigmoid)
    }

    /// Multiplies `a` elementwise by a fixed mask. Inverted-dropout scaling is
    /// expected to be folded into the mask already.
    pub fn dropout_mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        self.check_alive()?;
        let ta = &self.node(a)?.value;
        if mask.len() != ta.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "dropout_mask",
                left: ta.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.record("dropout_mask", value, Op::DropoutMask(a, mask))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.check_alive()?;
        let value = self.node(a)?.value.clone().reshape(shape)?;
        self.record("reshape", value, Op::Reshape(a))
    }

    /// One-dimensional convolution (cross-correlation), stride 1, symmetric
    /// zero padding.
    ///
    /// `input` is `[channels, length]` or `[batch, channels, length]`;
    /// `kernel` is `[out_channels, in_channels, width]`; `bias` is `[out_channels]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, bias: Option<Var>, padding: usize) -> Result<Var> {
        self.check_alive()?;
        let (ti, tk) = (&self.node(input)?.value, &self.node(kernel)?.value);
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv1d",
            left: ti.shape().to_vec(),
            right: tk.shape().to_vec(),
        };
        let geom = ConvGeometry::new(ti.shape(), tk.shape(), padding).ok_or_else(mismatch)?;
        if let Some(b) = bias {
            let tb = &self.node(b)?.value;
            if tb.shape() != [geom.c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv1d bias",
                    left: tk.shape().to_vec(),
                    right: tb.shape().to_vec(),
                });
            }
        }
        let mut out = vec![0.0; geom.batch * geom.c_out * geom.l_out];
        if let Some(b) = bias {
            let bias_data = self.nodes[b.0].value.data();
            for chunk in out.chunks_mut(geom.l_out).enumerate() {
                let o = chunk.0 % geom.c_out;
                chunk.1.fill(bias_data[o]);
            }
        }
        geom.forward(ti.data(), tk.data(), &mut out);
        let mut shape = vec![geom.c_out, geom.l_out];
        if ti.ndim() == 3 {
            shape.insert(0, geom.batch);
        }
        let value = Tensor::new(shape, out)?;
        self.record(
            "conv1d",
            value,
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            },
        )
    }

    /// Mean over the trailing (length) axis: `[.., c, l] → [.., c]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        self.check_alive()?;
        let ta = &self.node(a)?.value;
        if ta.ndim() < 2 || ta.shape()[ta.ndim() - 1] == 0 {
            return Err(TensorError::Invalid {
                op: "global_avg_pool",
                msg: format!("needs a non-empty trailing length axis, got {:?}", ta.shape()),
            });
        }
        let l = ta.shape()[ta.ndim() - 1];
        let data = ta
            .data()
            .chunks(l)
            .map(|c| c.iter().sum::<f64>() / l as f64)
            .collect();
        let value = Tensor::new(ta.shape()[..ta.ndim() - 1].to_vec(), data)?;
        self.record("global_avg_pool", value, Op::GlobalAvgPool(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_alive()?;
        let s = self.node(a)?.value.data().iter().sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_alive()?;
        let t = &self.node(a)?.value;
        if t.numel() == 0 {
            return Err(TensorError::Invalid {
                op: "mean",
                msg: "empty tensor".into(),
            });
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.record("mean", Tensor::scalar(s), Op::Mean(a))
    }

    /// Mean binary cross-entropy of probabilities `pred` against fixed 0/1
    /// `targets`. Probabilities are clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce_mean(&mut self, pred: Var, targets: Vec<f64>) -> Result<Var> {
        self.check_alive()?;
        let t = &self.node(pred)?.value;
        if t.numel() != targets.len() || targets.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_mean",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let loss = t
            .data()
            .iter()
            .zip(&targets)
            .map(|(&p, &y)| bce_term(p, y))
            .sum::<f64>()
            / targets.len() as f64;
        self.record("bce_mean", Tensor::scalar(loss), Op::BceMean(pred, targets))
    }

    /// Runs the reverse pass from a scalar `output`.
    ///
    /// Afterwards every tracked variable carries `∂output/∂v` (zero when it
    /// does not contribute). The tape cannot be reused.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        self.check_alive()?;
        let out = self.node(output)?;
        if !out.value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: out.value.shape().to_vec(),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let shape = node.value.shape().to_vec();
                node.grad = Some(match g {
                    Some(g) => Tensor::new(shape, g)?,
                    None => Tensor::zeros(&shape),
                });
            }
        }
        Ok(())
    }

    /// Gradient of a scalar output with respect to a tracked input `x`.
    pub fn input_gradient(&mut self, output: Var, x: Var) -> Result<Tensor> {
        let node = self.node(x)?;
        if !node.requires_grad {
            return Err(TensorError::NotTracked(x.0));
        }
        self.backward(output)?;
        Ok(self.nodes[x.0].grad.clone().expect("tracked variable has a gradient"))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let tracked = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if tracked(*a) {
                    acc(*a, &|ga| {
                        let bd = tb.data();
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for c in 0..k {
                                let brow = &bd[c * n..(c + 1) * n];
                                ga[r * k + c] += dot(grow, brow);
                            }
                        }
                    });
                }
                if tracked(*b) {
                    acc(*b, &|gb| {
                        let ad = ta.data();
                        for r in 0..m {
                            let grow = &g[r * n..(r + 1) * n];
                            for c in 0..k {
                                let s = ad[r * k + c];
                                if s == 0.0 {
                                    continue;
                                }
                                for (dst, &gv) in gb[c * n..(c + 1) * n].iter_mut().zip(grow) {
                                    *dst += s * gv;
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a).data(), val(*b).data());
                acc(*a, &|ga| {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(db) {
                        *d += s * y;
                    }
                });
                acc(*b, &|gb| {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(da) {
                        *d += s * x;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*row, &|gr| {
                    let n = gr.len();
                    for (i, s) in g.iter().enumerate() {
                        gr[i % n] += s;
                    }
                });
            }
            Op::Scale(a, f) => acc(*a, &|ga| ga.iter_mut().zip(g).for_each(|(d, s)| *d += s * f)),
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &|ga| {
                    for ((d, s), &xv) in ga.iter_mut().zip(g).zip(x) {
                        if xv > 0.0 {
                            *d += s;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &|ga| {
                    for ((d, s), &yv) in ga.iter_mut().zip(g).zip(y) {
                        *d += s * yv * (1.0 - yv);
                    }
                });
            }
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let (ti, tk) = (val(*input), val(*kernel));
                let geom = ConvGeometry::new(ti.shape(), tk.shape(), *padding)
                    .expect("geometry validated in forward");
                if tracked(*input) {
                    acc(*input, &|gi| geom.backward_input(g, tk.data(), gi));
                }
                if tracked(*kernel) {
                    acc(*kernel, &|gk| geom.backward_kernel(g, ti.data(), gk));
                }
                if let Some(b) = bias {
                    acc(*b, &|gb| {
                        for (idx, chunk) in g.chunks(geom.l_out).enumerate() {
                            gb[idx % geom.c_out] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::GlobalAvgPool(a) => {
                let ta = val(*a);
                let l = ta.shape()[ta.ndim() - 1];
                acc(*a, &|ga| {
                    for (chunk, s) in ga.chunks_mut(l).zip(g) {
                        let share = s / l as f64;
                        chunk.iter_mut().for_each(|d| *d += share);
                    }
                });
            }
            Op::DropoutMask(a, mask) => acc(*a, &|ga| {
                for ((d, s), m) in ga.iter_mut().zip(g).zip(mask) {
                    *d += s * m;
                }
            }),
            Op::Reshape(a) => acc(*a, &|ga| add_into(ga, g)),
            Op::Sum(a) => acc(*a, &|ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).numel() as f64;
                acc(*a, &|ga| ga.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::BceMean(p, targets) => {
                let pd = val(*p).data();
                let n = targets.len() as f64;
                acc(*p, &|gp| {
                    for ((d, &pv), &y) in gp.iter_mut().zip(pd).zip(targets) {
                        let pc = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *d += g[0] * ((1.0 - y) / (1.0 - pc) - y / pc) / n;
                    }
                });
            }
        }
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

fn bce_term(p: f64, y: f64) -> f64 {
    let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let s = a[r * k + c];
            if s == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += s * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    width: usize,
    len: usize,
    l_out: usize,
    pad: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], pad: usize) -> Option<Self> {
        let (batch, c_in, len) = match *input {
            [c, l] => (1, c, l),
            [b, c, l] => (b, c, l),
            _ => return None,
        };
        let [c_out, kc, width] = *kernel else { return None };
        if kc != c_in || width == 0 || len + 2 * pad < width {
            return None;
        }
        Some(Self {
            batch,
            c_in,
            c_out,
            width,
            len,
            l_out: len + 2 * pad - width + 1,
            pad,
        })
    }

    /// Output positions `t` for which input index `t + j - pad` is in range.
    fn valid(&self, j: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(j);
        let hi = (self.len + self.pad).saturating_sub(j).min(self.l_out);
        (lo, hi.max(lo))
    }

    fn forward(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.c_out {
                let orow = &mut out[(b * self.c_out + o) * self.l_out..][..self.l_out];
                for c in 0..self.c_in {
                    let irow = &input[(b * self.c_in + c) * self.len..][..self.len];
                    for j in 0..self.width {
                        let w = kernel[(o * self.c_in + c) * self.width + j];
                        let (lo, hi) = self.valid(j);
                        for t in lo..hi {
                            orow[t] += w * irow[t + j - self.pad];
                        }
                    }
                }
            }
        }
    }

    fn backward_input(&self, g: &[f64], kernel: &[f64], gi: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.c_out {
                let grow = &g[(b * self.c_out + o) * self.l_out..][..self.l_out];
                for c in 0..self.c_in {
                    let irow = &mut gi[(b * self.c_in + c) * self.len..][..self.len];
                    for j in 0..self.width {
                        let w = kernel[(o * self.c_in + c) * self.width + j];
                        let (lo, hi) = self.valid(j);
                        for t in lo..hi {
                            irow[t + j - self.pad] += w * grow[t];
                        }
                    }
                }
            }
        }
    }

    fn backward_kernel(&self, g: &[f64], input: &[f64], gk: &mut [f64]) {
        for b in 0..self.batch {
            for o in 0..self.c_out {
                let grow = &g[(b * self.c_out + o) * self.l_out..][..self.l_out];
                for c in 0..self.c_in {
                    let irow = &input[(b * self.c_in + c) * self.len..][..self.len];
                    for j in 0..self.width {
                        let (lo, hi) = self.valid(j);
                        let mut s = 0.0;
                        for t in lo..hi {
                            s += grow[t] * irow[t + j - self.pad];
                        }
                        gk[(o * self.c_in + c) * self.width + j] += s;
                    }
                }
            }
        }
    }
}
