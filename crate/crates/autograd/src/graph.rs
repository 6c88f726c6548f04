use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{self, Geometry};
use crate::gemm::gemm;
use crate::params::{ParamId, ParamSet};
use crate::{Error, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ParamKey {
    set: u64,
    id: ParamId,
}

#[derive(Debug)]
enum Op {
    Leaf(Option<ParamKey>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softplus(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanAxis { x: Var, outer: usize, axis: usize, inner: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Concat { parts: Vec<Var>, widths: Vec<usize>, batch: usize },
    Reshape(Var),
    AvgPool { x: Var, width: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, geo: Geometry },
    ConvT { x: Var, w: Var, b: Option<Var>, geo: Geometry },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Pending running-statistics update produced by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub set: u64,
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Reverse-mode tape. Build a fresh graph for every forward pass.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    training: bool,
    rng: ChaCha8Rng,
    frozen: Vec<u64>,
    bn_updates: Vec<BnUpdate>,
}

pub const BN_EPS: f64 = 1e-5;

impl Graph {
    /// A graph in training mode (batch statistics, active dropout).
    pub fn train(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    /// A graph in evaluation mode (running statistics, no dropout).
    pub fn eval() -> Self {
        Self::with_mode(false, 0)
    }

    pub fn with_mode(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            frozen: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Parameters of `set` become constants: no gradient flows into them.
    pub fn freeze(&mut self, set: &ParamSet) {
        if !self.frozen.contains(&set.uid()) {
            self.frozen.push(set.uid());
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None), false)
    }

    /// A leaf that takes gradients but is not tied to any parameter set.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf(None), true)
    }

    /// A parameter leaf. Gradients are routed back to `set` unless it is frozen.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let trainable = !self.frozen.contains(&set.uid())
            && set.kind(id) == crate::params::EntryKind::Param;
        let key = ParamKey { set: set.uid(), id };
        self.push(set.get(id).clone(), Op::Leaf(Some(key)), trainable)
    }

    /// Draw a uniform number from the graph's own stream (used by dropout).
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        if c.shape() != self.shape(a) {
            return Err(Error::Shape(format!("mul_const: {:?} vs {:?}", self.shape(a), c.shape())));
        }
        let data = self.value(a).data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(c.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MulConst(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(t, Op::Square(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(t, Op::LeakyRelu(a, slope), ng)
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let t = self.value(a).map(softplus);
        let ng = self.ng(a);
        self.push(t, Op::Softplus(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(t, Op::SumAll(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.len() as f64);
        let ng = self.ng(a);
        self.push(t, Op::MeanAll(a), ng)
    }

    /// Mean over dimension `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("mean_axis {axis} on {:?}", shape)));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let s = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                let d = &mut out[o * inner..(o + 1) * inner];
                for (dv, sv) in d.iter_mut().zip(s) {
                    *dv += sv;
                }
            }
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        let t = Tensor::new(new_shape, out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::MeanAxis { x: a, outer, axis: n, inner }, ng))
    }

    /// Gather slabs along the leading axis (also used for embedding lookups).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let v = self.value(a);
        let n = v.dim(0);
        let stride = v.len() / n.max(1);
        let mut data = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= n {
                return Err(Error::Index(format!("row {r} out of range for {n} rows")));
            }
            data.extend_from_slice(v.row(r));
        }
        let mut shape = v.shape().to_vec();
        shape[0] = rows.len();
        let t = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SelectRows { x: a, rows: rows.to_vec() }, ng))
    }

    /// Concatenate along axis 1. All parts share axis 0 and every axis after 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?)
            .to_vec();
        if first.len() < 2 {
            return Err(Error::Shape(format!("concat needs rank >= 2, got {:?}", first)));
        }
        let batch = first[0];
        let tail: Vec<usize> = first[2..].to_vec();
        let inner: usize = tail.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != batch || s[2..] != tail[..] {
                return Err(Error::Shape(format!("concat mismatch {:?} vs {:?}", s, first)));
            }
            widths.push(s[1] * inner);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; batch * total];
        for b in 0..batch {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.value(p).data()[b * w..(b + 1) * w];
                data[b * total + off..b * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        let mut shape = vec![batch, total / inner.max(1)];
        shape.extend_from_slice(&tail);
        let t = Tensor::new(shape, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::Concat { parts: parts.to_vec(), widths, batch }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Non-overlapping average pooling over the last axis.
    pub fn avg_pool(&mut self, a: Var, width: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let len = *shape.last().ok_or_else(|| Error::Shape("avg_pool on scalar".into()))?;
        if width == 0 || len % width != 0 {
            return Err(Error::Shape(format!("avg_pool width {width} does not divide {len}")));
        }
        let out_len = len / width;
        let src = self.value(a).data();
        let inv = 1.0 / width as f64;
        let data: Vec<f64> = src.chunks_exact(width).map(|c| c.iter().sum::<f64>() * inv).collect();
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = out_len;
        let t = Tensor::new(new_shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::AvgPool { x: a, width }, ng))
    }

    /// `x[B, in] * w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Shape(format!("linear: x {:?}, w {:?}", xs, ws)));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; batch * n_out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != n_out {
                return Err(Error::Shape(format!("linear bias {:?} for {n_out} outputs", bv.shape())));
            }
            for row in out.chunks_exact_mut(n_out) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(batch, n_in, n_out, self.value(x).data(), false, self.value(w).data(), false, &mut out, 1.0);
        let t = Tensor::new(vec![batch, n_out], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(t, Op::Linear { x, w, b }, ng))
    }

    /// 1-D convolution. `x: [B, Cin, L]`, `w: [Cout, Cin, K]`, `b: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("conv1d: x {:?}, w {:?}", xs, ws)));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if len + 2 * pad < k {
            return Err(Error::Shape(format!("conv1d: length {len} too short for kernel {k}")));
        }
        let l_out = (len + 2 * pad - k) / stride + 1;
        let geo = Geometry { batch, channels: c_in, signal_len: len, kernel: k, stride, pad, positions: l_out };
        let cols = conv::unfold(self.value(x).data(), geo);
        let ncols = batch * l_out;
        let mut mat = vec![0.0; c_out * ncols];
        gemm(c_out, c_in * k, ncols, self.value(w).data(), false, &cols, false, &mut mat, 0.0);
        let mut out = conv::from_channel_major(&mat, batch, c_out, l_out);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), batch, c_out, l_out)?;
        }
        let t = Tensor::new(vec![batch, c_out, l_out], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(t, Op::Conv { x, w, b, geo }, ng))
    }

    /// Transposed 1-D convolution. `x: [B, Cin, L]`, `w: [Cin, Cout, K]`, `b: [Cout]`.
    ///
    /// Output length is `(L - 1) * stride - 2 * pad + K + output_pad`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[0] {
            return Err(Error::Shape(format!("conv_transpose1d: x {:?}, w {:?}", xs, ws)));
        }
        let (batch, c_in, len) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[1], ws[2]);
        let full = (len - 1) * stride + k + output_pad;
        if full < 2 * pad + 1 {
            return Err(Error::Shape("conv_transpose1d: empty output".into()));
        }
        let l_out = full - 2 * pad;
        let geo = Geometry { batch, channels: c_out, signal_len: l_out, kernel: k, stride, pad, positions: len };
        let xm = conv::to_channel_major(self.value(x).data(), batch, c_in, len);
        let ncols = batch * len;
        let mut cols = vec![0.0; c_out * k * ncols];
        gemm(c_out * k, c_in, ncols, self.value(w).data(), true, &xm, false, &mut cols, 0.0);
        let mut out = vec![0.0; batch * c_out * l_out];
        conv::fold(&cols, geo, &mut out);
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data(), batch, c_out, l_out)?;
        }
        let t = Tensor::new(vec![batch, c_out, l_out], out)?;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(t, Op::ConvT { x, w, b, geo }, ng))
    }

    /// Batch normalisation over axis 1 of `[B, C]` or `[B, C, L]`.
    ///
    /// Training graphs normalise with batch statistics and queue a running
    /// statistics update (see [`Graph::bn_updates`]); evaluation graphs use
    /// the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        set: &ParamSet,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::Shape(format!("batch_norm on {:?}", xs)));
        }
        let (batch, ch) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if set.get(gamma).len() != ch {
            return Err(Error::Shape(format!("batch_norm: {} channels, gamma {:?}", ch, set.get(gamma).shape())));
        }
        let g = self.param(set, gamma);
        let bt = self.param(set, beta);
        let src = self.value(x).data();
        let count = (batch * inner) as f64;
        let (mean, var) = if self.training {
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for b in 0..batch {
                for c in 0..ch {
                    let s = &src[(b * ch + c) * inner..(b * ch + c + 1) * inner];
                    mean[c] += s.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..batch {
                for c in 0..ch {
                    let s = &src[(b * ch + c) * inner..(b * ch + c + 1) * inner];
                    var[c] += s.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let unbiased = if count > 1.0 {
                var.iter().map(|v| v * count / (count - 1.0)).collect()
            } else {
                var.clone()
            };
            self.bn_updates.push(BnUpdate {
                set: set.uid(),
                mean: running_mean,
                var: running_var,
                batch_mean: mean.clone(),
                batch_var: unbiased,
            });
            (mean, var)
        } else {
            (set.get(running_mean).data().to_vec(), set.get(running_var).data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let src = self.value(x).data();
        let gv = self.value(g).data();
        let bv = self.value(bt).data();
        let mut xhat = vec![0.0; src.len()];
        let mut out = vec![0.0; src.len()];
        for b in 0..batch {
            for c in 0..ch {
                let r = (b * ch + c) * inner..(b * ch + c + 1) * inner;
                for i in r {
                    let h = (src[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = gv[c] * h + bv[c];
                }
            }
        }
        let t = Tensor::new(xs, out)?;
        let ng = self.ng(x) || self.ng(g) || self.ng(bt);
        let train = self.training;
        Ok(self.push(t, Op::BatchNorm { x, gamma: g, beta: bt, xhat, inv_std, train }, ng))
    }

    /// Mean cross-entropy of `logits[B, C]` against integer targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::Shape(format!(
                "cross entropy: logits {:?}, {} targets",
                s,
                targets.len()
            )));
        }
        let (batch, classes) = (s[0], s[1]);
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for b in 0..batch {
            let t = targets[b];
            if t >= classes {
                return Err(Error::Index(format!("target {t} for {classes} classes")));
            }
            let row = &lv[b * classes..(b + 1) * classes];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            for c in 0..classes {
                probs[b * classes + c] = (row[c] - lse).exp();
            }
            loss += lse - row[t];
        }
        let t = Tensor::scalar(loss / batch as f64);
        let ng = self.ng(logits);
        Ok(self.push(t, Op::SoftmaxCrossEntropy { logits, probs, targets: targets.to_vec() }, ng))
    }

    /// Inverted dropout: active only in training graphs.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let shape = self.shape(a).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> =
            (0..n).map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        self.mul_const(a, Tensor::new(shape, mask)?)
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        let mut keys = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Op::Leaf(Some(k)) = n.op {
                keys.push((i, k));
            }
        }
        Ok(Gradients { grads, keys })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.ng(v) {
            let g = f();
            self.acc(grads, v, g);
        }
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = gout.data().iter().zip(a.data()).map(|(&g, &v)| f(g, v)).collect();
            Tensor::new(gout.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf(_) => {}
            Op::Add(a, b) => {
                self.acc_with(grads, *a, || gout.clone());
                self.acc_with(grads, *b, || gout.clone());
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, || gout.clone());
                self.acc_with(grads, *b, || gout.map(|g| -g));
            }
            Op::Mul(a, b) => {
                self.acc_with(grads, *a, || zip(self.value(*b), &|g, v| g * v));
                self.acc_with(grads, *b, || zip(self.value(*a), &|g, v| g * v));
            }
            Op::MulConst(a, c) => self.acc_with(grads, *a, || zip(c, &|g, v| g * v)),
            Op::Scale(a, c) => self.acc_with(grads, *a, || gout.map(|g| g * c)),
            Op::AddScalar(a) => self.acc_with(grads, *a, || gout.clone()),
            Op::Square(a) => self.acc_with(grads, *a, || zip(self.value(*a), &|g, v| 2.0 * g * v)),
            Op::Exp(a) => self.acc_with(grads, *a, || zip(y, &|g, v| g * v)),
            Op::Sigmoid(a) => self.acc_with(grads, *a, || zip(y, &|g, v| g * v * (1.0 - v))),
            Op::Tanh(a) => self.acc_with(grads, *a, || zip(y, &|g, v| g * (1.0 - v * v))),
            Op::LeakyRelu(a, s) => {
                let s = *s;
                self.acc_with(grads, *a, || zip(self.value(*a), &|g, v| if v > 0.0 { g } else { g * s }))
            }
            Op::Softplus(a) => self.acc_with(grads, *a, || zip(self.value(*a), &|g, v| g * sigmoid(v))),
            Op::SumAll(a) => {
                let g = gout.item();
                self.acc_with(grads, *a, || Tensor::full(self.shape(*a), g));
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let g = gout.item() / n;
                self.acc_with(grads, *a, || Tensor::full(self.shape(*a), g));
            }
            Op::MeanAxis { x, outer, axis, inner } => {
                let (outer, n, inner) = (*outer, *axis, *inner);
                self.acc_with(grads, *x, || {
                    let inv = 1.0 / n as f64;
                    let mut d = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let src = &gout.data()[o * inner..(o + 1) * inner];
                        for j in 0..n {
                            let dst = &mut d[(o * n + j) * inner..(o * n + j + 1) * inner];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv = sv * inv;
                            }
                        }
                    }
                    Tensor::new(self.shape(*x).to_vec(), d).expect("shape")
                });
            }
            Op::SelectRows { x, rows } => self.acc_with(grads, *x, || {
                let mut d = Tensor::zeros(self.shape(*x));
                let stride = d.len() / d.dim(0).max(1);
                for (k, &r) in rows.iter().enumerate() {
                    let src = &gout.data()[k * stride..(k + 1) * stride];
                    for (dv, sv) in d.data_mut()[r * stride..(r + 1) * stride].iter_mut().zip(src) {
                        *dv += sv;
                    }
                }
                d
            }),
            Op::Concat { parts, widths, batch } => {
                let total: usize = widths.iter().sum();
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    self.acc_with(grads, p, || {
                        let mut d = Vec::with_capacity(batch * w);
                        for b in 0..*batch {
                            d.extend_from_slice(&gout.data()[b * total + off..b * total + off + w]);
                        }
                        Tensor::new(self.shape(p).to_vec(), d).expect("shape")
                    });
                    off += w;
                }
            }
            Op::Reshape(a) => self.acc_with(grads, *a, || {
                gout.clone().reshape(self.shape(*a)).expect("reshape")
            }),
            Op::AvgPool { x, width } => self.acc_with(grads, *x, || {
                let inv = 1.0 / *width as f64;
                let mut d = Vec::with_capacity(gout.len() * width);
                for &g in gout.data() {
                    d.extend(std::iter::repeat_n(g * inv, *width));
                }
                Tensor::new(self.shape(*x).to_vec(), d).expect("shape")
            }),
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (batch, n_in) = (xs[0], xs[1]);
                let n_out = gout.dim(1);
                self.acc_with(grads, *x, || {
                    let mut d = vec![0.0; batch * n_in];
                    gemm(batch, n_out, n_in, gout.data(), false, self.value(*w).data(), true, &mut d, 0.0);
                    Tensor::new(vec![batch, n_in], d).expect("shape")
                });
                self.acc_with(grads, *w, || {
                    let mut d = vec![0.0; n_in * n_out];
                    gemm(n_in, batch, n_out, self.value(*x).data(), true, gout.data(), false, &mut d, 0.0);
                    Tensor::new(vec![n_in, n_out], d).expect("shape")
                });
                if let Some(b) = b {
                    self.acc_with(grads, *b, || {
                        let mut d = vec![0.0; n_out];
                        for row in gout.data().chunks_exact(n_out) {
                            for (dv, g) in d.iter_mut().zip(row) {
                                *dv += g;
                            }
                        }
                        Tensor::new(self.shape(*b).to_vec(), d).expect("shape")
                    });
                }
            }
            Op::Conv { x, w, b, geo } => {
                let geo = *geo;
                let c_out = gout.dim(1);
                let l_out = geo.positions;
                let ncols = geo.batch * l_out;
                let ck = geo.channels * geo.kernel;
                let gm = conv::to_channel_major(gout.data(), geo.batch, c_out, l_out);
                self.acc_with(grads, *w, || {
                    let cols = conv::unfold(self.value(*x).data(), geo);
                    let mut d = vec![0.0; c_out * ck];
                    gemm(c_out, ncols, ck, &gm, false, &cols, true, &mut d, 0.0);
                    Tensor::new(self.shape(*w).to_vec(), d).expect("shape")
                });
                self.acc_with(grads, *x, || {
                    let mut dcols = vec![0.0; ck * ncols];
                    gemm(ck, c_out, ncols, self.value(*w).data(), true, &gm, false, &mut dcols, 0.0);
                    let mut d = vec![0.0; self.value(*x).len()];
                    conv::fold(&dcols, geo, &mut d);
                    Tensor::new(self.shape(*x).to_vec(), d).expect("shape")
                });
                if let Some(b) = b {
                    self.acc_with(grads, *b, || channel_bias_grad(gout, geo.batch, c_out, l_out));
                }
            }
            Op::ConvT { x, w, b, geo } => {
                let geo = *geo;
                let c_in = self.shape(*x)[1];
                let c_out = geo.channels;
                let ck = c_out * geo.kernel;
                let ncols = geo.batch * geo.positions;
                let dcols = conv::unfold(gout.data(), geo);
                self.acc_with(grads, *x, || {
                    let mut dm = vec![0.0; c_in * ncols];
                    gemm(c_in, ck, ncols, self.value(*w).data(), false, &dcols, false, &mut dm, 0.0);
                    let d = conv::from_channel_major(&dm, geo.batch, c_in, geo.positions);
                    Tensor::new(self.shape(*x).to_vec(), d).expect("shape")
                });
                self.acc_with(grads, *w, || {
                    let xm = conv::to_channel_major(self.value(*x).data(), geo.batch, c_in, geo.positions);
                    let mut d = vec![0.0; c_in * ck];
                    gemm(c_in, ncols, ck, &xm, false, &dcols, true, &mut d, 0.0);
                    Tensor::new(self.shape(*w).to_vec(), d).expect("shape")
                });
                if let Some(b) = b {
                    self.acc_with(grads, *b, || channel_bias_grad(gout, geo.batch, c_out, geo.signal_len));
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let xs = self.shape(*x);
                let (batch, ch) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let g = gout.data();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        for i in (b * ch + c) * inner..(b * ch + c + 1) * inner {
                            dgamma[c] += g[i] * xhat[i];
                            dbeta[c] += g[i];
                        }
                    }
                }
                let gam = self.value(*gamma).data();
                self.acc_with(grads, *x, || {
                    let mut d = vec![0.0; g.len()];
                    let count = (batch * inner) as f64;
                    for b in 0..batch {
                        for c in 0..ch {
                            for i in (b * ch + c) * inner..(b * ch + c + 1) * inner {
                                d[i] = if *train {
                                    gam[c] * inv_std[c] / count
                                        * (count * g[i] - dbeta[c] - xhat[i] * dgamma[c])
                                } else {
                                    g[i] * gam[c] * inv_std[c]
                                };
                            }
                        }
                    }
                    Tensor::new(xs.to_vec(), d).expect("shape")
                });
                self.acc_with(grads, *gamma, || Tensor::new(vec![ch], dgamma.clone()).expect("shape"));
                self.acc_with(grads, *beta, || Tensor::new(vec![ch], dbeta.clone()).expect("shape"));
            }
            Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                let batch = targets.len();
                let classes = probs.len() / batch.max(1);
                let scale = gout.item() / batch as f64;
                self.acc_with(grads, *logits, || {
                    let mut d = probs.clone();
                    for (b, &t) in targets.iter().enumerate() {
                        d[b * classes + t] -= 1.0;
                    }
                    d.iter_mut().for_each(|v| *v *= scale);
                    Tensor::new(vec![batch, classes], d).expect("shape")
                });
            }
        }
        Ok(())
    }
}

fn add_channel_bias(out: &mut [f64], bias: &[f64], batch: usize, ch: usize, len: usize) -> Result<()> {
    if bias.len() != ch {
        return Err(Error::Shape(format!("bias of {} for {} channels", bias.len(), ch)));
    }
    for b in 0..batch {
        for c in 0..ch {
            for v in &mut out[(b * ch + c) * len..(b * ch + c + 1) * len] {
                *v += bias[c];
            }
        }
    }
    Ok(())
}

fn channel_bias_grad(gout: &Tensor, batch: usize, ch: usize, len: usize) -> Tensor {
    let mut d = vec![0.0; ch];
    for b in 0..batch {
        for (c, dv) in d.iter_mut().enumerate() {
            *dv += gout.data()[(b * ch + c) * len..(b * ch + c + 1) * len].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![ch], d).expect("shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    keys: Vec<(usize, ParamKey)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Per-entry gradients for `set`, summed over every leaf that referenced it.
    pub fn for_set(&self, set: &ParamSet) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..set.len()).map(|_| None).collect();
        for (node, key) in &self.keys {
            if key.set != set.uid() {
                continue;
            }
            if let Some(g) = &self.grads[*node] {
                match &mut out[key.id.0] {
                    Some(t) => t.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

/// Apply the queued running-statistics updates that belong to `set`.
pub fn apply_bn_updates(set: &mut ParamSet, updates: &[BnUpdate], momentum: f64) {
    let uid = set.uid();
    for u in updates.iter().filter(|u| u.set == uid) {
        for (r, b) in set.get_mut(u.mean).data_mut().iter_mut().zip(&u.batch_mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, b) in set.get_mut(u.var).data_mut().iter_mut().zip(&u.batch_var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}
