//! Parameterised building blocks. Each layer only stores [`ParamId`]s; the
//! tensors live in the owning [`ParamSet`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Graph, ParamId, ParamSet, Result, Tensor, Var};

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        set: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let w = set.add_param(&format!("{name}.weight"), uniform(&[c_out, c_in, kernel], bound, rng));
        let b = set.add_param(&format!("{name}.bias"), uniform(&[c_out], bound, rng));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        g.conv1d(x, w, Some(b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvTranspose1d {
    w: ParamId,
    b: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        set: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let w = set.add_param(&format!("{name}.weight"), uniform(&[c_in, c_out, kernel], bound, rng));
        let b = set.add_param(&format!("{name}.bias"), uniform(&[c_out], bound, rng));
        Self { w, b, stride, pad, output_pad }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.pad, self.output_pad)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm1d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm1d {
    pub fn new(set: &mut ParamSet, name: &str, channels: usize) -> Self {
        Self {
            gamma: set.add_param(&format!("{name}.weight"), Tensor::full(&[channels], 1.0)),
            beta: set.add_param(&format!("{name}.bias"), Tensor::zeros(&[channels])),
            running_mean: set.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: set.add_buffer(&format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
        }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, x: Var) -> Result<Var> {
        g.batch_norm(x, set, self.gamma, self.beta, self.running_mean, self.running_var)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(set: &mut ParamSet, name: &str, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        let w = set.add_param(&format!("{name}.weight"), uniform(&[n_in, n_out], bound, rng));
        let b = set.add_param(&format!("{name}.bias"), uniform(&[n_out], bound, rng));
        Self { w, b, n_in, n_out }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Lookup table with one trainable row per index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Embedding {
    table: ParamId,
    pub rows: usize,
    pub width: usize,
}

impl Embedding {
    pub fn new(set: &mut ParamSet, name: &str, rows: usize, width: usize, rng: &mut impl Rng) -> Self {
        let t = Tensor::from_fn(&[rows, width], |_| StandardNormal.sample(rng));
        Self { table: set.add_param(&format!("{name}.table"), t), rows, width }
    }

    pub fn forward(&self, g: &mut Graph, set: &ParamSet, idx: &[usize]) -> Result<Var> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.rows) {
            return Err(Error::Index(format!("embedding index {bad} for {} rows", self.rows)));
        }
        let t = g.param(set, self.table);
        g.select_rows(t, idx)
    }

    pub fn row<'a>(&self, set: &'a ParamSet, i: usize) -> &'a [f64] {
        set.get(self.table).row(i)
    }

    pub fn table_id(&self) -> ParamId {
        self.table
    }
}

/// Single-layer gated recurrent unit with the usual reset/update/new gates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gru {
    ir: Linear,
    iz: Linear,
    in_: Linear,
    hr: Linear,
    hz: Linear,
    hn: Linear,
    pub hidden: usize,
}

impl Gru {
    pub fn new(set: &mut ParamSet, name: &str, n_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            ir: Linear::new(set, &format!("{name}.ir"), n_in, hidden, rng),
            iz: Linear::new(set, &format!("{name}.iz"), n_in, hidden, rng),
            in_: Linear::new(set, &format!("{name}.in"), n_in, hidden, rng),
            hr: Linear::new(set, &format!("{name}.hr"), hidden, hidden, rng),
            hz: Linear::new(set, &format!("{name}.hz"), hidden, hidden, rng),
            hn: Linear::new(set, &format!("{name}.hn"), hidden, hidden, rng),
            hidden,
        }
    }

    /// One step: `x [B, n_in]`, `h [B, hidden]` -> `h' [B, hidden]`.
    pub fn step(&self, g: &mut Graph, set: &ParamSet, x: Var, h: Var) -> Result<Var> {
        let a = self.ir.forward(g, set, x)?;
        let b = self.hr.forward(g, set, h)?;
        let r = g.add(a, b)?;
        let r = g.sigmoid(r);
        let a = self.iz.forward(g, set, x)?;
        let b = self.hz.forward(g, set, h)?;
        let z = g.add(a, b)?;
        let z = g.sigmoid(z);
        let a = self.in_.forward(g, set, x)?;
        let b = self.hn.forward(g, set, h)?;
        let rb = g.mul(r, b)?;
        let n = g.add(a, rb)?;
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }

    /// Run over a sequence of `[B, n_in]` inputs starting from a zero state.
    pub fn run(&self, g: &mut Graph, set: &ParamSet, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Shape("empty GRU sequence".into()))?;
        let batch = g.shape(*first)[0];
        let mut h = g.input(Tensor::zeros(&[batch, self.hidden]));
        for &x in xs {
            h = self.step(g, set, x, h)?;
        }
        Ok(h)
    }
}
