//! Parameterised building blocks shared by the network and the prior
//! encoders.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Epsilon of every layer normalisation in the crate.
pub const NORM_EPS: f64 = 1e-6;

/// Registers parameters under a name prefix with a fixed group.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
    pub prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, group: ParamGroup, prefix: &str) -> Self {
        Self {
            store,
            rng,
            group,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, n: &str) -> String {
        if self.prefix.is_empty() {
            n.to_string()
        } else {
            format!("{}.{n}", self.prefix)
        }
    }

    pub fn sub(&mut self, n: &str) -> Init<'_> {
        let prefix = self.name(n);
        Init {
            store: self.store,
            rng: self.rng,
            group: self.group,
            prefix,
        }
    }

    pub fn tensor(&mut self, n: &str, value: Tensor, decay: bool) -> Result<ParamId> {
        let name = self.name(n);
        self.store.add(name, value, self.group, decay)
    }

    pub fn randn(&mut self, n: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let t = Tensor::randn(shape.to_vec(), std, &mut *self.rng);
        self.tensor(n, t, false)
    }

    pub fn linear(&mut self, n: &str, d_in: usize, d_out: usize, init: LinearInit) -> Result<Linear> {
        let std = match init {
            LinearInit::Fan(gain) => gain / (d_in as f64).sqrt(),
            LinearInit::Zero => 0.0,
        };
        let w = if std > 0.0 {
            Tensor::randn([d_in, d_out], std, &mut *self.rng)
        } else {
            Tensor::zeros([d_in, d_out])
        };
        let mut sub = self.sub(n);
        let w = sub.tensor("weight", w, true)?;
        let b = sub.tensor("bias", Tensor::zeros([d_out]), false)?;
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn norm(&mut self, n: &str, dim: usize) -> Result<AffineNorm> {
        let mut sub = self.sub(n);
        let gamma = sub.tensor("gamma", Tensor::full([dim], 1.0), false)?;
        let beta = sub.tensor("beta", Tensor::zeros([dim]), false)?;
        Ok(AffineNorm { gamma, beta })
    }

    pub fn uniform_f64(&mut self) -> f64 {
        self.rng.random()
    }
}

/// 2D sine-cosine table `[grid², dim]`: the first half of the channels
/// encodes the patch row, the second half the column.
pub fn sincos_2d(grid: usize, dim: usize) -> Tensor {
    let quarter = (dim / 4).max(1);
    Tensor::from_fn([grid * grid, dim], |i| {
        let (p, c) = (i / dim, i % dim);
        let (row, col) = (p / grid, p % grid);
        let half = dim / 2;
        let (pos, c) = if c < half { (row, c) } else { (col, c - half) };
        let k = c % quarter;
        let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
        let a = pos as f64 * omega;
        if c < quarter {
            a.sin()
        } else if c < 2 * quarter {
            a.cos()
        } else {
            0.0
        }
    })
}

#[derive(Clone, Copy, Debug)]
pub enum LinearInit {
    /// Gaussian with standard deviation `gain / sqrt(fan_in)`.
    Fan(f64),
    Zero,
}

/// `y = x · W + b` over the last axis.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w)?;
        g.add(y, b)
    }
}

/// Layer normalisation with a learned gain and offset.
#[derive(Clone, Copy, Debug)]
pub struct AffineNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl AffineNorm {
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, NORM_EPS)?;
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        let y = g.mul(n, gamma)?;
        g.add(y, beta)
    }
}

/// Multi-head self-attention over the token axis of `[B, T, C]`.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(init: &mut Init<'_>, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: init.linear("q", dim, dim, LinearInit::Fan(1.0))?,
            k: init.linear("k", dim, dim, LinearInit::Fan(1.0))?,
            v: init.linear("v", dim, dim, LinearInit::Fan(1.0))?,
            out: init.linear("out", dim, dim, LinearInit::Fan(0.5))?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let [b, t, c] = shape[..] else {
            return Err(crate::Error::InvalidShape {
                shape,
                reason: "attention expects [batch, tokens, channels]".into(),
            });
        };
        let h = self.heads;
        let d = c / h;
        let split = |g: &mut Graph, y: Var| -> Result<Var> {
            let y = g.reshape(y, &[b, t, h, d])?;
            g.permute(y, &[0, 2, 1, 3])
        };
        let q = self.q.forward(g, store, x)?;
        let q = split(g, q)?;
        let k = self.k.forward(g, store, x)?;
        let k = split(g, k)?;
        let v = self.v.forward(g, store, x)?;
        let v = split(g, v)?;
        let kt = g.transpose_last_two(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = g.softmax(scores, -1)?;
        let y = g.matmul(attn, v)?;
        let y = g.permute(y, &[0, 2, 1, 3])?;
        let y = g.reshape(y, &[b, t, c])?;
        self.out.forward(g, store, y)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub norm1: AffineNorm,
    pub attn: Attention,
    pub norm2: AffineNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Block {
    pub fn new(init: &mut Init<'_>, dim: usize, heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(Self {
            norm1: init.norm("norm1", dim)?,
            attn: Attention::new(&mut init.sub("attn"), dim, heads)?,
            norm2: init.norm("norm2", dim)?,
            fc1: init.linear("fc1", dim, dim * mlp_ratio, LinearInit::Fan(2f64.sqrt()))?,
            fc2: init.linear("fc2", dim * mlp_ratio, dim, LinearInit::Fan(0.5))?,
        })
    }

    /// `x` is `[B, T, C]`; attention runs within each of the `B` groups.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = self.norm1.forward(g, store, x)?;
        let a = self.attn.forward(g, store, n)?;
        let x = g.add(x, a)?;
        let n = self.norm2.forward(g, store, x)?;
        let h = self.fc1.forward(g, store, n)?;
        let h = g.relu(h)?;
        let m = self.fc2.forward(g, store, h)?;
        g.add(x, m)
    }
}
