//! Layers built on the tensor engine. Each layer owns parameter ids in a
//! shared [`ParamStore`] and is applied inside a [`Graph`].

use crate::error::{bail, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let std = (1.0 / fan_in as f64).sqrt();
        Ok(Self {
            w: store.add_normal(format!("{name}.w"), fan_in, fan_out, std, rng)?,
            b: store.add_full(format!("{name}.b"), 1, fan_out, 0.0)?,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Linear layers with SiLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden…, out]`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            bail!(InvalidArgument, "an MLP needs at least input and output sizes");
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, mut x: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.silu(x);
            }
            x = l.forward(g, x)?;
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_full(format!("{name}.gain"), 1, dim, 1.0)?,
            bias: store.add_full(format!("{name}.bias"), 1, dim, 0.0)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            bail!(InvalidArgument, "dimension {dim} is not divisible by {heads} heads");
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    /// Queries from `x`, keys and values from `memory`. Attention weight
    /// matrices are pushed onto `trace` when given.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        memory: Var,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let dim = self.q.fan_out;
        let dh = dim / self.heads;
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let scale = T::one() / T::from_usize_lossy(dh).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            if let Some(t) = trace.as_deref_mut() {
                t.push(a);
            }
            outs.push(g.matmul(a, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.forward(g, cat)
    }
}

/// Pre-norm transformer block; with `cross` set it is a decoder block that
/// attends to a memory sequence after self-attention.
#[derive(Debug, Clone)]
pub struct Block {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub cross: Option<(LayerNorm, Attention)>,
    pub ln_ff: LayerNorm,
    pub ff: Mlp,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        with_cross: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let cross = if with_cross {
            Some((
                LayerNorm::new(store, &format!("{name}.ln_cross"), dim)?,
                Attention::new(store, &format!("{name}.cross"), dim, heads, rng)?,
            ))
        } else {
            None
        };
        Ok(Self {
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), dim)?,
            self_attn: Attention::new(store, &format!("{name}.self"), dim, heads, rng)?,
            cross,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln_ff"), dim)?,
            ff: Mlp::new(store, &format!("{name}.ff"), &[dim, 2 * dim, dim], rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        memory: Option<Var>,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let h = self.ln_self.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h, trace.as_deref_mut())?;
        let mut x = g.add(x, a)?;
        if let Some((ln, attn)) = &self.cross {
            let Some(mem) = memory else {
                bail!(InvalidArgument, "decoder block needs a memory sequence");
            };
            let h = ln.forward(g, x)?;
            let c = attn.forward(g, h, mem, trace.as_deref_mut())?;
            x = g.add(x, c)?;
        }
        let h = self.ln_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}
