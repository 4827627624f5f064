//! Transformer building blocks: multi-head self-attention, the position-wise
//! feed-forward network, and their post-norm residual composition.

mod params;

pub use params::{kaiming, sampled_gradient_check, xavier, Bound, GradCheckReport, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::tensor::{Graph, RngState, Tensor, Var};

pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub d_item: usize,
    pub n_heads: usize,
    pub d_hidden: usize,
}

impl TransformerConfig {
    pub fn new(d_item: usize, n_heads: usize, d_hidden: usize) -> Result<Self> {
        let cfg = Self {
            d_item,
            n_heads,
            d_hidden,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_item == 0 || self.n_heads == 0 || self.d_hidden == 0 {
            return Err(Error::Config("transformer dimensions must be positive".into()));
        }
        if self.d_item % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_item {} is not divisible by {} heads",
                self.d_item, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_item / self.n_heads
    }
}

/// Attention projections. Head `i` owns columns `i*d_head..(i+1)*d_head` of
/// `w_q`, `w_k` and `w_v`; `w_o` fuses the concatenated heads.
#[derive(Clone, Debug)]
pub struct MhsaParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    cfg: TransformerConfig,
}

impl MhsaParams {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: TransformerConfig, rng: &mut RngState) -> Self {
        let d = cfg.d_item;
        Self {
            w_q: store.add(format!("{prefix}.w_q"), xavier(d, d, rng)),
            w_k: store.add(format!("{prefix}.w_k"), xavier(d, d, rng)),
            w_v: store.add(format!("{prefix}.w_v"), xavier(d, d, rng)),
            w_o: store.add(format!("{prefix}.w_o"), xavier(d, d, rng)),
            cfg,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(g, p, x)?.0)
    }

    /// Returns the output and the attention weights `[B * n_heads, L, L]`
    /// (softmax over keys, so each row sums to one).
    pub fn forward_with_attention(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let in_shape = g.shape(x).to_vec();
        let (b, l, d) = match in_shape[..] {
            [l, d] => (1, l, d),
            [b, l, d] => (b, l, d),
            _ => {
                return Err(Error::Dimension {
                    op: "mhsa",
                    msg: format!("expected [L, d] or [B, L, d], got {in_shape:?}"),
                })
            }
        };
        if d != self.cfg.d_item {
            return Err(Error::ShapeMismatch {
                op: "mhsa",
                lhs: in_shape,
                rhs: vec![self.cfg.d_item],
            });
        }
        if l == 0 {
            return Err(Error::Dimension {
                op: "mhsa",
                msg: "empty sequence".into(),
            });
        }
        let (h, dh) = (self.cfg.n_heads, self.cfg.d_head());
        let x3 = g.reshape(x, &[b, l, d])?;
        let split = |g: &mut Graph, w: ParamId| -> Result<Var> {
            let y = g.linear(x3, p.var(w), None)?;
            let y = g.reshape(y, &[b, l, h, dh])?;
            let y = g.permute(y, &[0, 2, 1, 3])?;
            g.reshape(y, &[b * h, l, dh])
        };
        let q = split(g, self.w_q)?;
        let k = split(g, self.w_k)?;
        let v = split(g, self.w_v)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f32).sqrt());
        let attn = g.softmax(scores, 2)?;
        let z = g.bmm(attn, v, false)?;
        let z = g.reshape(z, &[b, h, l, dh])?;
        let z = g.permute(z, &[0, 2, 1, 3])?;
        let z = g.reshape(z, &[b, l, d])?;
        let out = g.linear(z, p.var(self.w_o), None)?;
        Ok((g.reshape(out, &in_shape)?, attn))
    }
}

/// Position-wise `W2 relu(W1 x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct FfnParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FfnParams {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: TransformerConfig, rng: &mut RngState) -> Self {
        let (d, hid) = (cfg.d_item, cfg.d_hidden);
        Self {
            w1: store.add(format!("{prefix}.w1"), xavier(d, hid, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(&[hid])),
            w2: store.add(format!("{prefix}.w2"), xavier(hid, d, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.linear(x, p.var(self.w1), Some(p.var(self.b1)))?;
        let h = g.relu(h);
        g.linear(h, p.var(self.w2), Some(p.var(self.b2)))
    }
}

/// One transformer layer: `y1 = LN(x + MHSA(x))`, `y = LN(y1 + FFN(y1))`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub cfg: TransformerConfig,
    pub mhsa: MhsaParams,
    pub ffn: FfnParams,
    ln1: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: TransformerConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_item;
        let mhsa = MhsaParams::new(store, &format!("{prefix}.mhsa"), cfg, rng);
        let ffn = FfnParams::new(store, &format!("{prefix}.ffn"), cfg, rng);
        let ln1 = (
            store.add(format!("{prefix}.ln1.gamma"), Tensor::ones(&[d])),
            store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(&[d])),
        );
        let ln2 = (
            store.add(format!("{prefix}.ln2.gamma"), Tensor::ones(&[d])),
            store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(&[d])),
        );
        Ok(Self {
            cfg,
            mhsa,
            ffn,
            ln1,
            ln2,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let axis = g.shape(x).len() - 1;
        let a = self.mhsa.forward(g, p, x)?;
        let r = g.add(x, a)?;
        let y1 = g.layer_norm(r, p.var(self.ln1.0), p.var(self.ln1.1), axis, LAYER_NORM_EPS)?;
        let f = self.ffn.forward(g, p, y1)?;
        let r = g.add(y1, f)?;
        g.layer_norm(r, p.var(self.ln2.0), p.var(self.ln2.1), axis, LAYER_NORM_EPS)
    }
}
