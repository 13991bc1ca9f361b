use serde::{Deserialize, Serialize};

use super::{dense, EntryKind, EntrySpec, Nonlinearity};
use crate::autodiff::{Graph, Var};
use crate::data::{Batch, BYTE_VOCAB};
use crate::error::{Error, Result};
use crate::tensor::Real;

const LN_EPS: f64 = 1e-5;

/// Decoder-only transformer: learned positions, pre-LN blocks of causal
/// multi-head attention and a two-layer MLP, final LN, untied readout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub depth: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp_dim: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub nonlinearity: Nonlinearity,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            depth: 2,
            heads: 4,
            width: 128,
            mlp_dim: 512,
            vocab: BYTE_VOCAB,
            seq_len: 128,
            nonlinearity: Nonlinearity::Gelu,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.depth, self.heads, self.width, self.mlp_dim, self.vocab, self.seq_len];
        if dims.contains(&0) {
            return Err(Error::Config("transformer dims must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.mlp_dim != 4 * self.width {
            return Err(Error::Config(format!(
                "mlp_dim {} must be 4 x width {}",
                self.mlp_dim, self.width
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub(crate) fn entries(&self) -> Vec<EntrySpec> {
        let (m, f) = (self.width, self.mlp_dim);
        let w = |fan_in| EntryKind::Weight { fan_in };
        let mut e = vec![
            EntrySpec::new("embed.tokens", &[self.vocab, m], EntryKind::Embedding),
            EntrySpec::new("embed.positions", &[self.seq_len, m], EntryKind::Embedding),
            EntrySpec::new("final_ln.gain", &[m], EntryKind::Gain),
            EntrySpec::new("final_ln.bias", &[m], EntryKind::Bias),
            EntrySpec::new("head.weight", &[m, self.vocab], w(m)),
            EntrySpec::new("head.bias", &[self.vocab], EntryKind::Bias),
        ];
        for i in 0..self.depth {
            let p = format!("blocks.{i}");
            for proj in ["q", "k", "v", "o"] {
                e.push(EntrySpec::new(format!("{p}.attn.w{proj}"), &[m, m], w(m)));
                e.push(EntrySpec::new(format!("{p}.attn.b{proj}"), &[m], EntryKind::Bias));
            }
            for ln in ["ln1", "ln2"] {
                e.push(EntrySpec::new(format!("{p}.{ln}.gain"), &[m], EntryKind::Gain));
                e.push(EntrySpec::new(format!("{p}.{ln}.bias"), &[m], EntryKind::Bias));
            }
            e.push(EntrySpec::new(format!("{p}.mlp.w1"), &[m, f], w(m)));
            e.push(EntrySpec::new(format!("{p}.mlp.b1"), &[f], EntryKind::Bias));
            e.push(EntrySpec::new(format!("{p}.mlp.w2"), &[f, m], w(f)));
            e.push(EntrySpec::new(format!("{p}.mlp.b2"), &[m], EntryKind::Bias));
        }
        e
    }

    pub(crate) fn logits<T: Real>(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        let Batch::Tokens {
            inputs, batch: b, seq_len: t, ..
        } = batch
        else {
            return Err(Error::Config("language model given a feature batch".into()));
        };
        let (b, t, m) = (*b, *t, self.width);
        if t > self.seq_len {
            return Err(Error::Config(format!(
                "sequence length {t} exceeds the model's {}",
                self.seq_len
            )));
        }
        if inputs.len() != b * t {
            return Err(Error::shape("token batch", &[b * t], &[inputs.len()]));
        }
        let tokens = g.param("embed.tokens")?;
        let positions = g.param("embed.positions")?;
        let tok = g.embedding(tokens, inputs)?;
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = g.embedding(positions, &pos_ids)?;
        let mut x = g.add(tok, pos)?;

        for i in 0..self.depth {
            let p = format!("blocks.{i}");
            let h = self.layer_norm(g, x, &format!("{p}.ln1"))?;
            let a = self.attention(g, h, b, t, &p)?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, x, &format!("{p}.ln2"))?;
            let h = dense(g, h, &format!("{p}.mlp.w1"), &format!("{p}.mlp.b1"))?;
            let h = g.unary(h, self.nonlinearity.unary());
            let h = dense(g, h, &format!("{p}.mlp.w2"), &format!("{p}.mlp.b2"))?;
            x = g.add(x, h)?;
        }
        let x = self.layer_norm(g, x, "final_ln")?;
        let logits = dense(g, x, "head.weight", "head.bias")?;
        debug_assert_eq!(g.shape(x), [b * t, m]);
        g.reshape(logits, &[b, t, self.vocab])
    }

    fn layer_norm<T: Real>(&self, g: &mut Graph<T>, x: Var, prefix: &str) -> Result<Var> {
        let gain = g.param(&format!("{prefix}.gain"))?;
        let bias = g.param(&format!("{prefix}.bias"))?;
        let y = g.layer_norm(x, LN_EPS);
        let y = g.mul_row(y, gain)?;
        g.add_row(y, bias)
    }

    /// Causal multi-head self-attention over `h: [b * t, m]`.
    fn attention<T: Real>(&self, g: &mut Graph<T>, h: Var, b: usize, t: usize, prefix: &str) -> Result<Var> {
        let (heads, dh) = (self.heads, self.head_dim());
        let mut split = |name: &str| -> Result<Var> {
            let y = dense(g, h, &format!("{prefix}.attn.w{name}"), &format!("{prefix}.attn.b{name}"))?;
            let y = g.reshape(y, &[b, t, heads, dh])?;
            let y = g.swap_axes_12(y)?;
            g.reshape(y, &[b * heads, t, dh])
        };
        let q = split("q")?;
        let k = split("k")?;
        let v = split("v")?;
        let scores = g.bmm(q, k, false, true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.causal_softmax(scores)?;
        let out = g.bmm(probs, v, false, false)?;
        let out = g.reshape(out, &[b, heads, t, dh])?;
        let out = g.swap_axes_12(out)?;
        let out = g.reshape(out, &[b * t, self.width])?;
        dense(
            g,
            out,
            &format!("{prefix}.attn.wo"),
            &format!("{prefix}.attn.bo"),
        )
    }
}
