use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;

use super::params::GRANULARITIES;
use super::{Hia, ModelConfig, PhoneScoreInjection};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Mode, Tensor, Var};
use crate::{GOP_DIM, UTT_ASPECTS, WORD_ASPECTS};

const LN_EPS: f64 = 1e-5;

/// Per-utterance IAM outputs, each `[B, D]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InteractionHeads {
    pub phn: Var,
    pub word: Var,
    pub utt: Var,
}

/// Graph nodes holding the predictions: `phn [B, T]`, `word [B, W, 3]`, `utt [B, 5]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoreSet {
    pub phn: Var,
    pub word: Var,
    pub utt: Var,
}

/// One forward pass under construction on a [`Graph`].
///
/// Every parameter is registered as a leaf when the pass is created, so after
/// `backward` the gradient of parameter `name` is `g.grad(params[name])`.
pub struct Forward<'a> {
    cfg: &'a ModelConfig,
    batch: &'a Batch,
    g: &'a mut Graph,
    mode: Mode,
    rng: &'a mut dyn RngCore,
    pub params: BTreeMap<String, Var>,
    /// GOP features `[B, T, 84]`; a leaf when input gradients were requested.
    pub input: Var,
    /// Phone mask repeated over `D` channels.
    mask_d: Vec<f64>,
}

impl<'a> Forward<'a> {
    pub fn new(
        model: &'a Hia,
        g: &'a mut Graph,
        batch: &'a Batch,
        mode: Mode,
        rng: &'a mut dyn RngCore,
        input_grad: bool,
    ) -> Result<Self> {
        let params = model.params.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone()))).collect();
        let gop = Tensor::new(&[batch.size, batch.len, GOP_DIM], batch.gop.clone())?;
        let input = if input_grad { g.leaf(gop) } else { g.constant(gop) };
        Self::with_vars(&model.config, g, batch, mode, rng, params, input)
    }

    /// Builds on parameter and input nodes already placed on `g`, e.g. by a
    /// finite-difference checker. Names must match [`super::param_specs`].
    pub fn with_vars(
        cfg: &'a ModelConfig,
        g: &'a mut Graph,
        batch: &'a Batch,
        mode: Mode,
        rng: &'a mut dyn RngCore,
        params: BTreeMap<String, Var>,
        input: Var,
    ) -> Result<Self> {
        if batch.len > cfg.max_len {
            return Err(Error::Contract(format!(
                "batch length {} exceeds max_len {}",
                batch.len, cfg.max_len
            )));
        }
        let want = [batch.size, batch.len, GOP_DIM];
        if g.shape(input) != want {
            return Err(Error::shape(
                "forward input",
                format!("expected {want:?}, got {:?}", g.shape(input)),
            ));
        }
        let d = cfg.embed_dim;
        let mask_d = batch.mask.iter().flat_map(|&m| core::iter::repeat_n(m, d)).collect();
        Ok(Forward { cfg, batch, g, mode, rng, params, input, mask_d })
    }

    pub fn graph(&mut self) -> &mut Graph {
        self.g
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params.get(name).copied().ok_or_else(|| Error::Lookup(format!("unknown parameter {name}")))
    }

    fn lin(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (w, b) = (self.p(&format!("{prefix}.w"))?, self.p(&format!("{prefix}.b"))?);
        self.g.linear(x, w, b)
    }

    fn ln(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (gamma, beta) = (self.p(&format!("{prefix}.gamma"))?, self.p(&format!("{prefix}.beta"))?);
        self.g.layer_norm(x, gamma, beta, LN_EPS)
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        self.g.dropout(x, self.cfg.dropout, self.mode, &mut *self.rng)
    }

    fn mask_rows(&mut self, x: Var) -> Result<Var> {
        self.g.mul_const(x, &self.mask_d)
    }

    fn sum_or_zeros(&mut self, terms: &[Var]) -> Result<Var> {
        let Some((&first, rest)) = terms.split_first() else {
            let shape = [self.batch.size, self.batch.len, self.cfg.embed_dim];
            return Ok(self.g.constant(Tensor::zeros(&shape)));
        };
        rest.iter().try_fold(first, |acc, &t| self.g.add(acc, t))
    }

    /// Multi-head attention of `q_in [N, Tq, D]` over `kv [N, Tk, D]`.
    fn mha(&mut self, prefix: &str, q_in: Var, kv: Var, key_mask: Option<&[f64]>) -> Result<Var> {
        let q = self.lin(q_in, &format!("{prefix}.q"))?;
        let k = self.g.matmul(kv, self.p(&format!("{prefix}.k.w"))?)?;
        let v = self.lin(kv, &format!("{prefix}.v"))?;
        let h = self.cfg.n_heads;
        let out = if h == 1 {
            self.g.attention(q, k, v, key_mask)?
        } else {
            let &[n, tq, d] = self.g.shape(q) else {
                return Err(Error::shape(
                    "mha",
                    format!("rank 3 queries expected, got {:?}", self.g.shape(q)),
                ));
            };
            let tk = self.g.shape(k)[1];
            let dh = d / h;
            let split = |g: &mut Graph, x: Var, t: usize| -> Result<Var> {
                let r = g.reshape(x, &[n, t, h, dh])?;
                let s = g.swap_axes12(r)?;
                g.reshape(s, &[n * h, t, dh])
            };
            let (qh, kh, vh) = (split(self.g, q, tq)?, split(self.g, k, tk)?, split(self.g, v, tk)?);
            let mask_h: Option<Vec<f64>> = key_mask.map(|m| {
                (0..n)
                    .flat_map(|i| (0..h).flat_map(move |_| m[i * tk..(i + 1) * tk].iter().copied()))
                    .collect()
            });
            let o = self.g.attention(qh, kh, vh, mask_h.as_deref())?;
            let o = self.g.reshape(o, &[n, h, tq, dh])?;
            let o = self.g.swap_axes12(o)?;
            self.g.reshape(o, &[n, tq, d])?
        };
        self.lin(out, &format!("{prefix}.o"))
    }

    fn ffn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let hidden = self.lin(x, &format!("{prefix}.fc1"))?;
        let hidden = self.g.gelu(hidden)?;
        self.lin(hidden, &format!("{prefix}.fc2"))
    }

    /// Pre-norm residual sublayer: `x + dropout(f(ln(x)))`.
    fn residual(&mut self, x: Var, ln: &str, f: impl FnOnce(&mut Self, Var) -> Result<Var>) -> Result<Var> {
        let h = self.ln(x, ln)?;
        let y = f(self, h)?;
        let y = self.drop(y)?;
        self.g.add(x, y)
    }

    /// `conv_layers` rounds of GELU(conv); pad rows are zeroed before each conv
    /// when `masked` so padding never reaches real positions.
    fn conv_stack(&mut self, mut x: Var, prefix: &str, masked: bool) -> Result<Var> {
        for i in 0..self.cfg.conv_layers {
            if masked {
                x = self.mask_rows(x)?;
            }
            let (w, b) = (self.p(&format!("{prefix}{i}.w"))?, self.p(&format!("{prefix}{i}.b"))?);
            x = self.g.conv1d_same(x, w, b)?;
            x = self.g.gelu(x)?;
        }
        Ok(x)
    }

    /// Layer norm and a `D -> 1` regression layer; the output keeps a trailing axis of 1.
    fn head(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let h = self.ln(x, &format!("{prefix}.ln"))?;
        self.lin(h, prefix)
    }

    /// Acoustic embeddings `X [B, T, D]`, zero at padded positions.
    pub fn encode(&mut self) -> Result<Var> {
        let batch = self.batch;
        let (b, t) = (batch.size, batch.len);
        let gop = self.lin(self.input, "enc.gop_proj")?;
        let phone = self.g.embedding(self.p("enc.phone_emb")?, &batch.phones, &[b, t])?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = self.g.embedding(self.p("enc.pos_emb")?, &positions, &[b, t])?;
        let x = self.g.add(gop, phone)?;
        let x = self.g.add(x, pos)?;
        let mut x = self.drop(x)?;
        for i in 0..self.cfg.enc_layers {
            let attn = format!("enc.layer{i}.attn");
            x =
                self.residual(x, &format!("enc.layer{i}.ln1"), |f, h| f.mha(&attn, h, h, Some(&batch.mask)))?;
            let ffn = format!("enc.layer{i}.ffn");
            x = self.residual(x, &format!("enc.layer{i}.ln2"), |f, h| f.ffn(&ffn, h))?;
        }
        let x = self.ln(x, "enc.ln_f")?;
        self.mask_rows(x)
    }

    /// Per-granularity queries from the pooled embeddings, self-attention across
    /// the three query slots, cross-attention to `x`, then a feed-forward block.
    pub fn interactive_attention(&mut self, x: Var) -> Result<InteractionHeads> {
        let mask = &self.batch.mask;
        let pooled = self.g.masked_mean(x, mask)?;
        let mut queries = Vec::with_capacity(GRANULARITIES.len());
        for g in GRANULARITIES {
            queries.push(self.lin(pooled, &format!("iam.query_{g}"))?);
        }
        let q = self.g.stack(&queries, 1)?;
        let q = self.residual(q, "iam.ln_self", |f, h| f.mha("iam.self_attn", h, h, None))?;
        let q = self.residual(q, "iam.ln_cross", |f, h| f.mha("iam.cross_attn", h, x, Some(mask)))?;
        let q = self.residual(q, "iam.ln_ffn", |f, h| f.ffn("iam.ffn", h))?;
        let mut heads = [q; 3];
        for (i, g) in GRANULARITIES.iter().enumerate() {
            let slot = self.g.select(q, 1, i)?;
            heads[i] = self.lin(slot, &format!("iam.out_{g}"))?;
        }
        Ok(InteractionHeads { phn: heads[0], word: heads[1], utt: heads[2] })
    }

    fn broadcast_t(&mut self, h: Var) -> Result<Var> {
        self.g.expand(h, 1, self.batch.len)
    }

    /// Phoneme accuracy `[B, T]` from `conv(X + H_phn)`.
    pub fn score_phoneme(&mut self, x: Var, heads: &InteractionHeads) -> Result<Var> {
        let f = if self.cfg.use_iam_phn {
            let h = self.broadcast_t(heads.phn)?;
            self.g.add(x, h)?
        } else {
            x
        };
        let f = self.conv_stack(f, "phn.conv", true)?;
        let s = self.head(f, "phn.head")?;
        self.g.reshape(s, &[self.batch.size, self.batch.len])
    }

    /// Word scores `[B, W, 3]`: aspect attention over `X + S_phn + H_word`,
    /// per-aspect conv and heads, then the mean over each word's phones.
    pub fn score_word(&mut self, x: Var, s_phn: Var, heads: &InteractionHeads) -> Result<Var> {
        let (b, t, d) = (self.batch.size, self.batch.len, self.cfg.embed_dim);
        let mut terms = Vec::new();
        if self.cfg.use_residual {
            terms.push(x);
        }
        if self.cfg.use_hierarchy {
            let injected = match self.cfg.phone_score_injection {
                PhoneScoreInjection::Broadcast => self.g.expand(s_phn, 2, d)?,
                PhoneScoreInjection::Projected => {
                    let col = self.g.reshape(s_phn, &[b, t, 1])?;
                    self.lin(col, "word.phn_proj")?
                }
            };
            terms.push(injected);
        }
        if self.cfg.use_iam_word {
            terms.push(self.broadcast_t(heads.word)?);
        }
        let xw = self.sum_or_zeros(&terms)?;

        let mut channels = Vec::with_capacity(WORD_ASPECTS);
        for a in 0..WORD_ASPECTS {
            channels.push(self.lin(xw, &format!("word.aspect{a}"))?);
        }
        let stacked = self.g.stack(&channels, 2)?;
        let slots = self.g.reshape(stacked, &[b * t, WORD_ASPECTS, d])?;
        let slots = self.residual(slots, "word.ln_aspect", |f, h| f.mha("word.aspect_attn", h, h, None))?;
        let slots = self.g.reshape(slots, &[b, t, WORD_ASPECTS, d])?;

        let mut per_aspect = Vec::with_capacity(WORD_ASPECTS);
        for a in 0..WORD_ASPECTS {
            let c = self.g.select(slots, 2, a)?;
            let c = self.conv_stack(c, &format!("word.conv{a}."), true)?;
            per_aspect.push(self.head(c, &format!("word.head{a}"))?);
        }
        let positional = self.g.concat(&per_aspect, 2)?;
        self.g.segment_mean(positional, &self.batch.word_spans, self.batch.words)
    }

    /// Utterance scores `[B, 5]`: learnable aspect queries decoded against
    /// `X + proj(S_word) + H_utt`, conv over the query axis, one head per aspect.
    pub fn score_utterance(&mut self, x: Var, s_word: Var, heads: &InteractionHeads) -> Result<Var> {
        let batch = self.batch;
        let mut terms = Vec::new();
        if self.cfg.use_residual {
            terms.push(x);
        }
        if self.cfg.use_hierarchy {
            let expanded = self.g.gather_rows(s_word, &batch.word_index, batch.len)?;
            terms.push(self.lin(expanded, "utt.word_proj")?);
        }
        if self.cfg.use_iam_utt {
            terms.push(self.broadcast_t(heads.utt)?);
        }
        let xu = self.sum_or_zeros(&terms)?;
        let memory = self.ln(xu, "utt.ln_mem")?;

        let mut q = self.g.expand(self.p("utt.queries")?, 0, batch.size)?;
        for i in 0..self.cfg.dec_layers {
            let (sa, ca, ffn) = (
                format!("utt.dec{i}.self_attn"),
                format!("utt.dec{i}.cross_attn"),
                format!("utt.dec{i}.ffn"),
            );
            q = self.residual(q, &format!("utt.dec{i}.ln1"), |f, h| f.mha(&sa, h, h, None))?;
            q = self
                .residual(q, &format!("utt.dec{i}.ln2"), |f, h| f.mha(&ca, h, memory, Some(&batch.mask)))?;
            q = self.residual(q, &format!("utt.dec{i}.ln3"), |f, h| f.ffn(&ffn, h))?;
        }
        let q = self.ln(q, "utt.ln_f")?;
        let q = self.conv_stack(q, "utt.conv", false)?;
        let mut scores = Vec::with_capacity(UTT_ASPECTS);
        for n in 0..UTT_ASPECTS {
            let slot = self.g.select(q, 1, n)?;
            scores.push(self.head(slot, &format!("utt.head{n}"))?);
        }
        self.g.concat(&scores, 1)
    }

    pub fn run(&mut self) -> Result<ScoreSet> {
        let x = self.encode()?;
        let heads = self.interactive_attention(x)?;
        let phn = self.score_phoneme(x, &heads)?;
        let word = self.score_word(x, phn, &heads)?;
        let utt = self.score_utterance(x, word, &heads)?;
        Ok(ScoreSet { phn, word, utt })
    }
}
