//! The HIA network: GOP/phone/position embedding, a pre-norm Transformer
//! encoder, the interactive attention module (IAM) and residual hierarchical
//! score heads for phonemes, words and utterances.
//!
//! Parameters live in a [`ParamStore`] keyed by name. Their shapes depend only on
//! dimensions in [`ModelConfig`], never on the ablation flags, so a checkpoint
//! trained with one wiring loads under any other.

mod forward;
mod params;


use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

pub use forward::{Forward, InteractionHeads, ScoreSet};
pub use params::{param_specs, Init, ParamSpec};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::tensor::{grad_check, GradCheckReport, Graph, Mode, Tensor, Var};

pub type ParamStore = BTreeMap<String, Tensor>;

/// How the per-position phoneme score enters the word branch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PhoneScoreInjection {
    /// The scalar is added to every channel.
    #[default]
    Broadcast,
    /// A learned `1 -> D` projection.
    Projected,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width as a multiple of `embed_dim`.
    pub ffn_mult: usize,
    pub conv_kernel: usize,
    pub conv_layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub use_iam_phn: bool,
    pub use_iam_word: bool,
    pub use_iam_utt: bool,
    pub use_residual: bool,
    pub use_hierarchy: bool,
    pub phone_score_injection: PhoneScoreInjection,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 48,
            enc_layers: 3,
            dec_layers: 3,
            n_heads: 1,
            ffn_mult: 4,
            conv_kernel: 5,
            conv_layers: 1,
            dropout: 0.1,
            max_len: 50,
            use_iam_phn: true,
            use_iam_word: true,
            use_iam_utt: true,
            use_residual: true,
            use_hierarchy: true,
            phone_score_injection: PhoneScoreInjection::Broadcast,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.embed_dim == 0 || self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.ffn_mult == 0 || self.max_len == 0 {
            return bad(format!("ffn_mult {} and max_len {} must be positive", self.ffn_mult, self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Same dimensions with every ablation flag cleared: encoder plus
    /// independent heads.
    pub fn parallel(&self) -> Self {
        ModelConfig {
            use_iam_phn: false,
            use_iam_word: false,
            use_iam_utt: false,
            use_residual: false,
            use_hierarchy: false,
            ..self.clone()
        }
    }
}

/// Predictions of one forward pass, detached from the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    /// `[B, T]`
    pub phn: Tensor,
    /// `[B, W, 3]`
    pub word: Tensor,
    /// `[B, 5]`
    pub utt: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hia {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Hia {
    /// Fresh parameters; each one is drawn from its own stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = param_specs(&config).into_iter().map(|s| (s.name.clone(), s.init(seed))).collect();
        Ok(Hia { config, params })
    }

    /// Wraps existing parameters after checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        for s in &specs {
            let Some(t) = params.get(&s.name) else {
                return Err(Error::Lookup(format!("missing parameter {}", s.name)));
            };
            if t.shape() != &s.shape[..] {
                return Err(Error::shape(
                    "from_params",
                    format!("{}: expected {:?}, found {:?}", s.name, s.shape, t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("parameter {} holds non-finite values", s.name)));
            }
        }
        if params.len() != specs.len() {
            let extra = params.keys().find(|k| !specs.iter().any(|s| &s.name == *k));
            return Err(Error::Lookup(format!("unexpected parameter {}", extra.map_or("?", |s| s.as_str()))));
        }
        Ok(Hia { config, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Eval-mode predictions for one batch.
    pub fn predict(&self, batch: &Batch) -> Result<Predictions> {
        let mut g = Graph::new();
        let mut rng = crate::rng::stream(0, "unused", 0);
        let mut f = Forward::new(self, &mut g, batch, Mode::Eval, &mut rng, false)?;
        let s = f.run()?;
        Ok(Predictions {
            phn: g.value(s.phn).clone(),
            word: g.value(s.word).clone(),
            utt: g.value(s.utt).clone(),
        })
    }

    /// Central-difference check of the eval-mode total loss on `batch` over every
    /// parameter element. Parameters are visited in name order.
    pub fn grad_check(&self, batch: &Batch, h: f64) -> Result<GradCheckReport> {
        let names: alloc::vec::Vec<&String> = self.params.keys().collect();
        let values: alloc::vec::Vec<Tensor> = self.params.values().cloned().collect();
        let gop = Tensor::new(&[batch.size, batch.len, crate::GOP_DIM], batch.gop.clone())?;
        grad_check(
            |g: &mut Graph, vars: &[Var]| {
                let params = names.iter().zip(vars).map(|(n, &v)| (String::clone(n), v)).collect();
                let input = g.constant(gop.clone());
                let mut rng = crate::rng::stream(0, "unused", 0);
                let mut f = Forward::with_vars(&self.config, g, batch, Mode::Eval, &mut rng, params, input)?;
                let scores = f.run()?;
                Ok(crate::train::total_loss(g, &scores, batch)?.0)
            },
            &values,
            h,
        )
    }
}
