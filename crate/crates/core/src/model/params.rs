use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, PhoneScoreInjection};
use crate::data::SCORE_MAX;
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::{GOP_DIM, NUM_PHONES, UTT_ASPECTS, WORD_ASPECTS};

pub const GRANULARITIES: [&str; 3] = ["phn", "word", "utt"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Const(f64),
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier {
        fan_in: usize,
        fan_out: usize,
    },
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn init(&self, seed: u64) -> Tensor {
        let mut rng = stream(seed, &format!("init/{}", self.name), 0);
        let n = self.numel();
        let data = match self.init {
            Init::Const(c) => vec![c; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                })
                .collect(),
        };
        Tensor::new(&self.shape, data).expect("spec shape matches data length")
    }
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, prefix: &str, din: usize, dout: usize) {
        self.push(format!("{prefix}.w"), vec![din, dout], Init::Xavier { fan_in: din, fan_out: dout });
        self.push(format!("{prefix}.b"), vec![dout], Init::Const(0.0));
    }

    fn norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), vec![d], Init::Const(1.0));
        self.push(format!("{prefix}.beta"), vec![d], Init::Const(0.0));
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        // A key bias adds q·b to every score of a query row; softmax cancels it,
        // so the key projection has no bias.
        self.push(format!("{prefix}.k.w"), vec![d, d], Init::Xavier { fan_in: d, fan_out: d });
        for p in ["q", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, mult: usize) {
        self.linear(&format!("{prefix}.fc1"), d, mult * d);
        self.linear(&format!("{prefix}.fc2"), mult * d, d);
    }

    fn conv(&mut self, prefix: &str, k: usize, d: usize) {
        self.push(format!("{prefix}.w"), vec![k, d, d], Init::Xavier { fan_in: k * d, fan_out: k * d });
        self.push(format!("{prefix}.b"), vec![d], Init::Const(0.0));
    }

    /// Layer norm then a `d -> 1` regression layer starting at the middle of the
    /// score range.
    fn head(&mut self, prefix: &str, d: usize) {
        self.norm(&format!("{prefix}.ln"), d);
        self.push(format!("{prefix}.w"), vec![d, 1], Init::Xavier { fan_in: d, fan_out: 1 });
        self.push(format!("{prefix}.b"), vec![1], Init::Const(SCORE_MAX / 2.0));
    }
}

/// Every parameter of the network, sorted by name.
pub fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let d = c.embed_dim;
    let k = c.conv_kernel;
    let mut s = Specs(Vec::new());

    s.linear("enc.gop_proj", GOP_DIM, d);
    s.push("enc.phone_emb".into(), vec![NUM_PHONES + 1, d], Init::Normal(0.1));
    s.push("enc.pos_emb".into(), vec![c.max_len, d], Init::Normal(0.1));
    for i in 0..c.enc_layers {
        s.norm(&format!("enc.layer{i}.ln1"), d);
        s.attention(&format!("enc.layer{i}.attn"), d);
        s.norm(&format!("enc.layer{i}.ln2"), d);
        s.ffn(&format!("enc.layer{i}.ffn"), d, c.ffn_mult);
    }
    s.norm("enc.ln_f", d);

    for g in GRANULARITIES {
        s.linear(&format!("iam.query_{g}"), d, d);
        s.linear(&format!("iam.out_{g}"), d, d);
    }
    s.norm("iam.ln_self", d);
    s.attention("iam.self_attn", d);
    s.norm("iam.ln_cross", d);
    s.attention("iam.cross_attn", d);
    s.norm("iam.ln_ffn", d);
    s.ffn("iam.ffn", d, c.ffn_mult);

    for i in 0..c.conv_layers {
        s.conv(&format!("phn.conv{i}"), k, d);
    }
    s.head("phn.head", d);

    if c.phone_score_injection == PhoneScoreInjection::Projected {
        s.linear("word.phn_proj", 1, d);
    }
    for a in 0..WORD_ASPECTS {
        s.linear(&format!("word.aspect{a}"), d, d);
        for i in 0..c.conv_layers {
            s.conv(&format!("word.conv{a}.{i}"), k, d);
        }
        s.head(&format!("word.head{a}"), d);
    }
    s.norm("word.ln_aspect", d);
    s.attention("word.aspect_attn", d);

    s.linear("utt.word_proj", WORD_ASPECTS, d);
    s.norm("utt.ln_mem", d);
    s.push("utt.queries".into(), vec![UTT_ASPECTS, d], Init::Normal(1.0));
    for i in 0..c.dec_layers {
        s.norm(&format!("utt.dec{i}.ln1"), d);
        s.attention(&format!("utt.dec{i}.self_attn"), d);
        s.norm(&format!("utt.dec{i}.ln2"), d);
        s.attention(&format!("utt.dec{i}.cross_attn"), d);
        s.norm(&format!("utt.dec{i}.ln3"), d);
        s.ffn(&format!("utt.dec{i}.ffn"), d, c.ffn_mult);
    }
    s.norm("utt.ln_f", d);
    for i in 0..c.conv_layers {
        s.conv(&format!("utt.conv{i}"), k, d);
    }
    for n in 0..UTT_ASPECTS {
        s.head(&format!("utt.head{n}"), d);
    }

    let mut specs = s.0;
    specs.sort_by(|a, b| a.name.cmp(&b.name));
    specs
}
