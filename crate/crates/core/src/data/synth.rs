//! Synthetic corpora with planted cross-granularity structure.
//!
//! Each utterance draws a latent proficiency `u ~ U(0, 1)` and each word a
//! context latent `z ~ N(0, 1)`:
//!
//! - phone score `= clip(2u + s·z + ε)`: the word latent shifts every phone of its
//!   word, so it is visible only through phone-level evidence
//! - word accuracy `= clip(c·mean(phone scores) + (1 − c)·2u + ε)`
//! - word stress `= clip(1 + a·(2u − 1) + b·z·(2u − 1) + k·y + ε)`; the effect of
//!   the word latent flips sign with the utterance latent, so stress is only
//!   predictable by combining word-local and utterance-global evidence. The cue
//!   `y ~ N(0, 1)` is a word-level acoustic trait with no effect on phone scores
//! - word total `= clip(mean(accuracy, stress) + ε)`
//! - utterance accuracy, fluency, prosody and total are affine in word-score means;
//!   completeness is 2 with probability `complete_prob`
//! - GOP rows are a fixed per-phone embedding, plus the phone score along a
//!   direction specific to the canonical phone, plus `y` along a shared word-cue
//!   direction, plus noise.
//!
//! Every utterance has its own RNG stream derived from `(seed, index)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{UttScores, UtteranceSample, WordScores, SCORE_MAX};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::{GOP_DIM, NUM_PHONES};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NoiseStd {
    pub phone: f64,
    pub word: f64,
    pub utt: f64,
    pub gop: f64,
}

impl Default for NoiseStd {
    fn default() -> Self {
        NoiseStd { phone: 0.1, word: 0.1, utt: 0.1, gop: 0.3 }
    }
}

impl NoiseStd {
    pub fn zero() -> Self {
        NoiseStd { phone: 0.0, word: 0.0, utt: 0.0, gop: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct Coupling {
    /// Share of word accuracy explained by the mean of its phone scores.
    pub word_accuracy_from_phones: f64,
    /// Weight of the utterance latent in word stress.
    pub stress_utterance: f64,
    /// Weight of the word latent × utterance latent interaction in word stress.
    pub stress_interaction: f64,
    /// Slope of utterance aspects on word-score means.
    pub utt_from_words: f64,
    /// Shift of a word's phone scores per unit of its latent.
    pub phone_word_shift: f64,
    /// Weight of the acoustic word cue in word stress.
    pub stress_cue: f64,
}

impl Default for Coupling {
    fn default() -> Self {
        Coupling {
            word_accuracy_from_phones: 1.0,
            stress_utterance: 0.4,
            stress_interaction: 0.6,
            utt_from_words: 0.9,
            phone_word_shift: 0.5,
            stress_cue: 0.3,
        }
    }
}

impl Coupling {
    /// Word accuracy is the mean of its phone scores and utterance aspects equal
    /// word-score means.
    pub fn identity() -> Self {
        Coupling {
            word_accuracy_from_phones: 1.0,
            stress_utterance: 0.0,
            stress_interaction: 0.0,
            utt_from_words: 1.0,
            phone_word_shift: 0.0,
            stress_cue: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SynthConfig {
    pub n_utterances: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Inclusive range of phones per word.
    pub phones_per_word: (usize, usize),
    pub noise_std: NoiseStd,
    pub coupling: Coupling,
    /// Probability that an utterance receives full completeness.
    pub complete_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 5000,
            min_words: 3,
            max_words: 10,
            phones_per_word: (1, 4),
            noise_std: NoiseStd::default(),
            coupling: Coupling::default(),
            complete_prob: 0.995,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!(
                "word range {}..={} is empty or starts at 0",
                self.min_words, self.max_words
            ));
        }
        let (lo, hi) = self.phones_per_word;
        if lo == 0 || lo > hi {
            return bad(format!("phones_per_word range {lo}..={hi} is empty or starts at 0"));
        }
        let n = self.noise_std;
        if [n.phone, n.word, n.utt, n.gop].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad(format!("noise_std must be finite and non-negative: {n:?}"));
        }
        let c = self.coupling;
        if [
            c.word_accuracy_from_phones,
            c.stress_utterance,
            c.stress_interaction,
            c.utt_from_words,
            c.phone_word_shift,
            c.stress_cue,
        ]
        .iter()
        .any(|v| !v.is_finite())
        {
            return bad(format!("coupling weights must be finite: {c:?}"));
        }
        if !(0.0..=1.0).contains(&self.complete_prob) {
            return bad(format!("complete_prob {} outside [0, 1]", self.complete_prob));
        }
        Ok(())
    }

    /// Longest utterance the configuration can produce.
    pub fn max_phones(&self) -> usize {
        self.max_words * self.phones_per_word.1
    }
}

struct Embedding {
    phone: Vec<[f64; GOP_DIM]>,
    score: Vec<[f64; GOP_DIM]>,
    word_cue: [f64; GOP_DIM],
}

impl Embedding {
    fn new(seed: u64) -> Self {
        let mut rng = stream(seed, "synth_embedding", 0);
        let mut draw = |scale: f64| {
            let mut v = [0.0; GOP_DIM];
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = scale * z;
            }
            v
        };
        let phone = (0..NUM_PHONES).map(|_| draw(0.5)).collect();
        let dir = 3.0 / libm::sqrt(GOP_DIM as f64);
        let score = (0..NUM_PHONES).map(|_| draw(dir)).collect();
        Embedding { phone, score, word_cue: draw(dir) }
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(0.0, SCORE_MAX)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Generates `cfg.n_utterances` utterances; fully determined by `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<UtteranceSample>> {
    cfg.validate()?;
    let emb = Embedding::new(cfg.seed);
    (0..cfg.n_utterances).map(|i| generate_one(cfg, &emb, i)).collect()
}

fn generate_one(cfg: &SynthConfig, emb: &Embedding, index: usize) -> Result<UtteranceSample> {
    let mut rng = stream(cfg.seed, "synth_utterance", index as u64);
    let normal = |rng: &mut crate::rng::Rng, std: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        std * z
    };
    let noise = cfg.noise_std;
    let c = cfg.coupling;

    let u: f64 = rng.random();
    let centered = 2.0 * u - 1.0;
    let n_words = rng.random_range(cfg.min_words..=cfg.max_words);

    let mut s = UtteranceSample {
        phones: Vec::new(),
        gop: Vec::new(),
        word_id: Vec::new(),
        phone_scores: Vec::new(),
        word_scores: Vec::with_capacity(n_words),
        utt_scores: UttScores { accuracy: 0.0, completeness: 0.0, fluency: 0.0, prosodic: 0.0, total: 0.0 },
    };
    for w in 0..n_words {
        let n_phones = rng.random_range(cfg.phones_per_word.0..=cfg.phones_per_word.1);
        let z = normal(&mut rng, 1.0);
        let cue = normal(&mut rng, 1.0);
        let start = s.phones.len();
        for _ in 0..n_phones {
            let phone = rng.random_range(0..NUM_PHONES);
            let score = clip(2.0 * u + c.phone_word_shift * z + normal(&mut rng, noise.phone));
            let mut row = emb.phone[phone];
            for ((r, e), w) in row.iter_mut().zip(&emb.score[phone]).zip(&emb.word_cue) {
                *r += score * e + cue * w + normal(&mut rng, noise.gop);
            }
            s.phones.push(phone);
            s.gop.push(row);
            s.word_id.push(w);
            s.phone_scores.push(score);
        }
        let phone_mean = mean(s.phone_scores[start..].iter().copied());
        let wa = c.word_accuracy_from_phones;
        let accuracy = clip(wa * phone_mean + (1.0 - wa) * 2.0 * u + normal(&mut rng, noise.word));
        let stress = clip(
            1.0 + c.stress_utterance * centered
                + c.stress_interaction * z * centered
                + c.stress_cue * cue
                + normal(&mut rng, noise.word),
        );
        let total = clip(0.5 * (accuracy + stress) + normal(&mut rng, noise.word));
        s.word_scores.push(WordScores { accuracy, stress, total });
    }

    let slope = c.utt_from_words;
    let affine = |m: f64| (1.0 - slope) + slope * m;
    let w_avg = mean(s.word_scores.iter().map(|w| w.mean()));
    let total_mean = mean(s.word_scores.iter().map(|w| w.total));
    let stress_mean = mean(s.word_scores.iter().map(|w| w.stress));
    let accuracy = affine(w_avg);
    let fluency = affine(total_mean);
    let prosodic = affine(stress_mean);
    let total = (accuracy + fluency + prosodic) / 3.0;
    let complete = rng.random::<f64>() < cfg.complete_prob;
    s.utt_scores = UttScores {
        accuracy: clip(accuracy + normal(&mut rng, noise.utt)),
        fluency: clip(fluency + normal(&mut rng, noise.utt)),
        prosodic: clip(prosodic + normal(&mut rng, noise.utt)),
        total: clip(total + normal(&mut rng, noise.utt)),
        completeness: if complete { SCORE_MAX } else { clip(0.6 + 1.0 * u + normal(&mut rng, noise.utt)) },
    };
    s.validate(Some(index))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::pcc;

    fn noiseless(n: usize) -> SynthConfig {
        SynthConfig {
            n_utterances: n,
            noise_std: NoiseStd::zero(),
            coupling: Coupling::identity(),
            seed: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_word_accuracy_is_phone_mean() {
        let data = synth_generate(&noiseless(50)).unwrap();
        for s in &data {
            for (w, (start, end)) in s.word_spans().into_iter().enumerate() {
                let m = s.phone_scores[start..end].iter().sum::<f64>() / (end - start) as f64;
                assert_eq!(s.word_scores[w].accuracy, m);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig { n_utterances: 40, seed: 77, ..SynthConfig::default() };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 78, ..cfg };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn phone_mean_predicts_utterance_accuracy() {
        let cfg = SynthConfig {
            n_utterances: 500,
            noise_std: NoiseStd { phone: 0.1, word: 0.1, utt: 0.1, gop: 0.1 },
            seed: 3,
            ..SynthConfig::default()
        };
        let data = synth_generate(&cfg).unwrap();
        let p: Vec<f64> = data.iter().map(|s| mean(s.phone_scores.iter().copied())).collect();
        let a: Vec<f64> = data.iter().map(|s| s.utt_scores.accuracy).collect();
        let r = pcc(&p, &a).unwrap().unwrap();
        assert!(r > 0.8, "pcc {r}");
    }

    #[test]
    fn completeness_is_skewed() {
        let cfg = SynthConfig { n_utterances: 2000, seed: 1, ..SynthConfig::default() };
        let data = synth_generate(&cfg).unwrap();
        let full = data.iter().filter(|s| s.utt_scores.completeness == SCORE_MAX).count();
        assert!((1975..2000).contains(&full), "{full}");
    }

    #[test]
    fn empty_and_invalid_configs() {
        let cfg = SynthConfig { n_utterances: 0, ..SynthConfig::default() };
        assert!(synth_generate(&cfg).unwrap().is_empty());
        let cfg = SynthConfig { min_words: 0, ..SynthConfig::default() };
        assert!(synth_generate(&cfg).is_err());
        let cfg = SynthConfig {
            noise_std: NoiseStd { phone: -1.0, ..NoiseStd::default() },
            ..SynthConfig::default()
        };
        assert!(synth_generate(&cfg).is_err());
    }
}
