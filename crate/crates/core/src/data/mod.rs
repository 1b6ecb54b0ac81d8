//! Utterance samples, batching, synthetic corpora and score correlations.
//!
//! All in-memory scores live on the 0–2 scale. Word and utterance scores arrive
//! on a 0–10 scale in corpus files and are mapped through [`rescale`] on load.

mod batch;
mod correlation;
mod synth;

pub use batch::{make_batches, sequential_batches, Batch, PAD_PHONE};
pub use correlation::{correlation_matrix, CorrelationMatrix, CORRELATION_FIELDS};
pub use synth::{synth_generate, Coupling, NoiseStd, SynthConfig};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::{GOP_DIM, NUM_PHONES, UTT_ASPECTS, WORD_ASPECTS};

/// Upper end of the score scale used everywhere in memory.
pub const SCORE_MAX: f64 = 2.0;
/// Upper end of the word/utterance scale in corpus files.
pub const RAW_SCORE_MAX: f64 = 10.0;

/// Maps a 0–10 word/utterance score onto the 0–2 scale.
pub fn rescale(raw: f64) -> Result<f64> {
    if !(0.0..=RAW_SCORE_MAX).contains(&raw) {
        return Err(Error::validation(None, "score", format!("{raw} outside [0, {RAW_SCORE_MAX}]")));
    }
    Ok(raw / 5.0)
}

/// Inverse of [`rescale`], used when writing corpus files.
pub fn unscale(score: f64) -> f64 {
    score * 5.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WordScores {
    pub accuracy: f64,
    pub stress: f64,
    pub total: f64,
}

impl WordScores {
    /// In aspect order: accuracy, stress, total.
    pub fn to_array(self) -> [f64; WORD_ASPECTS] {
        [self.accuracy, self.stress, self.total]
    }

    pub fn mean(self) -> f64 {
        (self.accuracy + self.stress + self.total) / 3.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UttScores {
    pub accuracy: f64,
    pub completeness: f64,
    pub fluency: f64,
    pub prosodic: f64,
    pub total: f64,
}

impl UttScores {
    /// In aspect order: accuracy, completeness, fluency, prosodic, total.
    pub fn to_array(self) -> [f64; UTT_ASPECTS] {
        [self.accuracy, self.completeness, self.fluency, self.prosodic, self.total]
    }
}

/// One scored utterance: a canonical phone sequence with GOP features and
/// ground-truth scores at every granularity.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSample {
    pub phones: Vec<usize>,
    pub gop: Vec<[f64; GOP_DIM]>,
    /// Word index of every phone; starts at 0 and increases in unit steps.
    pub word_id: Vec<usize>,
    pub phone_scores: Vec<f64>,
    pub word_scores: Vec<WordScores>,
    pub utt_scores: UttScores,
}

fn check_score(record: Option<usize>, field: &str, v: f64) -> Result<()> {
    if !(0.0..=SCORE_MAX).contains(&v) {
        return Err(Error::validation(record, field, format!("score {v} outside [0, {SCORE_MAX}]")));
    }
    Ok(())
}

impl UtteranceSample {
    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.word_scores.len()
    }

    /// Half-open phone spans of each word.
    pub fn word_spans(&self) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = Vec::with_capacity(self.num_words());
        for (p, &w) in self.word_id.iter().enumerate() {
            if w == spans.len() {
                spans.push((p, p + 1));
            } else {
                spans[w].1 = p + 1;
            }
        }
        spans
    }

    /// Checks every schema invariant; `record` is reported in errors.
    pub fn validate(&self, record: Option<usize>) -> Result<()> {
        let t = self.phones.len();
        if t == 0 {
            return Err(Error::validation(record, "phones", "empty utterance"));
        }
        for (field, len) in [
            ("gop", self.gop.len()),
            ("word_id", self.word_id.len()),
            ("phone_scores", self.phone_scores.len()),
        ] {
            if len != t {
                return Err(Error::validation(record, field, format!("length {len}, expected {t}")));
            }
        }
        if let Some(&p) = self.phones.iter().find(|&&p| p >= NUM_PHONES) {
            return Err(Error::validation(record, "phones", format!("phone id {p} outside 0..{NUM_PHONES}")));
        }
        if self.word_id[0] != 0 {
            return Err(Error::validation(record, "word_id", "must start at 0"));
        }
        for w in self.word_id.windows(2) {
            if w[1] != w[0] && w[1] != w[0] + 1 {
                return Err(Error::validation(record, "word_id", format!("jump from {} to {}", w[0], w[1])));
            }
        }
        let words = self.word_id[t - 1] + 1;
        if words != self.word_scores.len() {
            return Err(Error::validation(
                record,
                "word_scores",
                format!("{} entries for {words} words", self.word_scores.len()),
            ));
        }
        if self.gop.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation(record, "gop", "non-finite feature"));
        }
        for &s in &self.phone_scores {
            check_score(record, "phone_scores", s)?;
        }
        for ws in &self.word_scores {
            for s in ws.to_array() {
                check_score(record, "word_scores", s)?;
            }
        }
        for s in self.utt_scores.to_array() {
            check_score(record, "utt_scores", s)?;
        }
        Ok(())
    }
}
