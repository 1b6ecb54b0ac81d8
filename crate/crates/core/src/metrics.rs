//! MSE and Pearson correlation, pooled per aspect across a corpus.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::data::{sequential_batches, Batch, UtteranceSample};
use crate::error::{Error, Result};
use crate::model::{Hia, Predictions};
use crate::{UTT_ASPECTS, WORD_ASPECTS};

pub const WORD_ASPECT_NAMES: [&str; WORD_ASPECTS] = ["accuracy", "stress", "total"];
pub const UTT_ASPECT_NAMES: [&str; UTT_ASPECTS] =
    ["accuracy", "completeness", "fluency", "prosodic", "total"];

/// `(granularity, aspect)` of the report columns, in table order.
pub const COLUMNS: [(&str, &str); 1 + WORD_ASPECTS + UTT_ASPECTS] = [
    ("phoneme", "accuracy"),
    ("word", "accuracy"),
    ("word", "stress"),
    ("word", "total"),
    ("utterance", "accuracy"),
    ("utterance", "completeness"),
    ("utterance", "fluency"),
    ("utterance", "prosodic"),
    ("utterance", "total"),
];

/// Pearson correlation. `Ok(None)` when either input has zero variance.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!("pcc: lengths {} and {} differ", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::Contract(format!("pcc needs at least 2 pairs, got {}", pred.len())));
    }
    let constant = |xs: &[f64]| xs.iter().all(|&v| v == xs[0]);
    if constant(pred) || constant(truth) {
        return Ok(None);
    }
    let n = pred.len() as f64;
    let ms = pred.iter().sum::<f64>() / n;
    let my = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&s, &y) in pred.iter().zip(truth) {
        let (ds, dy) = (s - ms, y - my);
        sxy += ds * dy;
        sxx += ds * ds;
        syy += dy * dy;
    }
    let denom = libm::sqrt(sxx) * libm::sqrt(syy);
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / denom).clamp(-1.0, 1.0)))
}

/// Mean squared error over all pairs.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!("mse: lengths {} and {}", pred.len(), truth.len())));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(s, y)| (s - y) * (s - y)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AspectMetric {
    /// `None` when the predictions or the targets have zero variance.
    pub pcc: Option<f64>,
    pub mse: f64,
    pub n: usize,
}

/// Corpus-level scores: one phoneme column, three word columns and five
/// utterance columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub phoneme: AspectMetric,
    pub word: [AspectMetric; WORD_ASPECTS],
    pub utterance: [AspectMetric; UTT_ASPECTS],
}

impl MetricReport {
    /// Corpus-level training objective: phoneme MSE plus the mean word and
    /// utterance aspect MSEs.
    pub fn total_loss(&self) -> f64 {
        let word = self.word.iter().map(|m| m.mse).sum::<f64>() * (1.0 / WORD_ASPECTS as f64);
        let utt = self.utterance.iter().map(|m| m.mse).sum::<f64>() * (1.0 / UTT_ASPECTS as f64);
        self.phoneme.mse + word + utt
    }

    /// `(granularity, aspect, metric)` in table column order.
    pub fn columns(&self) -> Vec<(&'static str, &'static str, AspectMetric)> {
        let metrics = core::iter::once(self.phoneme).chain(self.word).chain(self.utterance);
        COLUMNS.iter().zip(metrics).map(|(&(g, a), m)| (g, a, m)).collect()
    }
}

/// Pooled `(prediction, target)` pairs per aspect.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PooledPredictions {
    pub phoneme: Vec<(f64, f64)>,
    pub word: [Vec<(f64, f64)>; WORD_ASPECTS],
    pub utterance: [Vec<(f64, f64)>; UTT_ASPECTS],
}

fn aspect_metric(pairs: &[(f64, f64)]) -> Result<AspectMetric> {
    // Sorting makes the pooled sums independent of corpus order.
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
    let (pred, truth): (Vec<f64>, Vec<f64>) = sorted.into_iter().unzip();
    Ok(AspectMetric { pcc: pcc(&pred, &truth)?, mse: mse(&pred, &truth)?, n: pred.len() })
}

impl PooledPredictions {
    pub fn report(&self) -> Result<MetricReport> {
        let word =
            [aspect_metric(&self.word[0])?, aspect_metric(&self.word[1])?, aspect_metric(&self.word[2])?];
        let mut utterance = [AspectMetric { pcc: None, mse: 0.0, n: 0 }; UTT_ASPECTS];
        for (slot, pairs) in utterance.iter_mut().zip(&self.utterance) {
            *slot = aspect_metric(pairs)?;
        }
        Ok(MetricReport { phoneme: aspect_metric(&self.phoneme)?, word, utterance })
    }
}

impl PooledPredictions {
    /// Runs `model` in eval mode over `samples` and collects every real
    /// phoneme, word and utterance score next to its target.
    pub fn collect(model: &Hia, samples: &[UtteranceSample], batch_size: usize) -> Result<Self> {
        let mut pooled = PooledPredictions::default();
        for batch in sequential_batches(samples, batch_size.max(1), model.config.max_len)? {
            let pred = model.predict(&batch)?;
            pooled.push_batch(&batch, &pred);
        }
        Ok(pooled)
    }

    /// Appends the real positions, words and utterances of one predicted batch.
    pub fn push_batch(&mut self, batch: &Batch, pred: &Predictions) {
        let (t, w) = (batch.len, batch.words);
        for b in 0..batch.size {
            for p in 0..batch.lengths[b] {
                let at = b * t + p;
                self.phoneme.push((pred.phn.data()[at], batch.phone_targets[at]));
            }
            for word in 0..batch.word_spans[b].len() {
                for a in 0..WORD_ASPECTS {
                    let at = (b * w + word) * WORD_ASPECTS + a;
                    self.word[a].push((pred.word.data()[at], batch.word_targets[at]));
                }
            }
            for n in 0..UTT_ASPECTS {
                let at = b * UTT_ASPECTS + n;
                self.utterance[n].push((pred.utt.data()[at], batch.utt_targets[at]));
            }
        }
    }
}

/// Corpus-level metrics of a frozen model. Predictions do not depend on batch
/// composition and pooled pairs are sorted before reduction, so the report is
/// invariant to the order of `samples`.
pub fn evaluate(model: &Hia, samples: &[UtteranceSample], batch_size: usize) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluate: empty dataset".into()));
    }
    PooledPredictions::collect(model, samples, batch_size)?.report()
}

/// Mean and sample standard deviation of one report column across runs.
/// Undefined values are skipped; `std` needs at least two defined runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnSummary {
    pub granularity: &'static str,
    pub aspect: &'static str,
    /// `"mse"` or `"pcc"`.
    pub metric: &'static str,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
    pub runs: usize,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(libm::sqrt(var)))
}

/// Phoneme MSE followed by the PCC of all nine aspects, in table order.
pub fn summarize(reports: &[MetricReport]) -> Vec<ColumnSummary> {
    let mut out = Vec::new();
    let Some(first) = reports.first() else {
        return out;
    };
    let mse: Vec<f64> = reports.iter().map(|r| r.phoneme.mse).collect();
    let (mean, std) = mean_std(&mse);
    out.push(ColumnSummary {
        granularity: "phoneme",
        aspect: "accuracy",
        metric: "mse",
        mean,
        std,
        defined: reports.len(),
        runs: reports.len(),
    });
    for (c, (granularity, aspect, _)) in first.columns().into_iter().enumerate() {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.columns()[c].2.pcc).collect();
        let (mean, std) = mean_std(&values);
        out.push(ColumnSummary {
            granularity,
            aspect,
            metric: "pcc",
            mean,
            std,
            defined: values.len(),
            runs: reports.len(),
        });
    }
    out
}

/// Outcome of [`pcc_properties_suite`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyReport {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Randomized checks of symmetry, affine equivariance, bounds and `pcc(x, x) = 1`
/// at tolerance `1e-12`, plus `mse(x, x) = 0` exactly.
pub fn pcc_properties_suite(cases: usize, seed: u64) -> PropertyReport {
    const TOL: f64 = 1e-12;
    let mut rng = crate::rng::stream(seed, "pcc_properties", 0);
    let mut report = PropertyReport { cases, failures: Vec::new() };
    let mut fail = |i: usize, what: String| report.failures.push(format!("case {i}: {what}"));
    for i in 0..cases {
        let n = rng.random_range(2..40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut a: f64 = rng.random_range(0.1..10.0);
        if i % 2 == 1 || i == 0 {
            a = -a;
        }
        if i == 0 {
            a = -1.0;
        }
        let b: f64 = rng.random_range(-100.0..100.0);
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let (Ok(Some(rxy)), Ok(Some(ryx)), Ok(Some(raxy)), Ok(Some(rxx))) =
            (pcc(&x, &y), pcc(&y, &x), pcc(&ax, &y), pcc(&x, &x))
        else {
            fail(i, "pcc undefined on non-constant input".into());
            continue;
        };
        if (rxy - ryx).abs() > TOL {
            fail(i, format!("asymmetric: {rxy} vs {ryx}"));
        }
        if (raxy - a.signum() * rxy).abs() > TOL {
            fail(i, format!("affine: pcc(ax+b, y) = {raxy}, sign(a)·pcc(x, y) = {}", a.signum() * rxy));
        }
        if !(-1.0 - TOL..=1.0 + TOL).contains(&rxy) {
            fail(i, format!("out of bounds: {rxy}"));
        }
        if (rxx - 1.0).abs() > TOL {
            fail(i, format!("pcc(x, x) = {rxx}"));
        }
        if mse(&x, &x) != Ok(0.0) {
            fail(i, "mse(x, x) != 0".into());
        }
    }
    report
}
