use alloc::format;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::ScoreSet;
use crate::tensor::{Graph, Tensor, Var};
use crate::{UTT_ASPECTS, WORD_ASPECTS};

/// Masked mean of squared differences.
pub fn mse_loss(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::Contract(format!(
            "mse_loss: lengths {}, {} and {} differ",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let count: f64 = mask.iter().sum();
    if count <= 0.0 {
        return Err(Error::Contract("mse_loss: empty mask".into()));
    }
    let sum: f64 = pred.iter().zip(target).zip(mask).map(|((p, t), m)| m * (p - t) * (p - t)).sum();
    Ok(sum / count)
}

/// Graph version of [`mse_loss`]; `pred` may have any shape with `target.len()` elements.
pub fn masked_mse(g: &mut Graph, pred: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
    let count: f64 = mask.iter().sum();
    if count <= 0.0 {
        return Err(Error::Contract("masked_mse: empty mask".into()));
    }
    let t = g.constant(Tensor::new(g.shape(pred), target.to_vec())?);
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff)?;
    let masked = g.mul_const(sq, mask)?;
    let sum = g.sum(masked)?;
    g.scale(sum, 1.0 / count)
}

/// Per-aspect losses of one batch and their combination.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub phoneme: f64,
    pub word: [f64; WORD_ASPECTS],
    pub utterance: [f64; UTT_ASPECTS],
}

impl LossReport {
    pub fn word_mean(&self) -> f64 {
        self.word.iter().sum::<f64>() * (1.0 / WORD_ASPECTS as f64)
    }

    pub fn utterance_mean(&self) -> f64 {
        self.utterance.iter().sum::<f64>() * (1.0 / UTT_ASPECTS as f64)
    }

    /// Sum over granularities of the mean aspect loss.
    pub fn total(&self) -> f64 {
        self.phoneme + self.word_mean() + self.utterance_mean()
    }
}

fn column(values: &[f64], width: usize, col: usize) -> Vec<f64> {
    values.iter().skip(col).step_by(width).copied().collect()
}

/// Builds the training loss on `g` and returns it with the per-aspect values.
pub fn total_loss(g: &mut Graph, scores: &ScoreSet, batch: &Batch) -> Result<(Var, LossReport)> {
    let phn = masked_mse(g, scores.phn, &batch.phone_targets, &batch.mask)?;
    let mut report = LossReport { phoneme: g.value(phn).data()[0], ..LossReport::default() };

    let mut word_terms = Vec::with_capacity(WORD_ASPECTS);
    for a in 0..WORD_ASPECTS {
        let pred = g.select(scores.word, 2, a)?;
        let target = column(&batch.word_targets, WORD_ASPECTS, a);
        let mask = column(&batch.word_mask, WORD_ASPECTS, a);
        let l = masked_mse(g, pred, &target, &mask)?;
        report.word[a] = g.value(l).data()[0];
        word_terms.push(l);
    }
    let mut utt_terms = Vec::with_capacity(UTT_ASPECTS);
    for n in 0..UTT_ASPECTS {
        let pred = g.select(scores.utt, 1, n)?;
        let target = column(&batch.utt_targets, UTT_ASPECTS, n);
        let mask = column(&batch.utt_mask, UTT_ASPECTS, n);
        let l = masked_mse(g, pred, &target, &mask)?;
        report.utterance[n] = g.value(l).data()[0];
        utt_terms.push(l);
    }
    let word = sum_all(g, &word_terms)?;
    let word = g.scale(word, 1.0 / WORD_ASPECTS as f64)?;
    let utt = sum_all(g, &utt_terms)?;
    let utt = g.scale(utt, 1.0 / UTT_ASPECTS as f64)?;
    let total = g.add(phn, word)?;
    let total = g.add(total, utt)?;
    Ok((total, report))
}

fn sum_all(g: &mut Graph, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms.split_first().ok_or_else(|| Error::Contract("sum of no terms".into()))?;
    rest.iter().try_fold(first, |acc, &t| g.add(acc, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[0.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(mse_loss(&[0.0, 2.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(mse_loss(&[0.0], &[0.0], &[0.0]).is_err());
        assert!(mse_loss(&[0.0], &[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn report_combination() {
        assert_eq!(LossReport::default().total(), 0.0);
        let only_phone = LossReport { phoneme: 0.3, ..LossReport::default() };
        assert_eq!(only_phone.total(), 0.3);
        let words = LossReport { word: [0.1, 0.2, 0.3], ..LossReport::default() };
        assert!((words.total() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn graph_mse_matches_plain() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(&[&[0.0, 2.0], &[1.0, 5.0]]).unwrap());
        let l = masked_mse(&mut g, p, &[0.0, 0.0, 1.0, -1.0], &[1.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            g.value(l).data()[0],
            mse_loss(&[0.0, 2.0, 1.0, 5.0], &[0.0, 0.0, 1.0, -1.0], &[1.0, 1.0, 1.0, 0.0]).unwrap()
        );
        g.backward(l).unwrap();
        // d/dp of (p − t)²/3 on unmasked entries; the masked one gets nothing.
        assert_eq!(g.grad(p).unwrap().data(), &[0.0, 4.0 / 3.0, 0.0, 0.0]);
    }
}
