use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::UtteranceSample;
use crate::error::{Error, Result};
use crate::{GOP_DIM, NUM_PHONES, UTT_ASPECTS, WORD_ASPECTS};

/// Phone id written at padded positions.
pub const PAD_PHONE: usize = NUM_PHONES;

/// Padded, stacked utterances. Every buffer is row-major with the batch axis first.
///
/// Sequences are padded to the longest utterance in the batch. Padded positions
/// carry [`PAD_PHONE`], zero GOP vectors, mask 0 and no word index. Word targets
/// stay per word; they are never duplicated onto phone positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// Padded sequence length `T`.
    pub len: usize,
    /// Maximum word count `W` over the batch.
    pub words: usize,
    pub phones: Vec<usize>,
    /// `[size, len, 84]`
    pub gop: Vec<f64>,
    /// `[size, len]`, 1 for real positions.
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
    /// `[size, len]`: word of each real position.
    pub word_index: Vec<Option<usize>>,
    /// Half-open phone spans of each word, per utterance.
    pub word_spans: Vec<Vec<(usize, usize)>>,
    /// `[size, len]`
    pub phone_targets: Vec<f64>,
    /// `[size, words, 3]`
    pub word_targets: Vec<f64>,
    /// `[size, words, 3]`, 1 for real words.
    pub word_mask: Vec<f64>,
    /// `[size, 5]`
    pub utt_targets: Vec<f64>,
    /// `[size, 5]`
    pub utt_mask: Vec<f64>,
    /// Position of each utterance in the source list.
    pub sample_ids: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[UtteranceSample], ids: &[usize], max_len: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let too_long: Vec<usize> = ids.iter().copied().filter(|&i| samples[i].len() > max_len).collect();
        if !too_long.is_empty() {
            return Err(Error::validation(
                None,
                "phones",
                format!("utterances {too_long:?} exceed max_len {max_len}"),
            ));
        }
        let size = ids.len();
        let len = ids.iter().map(|&i| samples[i].len()).max().unwrap_or(0);
        let words = ids.iter().map(|&i| samples[i].num_words()).max().unwrap_or(0);
        let mut b = Batch {
            size,
            len,
            words,
            phones: vec![PAD_PHONE; size * len],
            gop: vec![0.0; size * len * GOP_DIM],
            mask: vec![0.0; size * len],
            lengths: Vec::with_capacity(size),
            word_index: vec![None; size * len],
            word_spans: Vec::with_capacity(size),
            phone_targets: vec![0.0; size * len],
            word_targets: vec![0.0; size * words * WORD_ASPECTS],
            word_mask: vec![0.0; size * words * WORD_ASPECTS],
            utt_targets: Vec::with_capacity(size * UTT_ASPECTS),
            utt_mask: vec![1.0; size * UTT_ASPECTS],
            sample_ids: ids.to_vec(),
        };
        for (row, &i) in ids.iter().enumerate() {
            let s = &samples[i];
            s.validate(Some(i))?;
            for p in 0..s.len() {
                let at = row * len + p;
                b.phones[at] = s.phones[p];
                b.gop[at * GOP_DIM..(at + 1) * GOP_DIM].copy_from_slice(&s.gop[p]);
                b.mask[at] = 1.0;
                b.word_index[at] = Some(s.word_id[p]);
                b.phone_targets[at] = s.phone_scores[p];
            }
            for (w, ws) in s.word_scores.iter().enumerate() {
                let at = (row * words + w) * WORD_ASPECTS;
                b.word_targets[at..at + WORD_ASPECTS].copy_from_slice(&ws.to_array());
                b.word_mask[at..at + WORD_ASPECTS].fill(1.0);
            }
            b.lengths.push(s.len());
            b.word_spans.push(s.word_spans());
            b.utt_targets.extend_from_slice(&s.utt_scores.to_array());
        }
        Ok(b)
    }
}

fn reject_long(samples: &[UtteranceSample], max_len: usize) -> Result<()> {
    let too_long: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].len() > max_len).collect();
    if too_long.is_empty() {
        Ok(())
    } else {
        Err(Error::validation(None, "phones", format!("utterances {too_long:?} exceed max_len {max_len}")))
    }
}

/// Shuffles deterministically under `seed` and cuts into batches.
pub fn make_batches(
    samples: &[UtteranceSample],
    batch_size: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    reject_long(samples, max_len)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, "shuffle", 0));
    order.chunks(batch_size).map(|ids| Batch::from_samples(samples, ids, max_len)).collect()
}

/// Batches in dataset order, for evaluation.
pub fn sequential_batches(
    samples: &[UtteranceSample],
    batch_size: usize,
    max_len: usize,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    reject_long(samples, max_len)?;
    let order: Vec<usize> = (0..samples.len()).collect();
    order.chunks(batch_size).map(|ids| Batch::from_samples(samples, ids, max_len)).collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests::toy;
    use super::*;

    #[test]
    fn single_short_sample() {
        let s = vec![toy(vec![0, 1, 1])];
        let b = make_batches(&s, 4, 5, 0).unwrap();
        assert_eq!(b.len(), 1);
        let b = &b[0];
        assert_eq!(b.mask.iter().sum::<f64>(), 3.0);
        assert_eq!(b.word_spans, vec![vec![(0, 1), (1, 3)]]);
    }

    #[test]
    fn padding_and_masks() {
        let s = vec![toy(vec![0, 0, 1, 2]), toy(vec![0, 1])];
        let b = Batch::from_samples(&s, &[0, 1], 50).unwrap();
        assert_eq!((b.size, b.len, b.words), (2, 4, 3));
        assert_eq!(b.mask, [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(&b.phones[6..], &[PAD_PHONE, PAD_PHONE]);
        assert!(b.gop[6 * GOP_DIM..].iter().all(|&v| v == 0.0));
        assert_eq!(&b.word_index[4..], &[Some(0), Some(1), None, None]);
        // second utterance has two words, the third word slot is padding
        assert_eq!(&b.word_mask[9..], &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        for (row, &len) in b.lengths.iter().enumerate() {
            assert_eq!(b.mask[row * b.len..(row + 1) * b.len].iter().sum::<f64>(), len as f64);
        }
    }

    #[test]
    fn batch_size_at_least_n_gives_one_batch() {
        let s: Vec<_> = (0..5).map(|_| toy(vec![0, 1])).collect();
        assert_eq!(make_batches(&s, 5, 10, 1).unwrap().len(), 1);
        assert_eq!(make_batches(&s, 50, 10, 1).unwrap().len(), 1);
        assert_eq!(make_batches(&s, 2, 10, 1).unwrap().len(), 3);
    }

    #[test]
    fn shuffle_is_seeded() {
        let s: Vec<_> = (0..20).map(|_| toy(vec![0, 1])).collect();
        let order = |seed| -> Vec<usize> {
            make_batches(&s, 3, 10, seed).unwrap().iter().flat_map(|b| b.sample_ids.clone()).collect()
        };
        assert_eq!(order(9), order(9));
        assert_ne!(order(9), order(10));
    }

    #[test]
    fn too_long_samples_are_listed() {
        let s = vec![toy(vec![0, 1]), toy(vec![0, 1, 2, 3]), toy(vec![0; 5])];
        let err = make_batches(&s, 2, 3, 0).unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[1, 2]"), "{msg}");
    }
}
