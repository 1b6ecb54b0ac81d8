use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{lr_at, total_loss, Adam, LossReport, TrainConfig};
use crate::data::{make_batches, Batch, UtteranceSample};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{Forward, Hia};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Graph, Mode};

/// A model snapshot with the epoch it was taken after (0 = before training)
/// and its dev phoneme MSE.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Hia,
    pub epoch: usize,
    pub best_metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub train_loss: f64,
    pub dev: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    /// Lowest dev phoneme MSE seen.
    pub best: Checkpoint,
    /// Parameters after the last completed step.
    pub last: Hia,
    pub history: Vec<EpochRecord>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// One optimizer step on `batch` in train mode.
pub fn train_step(
    model: &mut Hia,
    adam: &mut Adam,
    batch: &Batch,
    lr: f64,
    rng: &mut crate::rng::Rng,
) -> Result<LossReport> {
    let mut g = Graph::new();
    let mut f = Forward::new(model, &mut g, batch, Mode::Train, rng, false)?;
    let scores = f.run()?;
    let vars = core::mem::take(&mut f.params);
    let (loss, report) = total_loss(&mut g, &scores, batch)?;
    g.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, v) in vars {
        let grad = g.grad(v).ok_or_else(|| Error::Lookup(format!("no gradient for {name}")))?;
        grads.insert(name, grad.clone());
    }
    adam.step(&mut model.params, &grads, lr)?;
    Ok(report)
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::Numeric(_))
}

/// Trains for `cfg.epochs` epochs, evaluating on `dev` after each one and
/// keeping the parameters with the lowest dev phoneme MSE.
pub fn fit(
    mut model: Hia,
    train: &[UtteranceSample],
    dev: &[UtteranceSample],
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Contract(format!(
            "fit needs data: {} train, {} dev utterances",
            train.len(),
            dev.len()
        )));
    }
    let max_len = model.config.max_len;
    let initial = model.clone();
    let mut adam = Adam::from_config(cfg);
    let mut best: Option<Checkpoint> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let batches =
            make_batches(train, cfg.batch_size, max_len, derive_seed(cfg.seed, "epoch", epoch as u64))?;
        let mut rng = stream(cfg.seed, "dropout", epoch as u64);
        let mut loss_sum = 0.0;
        for batch in &batches {
            match train_step(&mut model, &mut adam, batch, lr, &mut rng) {
                Ok(report) => loss_sum += report.total(),
                Err(e) if is_divergence(&e) => {
                    log::warn!("epoch {epoch}: training diverged: {e}");
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let dev_report = match evaluate(&model, dev, cfg.batch_size) {
            Ok(r) => r,
            Err(e) if is_divergence(&e) => {
                diverged = Some(format!("epoch {epoch}, dev evaluation: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let metric = dev_report.phoneme.mse;
        log::info!(
            "epoch {epoch}: lr {lr:e}, train loss {:.5}, dev phoneme mse {metric:.5}",
            loss_sum / batches.len() as f64
        );
        if best.as_ref().is_none_or(|b| metric < b.best_metric) {
            best = Some(Checkpoint { model: model.clone(), epoch, best_metric: metric });
        }
        history.push(EpochRecord { epoch, lr, train_loss: loss_sum / batches.len() as f64, dev: dev_report });
    }

    let best = match best {
        Some(b) => b,
        None => {
            let metric = evaluate(&initial, dev, cfg.batch_size)?.phoneme.mse;
            Checkpoint { model: initial, epoch: 0, best_metric: metric }
        }
    };
    Ok(FitOutcome { best, last: model, history, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::model::ModelConfig;

    fn setup() -> (Hia, Vec<UtteranceSample>) {
        let data = synth_generate(&SynthConfig {
            n_utterances: 12,
            max_words: 4,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = ModelConfig { embed_dim: 8, enc_layers: 1, dec_layers: 1, ..ModelConfig::default() };
        (Hia::new(cfg, 1).unwrap(), data)
    }

    #[test]
    fn single_epoch_records_once() {
        let (model, data) = setup();
        let cfg = TrainConfig { epochs: 1, batch_size: 5, ..TrainConfig::default() };
        let out = fit(model, &data[..8], &data[8..], &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best.epoch, 1);
        assert!(out.diverged.is_none());
    }

    #[test]
    fn best_is_argmin_and_runs_repeat() {
        let (model, data) = setup();
        let cfg = TrainConfig { epochs: 6, batch_size: 4, lr0: 3e-3, ..TrainConfig::default() };
        let a = fit(model.clone(), &data[..8], &data[8..], &cfg).unwrap();
        for r in &a.history {
            assert!(a.best.best_metric <= r.dev.phoneme.mse);
        }
        let b = fit(model, &data[..8], &data[8..], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_keeps_last_good_model() {
        let (model, data) = setup();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, lr0: 1e300, ..TrainConfig::default() };
        let out = fit(model.clone(), &data[..8], &data[8..], &cfg).unwrap();
        assert!(out.diverged.is_some());
        assert!(out.best.model.params.values().all(|t| t.is_finite()));
        assert!(out.last.params.values().all(|t| t.is_finite()));
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (model, data) = setup();
        assert!(fit(model, &data, &[], &TrainConfig::default()).is_err());
    }
}
