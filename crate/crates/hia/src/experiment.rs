//! Multi-seed training and evaluation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use hia_core::data::UtteranceSample;
use hia_core::metrics::{evaluate, summarize, ColumnSummary, MetricReport};
use hia_core::model::{Hia, ModelConfig};
use hia_core::train::{fit, FitOutcome, TrainConfig};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: FitOutcome,
    /// Best checkpoint evaluated on the test set.
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSweep {
    pub runs: Vec<SeedRun>,
    pub summary: Vec<ColumnSummary>,
}

impl SeedSweep {
    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn reports(&self) -> Vec<MetricReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// Trains one model: parameters and shuffling both follow `seed`.
pub fn run_seed(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[UtteranceSample],
    dev: &[UtteranceSample],
    test: &[UtteranceSample],
    seed: u64,
) -> Result<SeedRun> {
    let cfg = TrainConfig { seed, ..train_cfg.clone() };
    let outcome = fit(Hia::new(model.clone(), seed)?, train, dev, &cfg)?;
    if let Some(why) = &outcome.diverged {
        log::warn!("seed {seed}: {why}; evaluating the last good checkpoint");
    }
    let report = evaluate(&outcome.best.model, test, cfg.batch_size)?;
    Ok(SeedRun { seed, outcome, report })
}

/// Runs every seed, on up to `threads` worker threads. Runs are independent,
/// so results do not depend on the thread count.
pub fn run_seeds(
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[UtteranceSample],
    dev: &[UtteranceSample],
    test: &[UtteranceSample],
    seeds: &[u64],
    threads: usize,
) -> Result<SeedSweep> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                log::info!("seed {seed}: training");
                let r = run_seed(model, train_cfg, train, dev, test, seed);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let runs = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed was run"))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricReport> = runs.iter().map(|r| r.report.clone()).collect();
    Ok(SeedSweep { summary: summarize(&reports), runs })
}

/// Worker count for [`run_seeds`]: the machine's parallelism.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
