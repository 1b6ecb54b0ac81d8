//! Per-epoch training history as CSV.

use std::path::Path;

use hia_core::metrics::COLUMNS;
use hia_core::train::EpochRecord;

use crate::error::{HiaError, Result};

/// Column names: epoch, lr, train loss, dev total loss, then MSE and PCC of
/// every aspect on the dev set. Undefined correlations are empty cells.
pub fn history_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["epoch", "lr", "train_loss", "dev_loss"].iter().map(|s| s.to_string()).collect();
    for (g, a) in COLUMNS {
        h.push(format!("dev_{g}_{a}_mse"));
        h.push(format!("dev_{g}_{a}_pcc"));
    }
    h
}

pub fn history_to_csv(records: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| HiaError::parse("history", e.to_string());
    w.write_record(history_header()).map_err(to_err)?;
    for r in records {
        let mut row = vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.dev.total_loss().to_string(),
        ];
        for (_, _, m) in r.dev.columns() {
            row.push(m.mse.to_string());
            row.push(m.pcc.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| HiaError::parse("history", e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_history(path: &Path, records: &[EpochRecord]) -> Result<()> {
    crate::files::write_text(path, &history_to_csv(records)?)
}
