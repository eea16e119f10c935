//! Training log: one `key=value` record per epoch, then one `best` line.
//!
//! ```text
//! loss=l2 epoch=1 train_loss=1.2e-2 val_rse=3.1e-2 val_rae=2.5e-2 val_corr=9.7e-1 wall_ms=812
//! best loss=l2 epoch=14 val_rse=1.9e-2 val_rae=1.5e-2 val_corr=9.8e-1
//! ```

use hetcast_core::evaluation::Metrics;
use hetcast_core::training::{format_record, EpochRecord, LossKind};

pub fn format_log(records: &[EpochRecord], best_loss: LossKind, best_epoch: usize, best: Metrics) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format_record(r));
        out.push('\n');
    }
    out.push_str(&format!(
        "best loss={} epoch={} val_rse={:e} val_rae={:e} val_corr={:e}\n",
        best_loss.as_str(),
        best_epoch,
        best.rse,
        best.rae,
        best.corr
    ));
    out
}

/// Parses the epoch records of a log, skipping the `best` line.
pub fn parse_log(text: &str) -> Option<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.starts_with("best") && !l.trim().is_empty())
        .map(|line| {
            let field = |key: &str| {
                line.split_whitespace()
                    .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            };
            Some(EpochRecord {
                loss: match field("loss")? {
                    "l1" => LossKind::L1,
                    "l2" => LossKind::L2,
                    _ => return None,
                },
                epoch: field("epoch")?.parse().ok()?,
                train_loss: field("train_loss")?.parse().ok()?,
                val: Metrics {
                    rse: field("val_rse")?.parse().ok()?,
                    rae: field("val_rae")?.parse().ok()?,
                    corr: field("val_corr")?.parse().ok()?,
                },
                wall_ms: field("wall_ms")?.parse().ok()?,
            })
        })
        .collect()
}
