//! CSV/JSON report rendering. Plain strings in, files handled by callers
//! through [`super::atomic_write`]; all formatting is deterministic.

use std::fmt::Write as _;

use crate::metrics::Metrics;
use crate::train::EpochStats;

/// Pretty-printed JSON for one evaluation.
pub fn metrics_json(m: &Metrics) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("metrics serialize");
    s.push('\n');
    s
}

/// Confusion matrix as CSV: header row of predicted classes, one row per
/// ground-truth class.
pub fn confusion_csv(m: &Metrics) -> String {
    let c = m.n_classes;
    let mut out = String::from("gt\\pred");
    for p in 0..c {
        write!(out, ",{p}").unwrap();
    }
    out.push('\n');
    for g in 0..c {
        write!(out, "{g}").unwrap();
        for p in 0..c {
            write!(out, ",{}", m.confusion.at(g, p)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// One row per evaluated fraction with the macro scores.
pub fn sweep_csv(rows: &[Metrics]) -> String {
    let mut out = String::from("fraction,macro_precision,macro_recall,macro_f1,accuracy\n");
    for m in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            m.fraction, m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy
        )
        .unwrap();
    }
    out
}

/// Per-epoch training history.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_macro_f1\n");
    for e in history {
        match e.val_macro_f1 {
            Some(f1) => writeln!(out, "{},{:.6},{:.6}", e.epoch, e.train_loss, f1).unwrap(),
            None => writeln!(out, "{},{:.6},", e.epoch, e.train_loss).unwrap(),
        }
    }
    out
}

/// Side-by-side construction comparison rows.
pub fn compare_csv(rows: &[(String, &Metrics)]) -> String {
    let mut out = String::from("construction,fraction,macro_precision,macro_recall,macro_f1,accuracy\n");
    for (name, m) in rows {
        writeln!(
            out,
            "{name},{},{:.6},{:.6},{:.6},{:.6}",
            m.fraction, m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy
        )
        .unwrap();
    }
    out
}
