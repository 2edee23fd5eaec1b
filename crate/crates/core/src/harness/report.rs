//! Ablation tables, alpha-sweep summaries and plot scripts.

use std::fmt::Write as _;

use serde::Serialize;

use super::config::SortKey;
use crate::error::{Error, Result};
use crate::fusion::SweepTable;

/// One trained configuration. Metrics are empty when the row failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub row: usize,
    pub label: String,
    pub epochs: usize,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub val_loss: Option<f64>,
    /// Visible test set.
    pub test_acc_1: Option<f64>,
    /// Hidden-subject test set.
    pub test_acc_2: Option<f64>,
    pub status: String,
}

impl AblationRow {
    pub fn failed(row: usize, label: String, epochs: usize, err: &Error) -> Self {
        Self {
            row,
            label,
            epochs,
            train_acc: None,
            val_acc: None,
            val_loss: None,
            test_acc_1: None,
            test_acc_2: None,
            status: format!("error: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Failed rows sink to the bottom under the metric orders.
    pub fn sort(&mut self, key: SortKey) {
        let metric = |r: &AblationRow| match key {
            SortKey::Config => None,
            SortKey::ValAcc => r.val_acc,
            SortKey::TestAcc1 => r.test_acc_1,
        };
        match key {
            SortKey::Config => self.rows.sort_by_key(|r| r.row),
            _ => self.rows.sort_by(|a, b| {
                let (x, y) = (metric(a).unwrap_or(f64::NEG_INFINITY), metric(b).unwrap_or(f64::NEG_INFINITY));
                y.total_cmp(&x).then(a.row.cmp(&b.row))
            }),
        }
    }

    pub fn baseline(&self) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.row == 0)
    }

    pub fn by_label(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> Result<String> {
        super::csv_string(&self.rows)
    }
}

/// Per dataset: accuracy at alpha 1, the peak alpha and the gain over alpha 1.
pub fn sweep_summary(table: &SweepTable, datasets: &[&str]) -> String {
    let mut out = String::new();
    for name in datasets {
        let Some(peak) = table.peak(name) else { continue };
        let base = table.accuracy(name, 1.0);
        let _ = write!(out, "{name}: peak {:.4} at alpha {}", peak.accuracy, peak.alpha);
        match base {
            Some(b) => {
                let _ = writeln!(
                    out,
                    "; classifier alone {b:.4}; gain {:+.2} points over {} letters",
                    100.0 * (peak.accuracy - b),
                    peak.n_chars
                );
            }
            None => {
                let _ = writeln!(out, "; alpha 1 not swept; {} letters", peak.n_chars);
            }
        }
    }
    out
}

/// A gnuplot script drawing one accuracy-vs-alpha curve per dataset.
pub fn gnuplot_script(csv_name: &str, datasets: &[&str]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set xlabel 'alpha'");
    let _ = writeln!(s, "set ylabel 'per-character accuracy'");
    let _ = writeln!(s, "set key bottom right");
    let _ = writeln!(s, "set terminal pngcairo size 900,600");
    let _ = writeln!(s, "set output 'alpha_sweep.png'");
    let curves: Vec<String> = datasets
        .iter()
        .map(|d| format!("\"< grep '^{d},' {csv_name}\" using 2:3 with linespoints title '{d}'"))
        .collect();
    let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
    s
}
