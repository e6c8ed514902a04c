//! Text, CSV and JSON renderings of training histories and evaluations.

use std::fmt::Write as _;

use neurosleep_core::metrics::EvalReport;
use neurosleep_core::train::EpochStats;
use neurosleep_core::Stage;
use serde::Serialize;

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_accuracy,val_macro_f1,val_kappa";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per epoch. Values use the shortest round-trip formatting, so
/// identical runs give identical bytes.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            h.epoch,
            h.train_loss,
            h.val_loss,
            h.val_accuracy,
            h.val_macro_f1,
            opt(h.val_kappa)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageScores {
    pub stage: &'static str,
    pub support: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionJson {
    pub labels: Vec<&'static str>,
    /// Rows are true stages, columns predicted.
    pub counts: Vec<Vec<u64>>,
    /// Each row divided by its total; `null` for stages absent from the truth.
    pub row_normalized: Vec<Option<Vec<f64>>>,
}

/// Stable JSON layout of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportJson {
    pub epochs: u64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub macro_f1: f64,
    pub kappa: Option<f64>,
    pub per_stage: Vec<StageScores>,
    pub confusion: ConfusionJson,
}

pub const REPORT_KEYS: [&str; 7] = [
    "epochs",
    "accuracy",
    "balanced_accuracy",
    "macro_f1",
    "kappa",
    "per_stage",
    "confusion",
];

impl ReportJson {
    pub fn new(r: &EvalReport) -> Self {
        let labels: Vec<&'static str> = Stage::ALL.iter().map(|s| s.name()).collect();
        Self {
            epochs: r.confusion.total,
            accuracy: r.accuracy,
            balanced_accuracy: r.balanced_accuracy,
            macro_f1: r.macro_f1,
            kappa: r.kappa,
            per_stage: r
                .per_class
                .iter()
                .map(|c| StageScores {
                    stage: labels[c.class],
                    support: c.support,
                    precision: c.precision,
                    recall: c.recall,
                    f1: c.f1,
                })
                .collect(),
            confusion: ConfusionJson {
                labels,
                counts: r.confusion.counts.clone(),
                row_normalized: r.confusion.row_normalized(),
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Row-normalised confusion table (per-stage recall on the diagonal) with
/// counts and the headline scores.
pub fn confusion_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "true \\ pred  {}", row(Stage::ALL.iter().map(|st| format!("{:>6}", st.name()))));
    for (stage, norm) in Stage::ALL.iter().zip(r.confusion.row_normalized()) {
        let cells = match norm {
            Some(v) => row(v.iter().map(|x| format!("{x:>6.3}"))),
            None => row(Stage::ALL.iter().map(|_| format!("{:>6}", "-"))),
        };
        let _ = writeln!(s, "{:<12} {cells}   n={}", stage.name(), r.confusion.support(stage.index()));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "counts");
    for (stage, counts) in Stage::ALL.iter().zip(&r.confusion.counts) {
        let _ = writeln!(s, "{:<12} {}", stage.name(), row(counts.iter().map(|c| format!("{c:>6}"))));
    }
    let _ = writeln!(s);
    let kappa = r.kappa.map(|k| format!("{k:.4}")).unwrap_or_else(|| "undefined".into());
    let _ = writeln!(
        s,
        "accuracy {:.4}  balanced accuracy {:.4}  macro-F1 {:.4}  kappa {kappa}",
        r.accuracy, r.balanced_accuracy, r.macro_f1
    );
    s
}

fn row(cells: impl Iterator<Item = String>) -> String {
    cells.collect::<Vec<_>>().join(" ")
}

/// One row of a sweep comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub report: EvalReport,
}

pub const SWEEP_HEADER: &str = "axis,value,accuracy,balanced_accuracy,macro_f1,kappa";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.axis,
            r.value,
            r.report.accuracy,
            r.report.balanced_accuracy,
            r.report.macro_f1,
            opt(r.report.kappa)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> EvalReport {
        EvalReport::from_labels(&[0, 1, 2, 2, 3, 4], &[0, 1, 2, 3, 3, 4], 5).unwrap()
    }

    #[test]
    fn json_keys_are_stable() {
        let v: serde_json::Value = serde_json::from_str(&ReportJson::new(&report()).to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut expected = REPORT_KEYS.to_vec();
        expected.sort();
        assert_eq!(keys, expected);
        assert_eq!(v["confusion"]["row_normalized"][2], serde_json::json!([0.0, 0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn history_lines() {
        let h = vec![EpochStats {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            val_accuracy: 1.0,
            val_macro_f1: 1.0,
            val_kappa: None,
        }];
        assert_eq!(history_csv(&h), format!("{HISTORY_HEADER}\n1,0.5,0.25,1,1,\n"));
    }

    #[test]
    fn table_has_a_row_per_stage() {
        let t = confusion_table(&report());
        assert!(t.contains("N2            0.000  0.000  0.500  0.500  0.000   n=2"), "{t}");
    }
}
