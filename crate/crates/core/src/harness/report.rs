//! Result tables: per-fold rows plus a mean ± std summary, written as CSV,
//! markdown or JSON.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::loso::FoldResult;
use super::metrics::mean_std;
use crate::dataset::TaskMode;
use crate::error::{Error, Result};
use crate::models::{ModelFamily, SensorCombination};

pub const CSV_HEADER: [&str; 7] = [
    "subject",
    "accuracy",
    "accuracy_std",
    "macro_recall",
    "macro_recall_std",
    "n_test",
    "chosen_rank",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// One CSV data row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// Subject id, or `mean` on the summary row.
    pub subject: String,
    pub accuracy: f64,
    pub accuracy_std: Option<f64>,
    pub macro_recall: f64,
    pub macro_recall_std: Option<f64>,
    pub n_test: usize,
    pub chosen_rank: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportTable {
    pub config_hash: String,
    pub seed: u64,
    pub task: TaskMode,
    pub combination: SensorCombination,
    pub family: ModelFamily,
    /// Seconds since the Unix epoch when the table was assembled.
    pub created_unix: u64,
    pub folds: Vec<FoldResult>,
}

impl ReportTable {
    pub fn new(cfg: &ExperimentConfig, folds: Vec<FoldResult>) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            task: cfg.task,
            combination: cfg.combination.clone(),
            family: cfg.family,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            folds,
        }
    }

    /// Unweighted mean and sample std of per-subject accuracies.
    pub fn accuracy(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.accuracy).collect::<Vec<_>>())
    }

    pub fn macro_recall(&self) -> (f64, f64) {
        mean_std(&self.folds.iter().map(|f| f.macro_recall).collect::<Vec<_>>())
    }

    /// Per-fold rows followed by the `mean` summary row.
    pub fn rows(&self) -> Vec<ReportRow> {
        let mut rows: Vec<ReportRow> = self
            .folds
            .iter()
            .map(|f| ReportRow {
                subject: f.held_out.to_string(),
                accuracy: f.accuracy,
                accuracy_std: None,
                macro_recall: f.macro_recall,
                macro_recall_std: None,
                n_test: f.n_test,
                chosen_rank: f.chosen_rank,
            })
            .collect();
        let (acc, acc_std) = self.accuracy();
        let (rec, rec_std) = self.macro_recall();
        rows.push(ReportRow {
            subject: "mean".into(),
            accuracy: acc,
            accuracy_std: Some(acc_std),
            macro_recall: rec,
            macro_recall_std: Some(rec_std),
            n_test: self.folds.iter().map(|f| f.n_test).sum(),
            chosen_rank: None,
        });
        rows
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory csv");
        for r in self.rows() {
            w.write_record([
                r.subject.clone(),
                r.accuracy.to_string(),
                opt(r.accuracy_std),
                r.macro_recall.to_string(),
                opt(r.macro_recall_std),
                r.n_test.to_string(),
                r.chosen_rank.map(|k| k.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## {} · {} · {}\n", self.family, self.combination, self.task);
        let _ = writeln!(s, "config `{}` · seed {}\n", self.config_hash, self.seed);
        let _ = writeln!(s, "| subject | accuracy | macro recall | n_test | chosen rank |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for r in self.rows() {
            let (acc, rec) = match (r.accuracy_std, r.macro_recall_std) {
                (Some(a), Some(m)) => (
                    format!("{:.2} ± {:.2}", 100.0 * r.accuracy, 100.0 * a),
                    format!("{:.2} ± {:.2}", 100.0 * r.macro_recall, 100.0 * m),
                ),
                _ => (
                    format!("{:.2}", 100.0 * r.accuracy),
                    format!("{:.2}", 100.0 * r.macro_recall),
                ),
            };
            let rank = r.chosen_rank.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {} | {acc} | {rec} | {} | {rank} |", r.subject, r.n_test);
        }
        s
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        let text = match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        };
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }
}

/// Parses a CSV written by [`ReportTable::to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Report(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::Report(format!("unexpected header {header:?}")));
    }
    let f = |s: &str| s.parse::<f64>().map_err(|e| Error::Report(format!("`{s}`: {e}")));
    let opt_f = |s: &str| if s.is_empty() { Ok(None) } else { f(s).map(Some) };
    let u = |s: &str| s.parse::<usize>().map_err(|e| Error::Report(format!("`{s}`: {e}")));
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::Report(e.to_string()))?;
            Ok(ReportRow {
                subject: rec[0].to_string(),
                accuracy: f(&rec[1])?,
                accuracy_std: opt_f(&rec[2])?,
                macro_recall: f(&rec[3])?,
                macro_recall_std: opt_f(&rec[4])?,
                n_test: u(&rec[5])?,
                chosen_rank: if rec[6].is_empty() { None } else { Some(u(&rec[6])?) },
            })
        })
        .collect()
}

/// Rows by sensor combination, columns by model family (mean ± std accuracy).
pub fn grid_markdown(tables: &[ReportTable]) -> String {
    let mut combos: Vec<&SensorCombination> = tables.iter().map(|t| &t.combination).collect();
    combos.sort();
    combos.dedup();
    let families: Vec<ModelFamily> = ModelFamily::ALL
        .into_iter()
        .filter(|f| tables.iter().any(|t| t.family == *f))
        .collect();
    let mut s = String::new();
    let _ = write!(s, "| sensors |");
    for f in &families {
        let _ = write!(s, " {f} |");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "|---|{}", "---|".repeat(families.len()));
    for c in combos {
        let _ = write!(s, "| {c} |");
        for f in &families {
            match tables.iter().find(|t| &t.combination == c && t.family == *f) {
                Some(t) => {
                    let (m, sd) = t.accuracy();
                    let _ = write!(s, " {:.2} ± {:.2} |", 100.0 * m, 100.0 * sd);
                }
                None => {
                    let _ = write!(s, " - |");
                }
            }
        }
        let _ = writeln!(s);
    }
    s
}
