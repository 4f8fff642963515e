//! CSV and JSON result tables.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{BalanceWeights, GridTable, Headline, RepeatReport, RunFailure, Summary};

/// Fixed column order of `report.csv`.
pub const REPORT_HEADER: [&str; 17] = [
    "run_id",
    "approach",
    "b1",
    "b2",
    "d1",
    "d2",
    "seed",
    "epochs",
    "plant_acc",
    "plant_f1",
    "plant_fpr",
    "dis_acc",
    "dis_f1",
    "dis_fpr",
    "both_acc",
    "both_f1",
    "both_fpr",
];

const METRIC_NAMES: [&str; 9] = [
    "plant_acc",
    "plant_f1",
    "plant_fpr",
    "dis_acc",
    "dis_f1",
    "dis_fpr",
    "both_acc",
    "both_f1",
    "both_fpr",
];

/// One completed run, or one per-approach mean (`aggregate = true`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub approach: String,
    pub weights: Option<BalanceWeights>,
    /// `None` on aggregate rows.
    pub seed: Option<u64>,
    /// Mean over runs on aggregate rows.
    pub epochs: f64,
    pub wall_secs: f64,
    pub metrics: Headline<f64>,
    pub aggregate: bool,
}

/// Mean and population std of every metric for one approach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub approach: String,
    pub weights: Option<BalanceWeights>,
    pub runs: usize,
    pub failed: usize,
    pub epochs: Summary,
    pub metrics: Headline<Summary>,
    pub failures: Vec<RunFailure>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl Report {
    /// Add the runs of one approach (labelled `label`) plus its aggregate row.
    pub fn push(&mut self, label: &str, rep: &RepeatReport) {
        for r in &rep.runs {
            self.rows.push(ReportRow {
                run_id: format!("{label}/seed{}", r.seed),
                approach: label.to_owned(),
                weights: r.weights,
                seed: Some(r.seed),
                epochs: r.epochs() as f64,
                wall_secs: r.wall_time_secs,
                metrics: Headline::from_report(&r.test),
                aggregate: false,
            });
        }
        if !rep.runs.is_empty() {
            self.rows.push(ReportRow {
                run_id: format!("{label}/mean"),
                approach: label.to_owned(),
                weights: rep.weights,
                seed: None,
                epochs: rep.epochs.mean,
                wall_secs: rep.runs.iter().map(|r| r.wall_time_secs).sum(),
                metrics: rep.aggregate.means(),
                aggregate: true,
            });
        }
        self.aggregates.push(AggregateRow {
            approach: label.to_owned(),
            weights: rep.weights,
            runs: rep.runs.len(),
            failed: rep.failures.len(),
            epochs: rep.epochs,
            metrics: rep.aggregate,
            failures: rep.failures.clone(),
        });
    }

    /// Aggregates sorted by mean joint macro-F1, best first (stable on ties).
    pub fn ranked_aggregates(&self) -> Vec<&AggregateRow> {
        let mut v: Vec<&AggregateRow> = self.aggregates.iter().filter(|a| a.runs > 0).collect();
        v.sort_by(|a, b| b.metrics.both_f1.mean.total_cmp(&a.metrics.both_f1.mean));
        v
    }

    pub fn report_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.run_id.clone(), r.approach.clone()];
            rec.extend(weight_cells(r.weights));
            rec.push(r.seed.map(|s| s.to_string()).unwrap_or_default());
            rec.push(r.epochs.to_string());
            rec.extend(r.metrics.values().iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish(w)
    }

    pub fn aggregate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "approach",
            "b1",
            "b2",
            "d1",
            "d2",
            "runs",
            "failed",
            "epochs_mean",
        ]
        .map(String::from)
        .to_vec();
        for m in METRIC_NAMES {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header).map_err(csv_err)?;
        for a in self.ranked_aggregates() {
            let mut rec = vec![a.approach.clone()];
            rec.extend(weight_cells(a.weights));
            rec.push(a.runs.to_string());
            rec.push(a.failed.to_string());
            rec.push(a.epochs.mean.to_string());
            for s in summaries(&a.metrics) {
                rec.push(s.mean.to_string());
                rec.push(s.std.to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish(w)
    }

    /// Write `report.csv`, `aggregate.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("report.csv"), self.report_csv()?.as_bytes())?;
        write_file(&dir.join("aggregate.csv"), self.aggregate_csv()?.as_bytes())?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Dataset(e.to_string()))?;
        write_file(&dir.join("report.json"), json.as_bytes())
    }
}

fn summaries(h: &Headline<Summary>) -> [Summary; 9] {
    [
        h.plant_acc,
        h.plant_f1,
        h.plant_fpr,
        h.dis_acc,
        h.dis_f1,
        h.dis_fpr,
        h.both_acc,
        h.both_f1,
        h.both_fpr,
    ]
}

fn weight_cells(w: Option<BalanceWeights>) -> Vec<String> {
    match w {
        Some(w) => w.as_array().iter().map(f32::to_string).collect(),
        None => vec![String::new(); 4],
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Dataset(format!("writing csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Dataset(format!("writing csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub const GRID_HEADER: [&str; 19] = [
    "rank",
    "index",
    "b1",
    "b2",
    "d1",
    "d2",
    "val_both_f1",
    "val_loss",
    "best_epoch",
    "epochs",
    "plant_acc",
    "plant_f1",
    "plant_fpr",
    "dis_acc",
    "dis_f1",
    "dis_fpr",
    "both_acc",
    "both_f1",
    "both_fpr",
];

pub fn grid_csv(table: &GridTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GRID_HEADER).map_err(csv_err)?;
    for (rank, r) in table.rows.iter().enumerate() {
        let mut rec = vec![(rank + 1).to_string(), r.index.to_string()];
        rec.extend(weight_cells(Some(r.weights)));
        rec.push(r.val_both_f1.to_string());
        rec.push(r.val_loss.to_string());
        rec.push(r.best_epoch.map(|e| e.to_string()).unwrap_or_default());
        rec.push(r.epochs.to_string());
        rec.extend(r.test.values().iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}
