use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{write_json, At, PipelineError, Stage};
use crate::data::write_rows;
use crate::metrics::{aggregate, MetricsReport};

/// Scalar metrics in output column order.
pub const METRICS: [&str; 8] = [
    "fooling_ratio",
    "mean_feature_change",
    "mean_jsd",
    "correlation_diff",
    "correlation_diff_scope",
    "adversarial_mean_abs_correlation",
    "accuracy",
    "auroc",
];

/// One attack run or one retrained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    /// Index of the configuration cell (grid point or strategy).
    pub cell: usize,
    pub config: String,
    pub n_vars: Option<usize>,
    pub run: usize,
    pub seed: u64,
    pub report: MetricsReport,
    #[serde(default)]
    pub reduced_size: Option<usize>,
    #[serde(default)]
    pub augmented_size: Option<usize>,
    /// Adversaries that actually flipped the model before any fill.
    #[serde(default)]
    pub flipped: Option<usize>,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("cell{:03}_run{:03}.json", self.cell, self.run)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub metric: String,
    pub mean: f64,
    pub rms: f64,
    pub n: usize,
}

/// Mean and RMS deviation of every metric over the runs of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub cell: usize,
    pub config: String,
    pub n_vars: Option<usize>,
    pub runs: usize,
    pub metrics: Vec<MetricAggregate>,
}

impl CellAggregate {
    pub fn get(&self, metric: &str) -> Option<&MetricAggregate> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Groups records by cell (in cell order) and aggregates each metric.
pub fn aggregate_records(records: &[RunRecord]) -> Vec<CellAggregate> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.cell, r.run));
    let mut out: Vec<CellAggregate> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.cell == b.cell) {
        let first = group[0];
        let metrics = METRICS
            .iter()
            .filter_map(|&name| {
                let values: Vec<f64> = group
                    .iter()
                    .filter_map(|r| r.report.scalars().into_iter().find(|(n, _)| *n == name).map(|(_, v)| v))
                    .collect();
                aggregate(&values).ok().map(|a| MetricAggregate {
                    metric: name.to_string(),
                    mean: a.mean,
                    rms: a.rms,
                    n: a.n,
                })
            })
            .collect();
        out.push(CellAggregate {
            cell: first.cell,
            config: first.config.clone(),
            n_vars: first.n_vars,
            runs: group.len(),
            metrics,
        });
    }
    out
}

/// One row per cell with `<metric>_mean` and `<metric>_rms` columns; metrics
/// a cell lacks are left empty.
pub fn write_aggregate_csv(path: &Path, cells: &[CellAggregate]) -> Result<(), PipelineError> {
    let mut header: Vec<String> = ["cell", "config", "n_vars", "runs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_rms"));
    }
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut r = vec![
                c.cell.to_string(),
                c.config.clone(),
                c.n_vars.map(|v| v.to_string()).unwrap_or_default(),
                c.runs.to_string(),
            ];
            for m in METRICS {
                match c.get(m) {
                    Some(a) => {
                        r.push(a.mean.to_string());
                        r.push(a.rms.to_string());
                    }
                    None => r.extend([String::new(), String::new()]),
                }
            }
            r
        })
        .collect();
    write_rows(path, &header, &rows).at(Stage::Persist)
}

/// `config, run, metric, value` with one row per scalar metric of each run.
pub(crate) fn write_tidy_csv(path: &Path, records: &[RunRecord]) -> Result<(), PipelineError> {
    let header: Vec<String> = ["config", "n_vars", "run", "metric", "value"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in records {
        for (name, v) in r.report.scalars() {
            rows.push(vec![
                r.config.clone(),
                r.n_vars.map(|v| v.to_string()).unwrap_or_default(),
                r.run.to_string(),
                name.to_string(),
                v.to_string(),
            ]);
        }
    }
    write_rows(path, &header, &rows).at(Stage::Persist)
}

/// `n_vars, mean, std` series for one metric.
pub(crate) fn write_plot_csv(path: &Path, cells: &[CellAggregate], metric: &str) -> Result<(), PipelineError> {
    let header: Vec<String> = ["n_vars", "mean", "std"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = cells
        .iter()
        .filter_map(|c| {
            let a = c.get(metric)?;
            Some(vec![
                c.n_vars.map(|v| v.to_string()).unwrap_or_else(|| c.config.clone()),
                a.mean.to_string(),
                a.rms.to_string(),
            ])
        })
        .collect();
    write_rows(path, &header, &rows).at(Stage::Persist)
}

pub(crate) fn write_records(out: &Path, records: &[RunRecord]) -> Result<(), PipelineError> {
    let dir = out.join("metrics");
    fs::create_dir_all(&dir).at(Stage::Persist)?;
    for r in records {
        write_json(&dir.join(r.file_name()), r)?;
    }
    Ok(())
}

/// Writes records, aggregate, tidy and plot files; returns the aggregates.
pub(crate) fn persist_results(
    out: &Path,
    records: &[RunRecord],
    plots: &[&str],
) -> Result<Vec<CellAggregate>, PipelineError> {
    write_records(out, records)?;
    let cells = aggregate_records(records);
    write_aggregate_csv(&out.join("aggregate.csv"), &cells)?;
    write_tidy_csv(&out.join("tidy.csv"), records)?;
    for m in plots {
        write_plot_csv(&out.join(format!("plot_{m}.csv")), &cells, m)?;
    }
    Ok(cells)
}

/// Every per-run record under `<run_dir>/metrics`, in cell and run order.
pub fn read_records(run_dir: &Path) -> Result<Vec<RunRecord>, PipelineError> {
    let dir = run_dir.join("metrics");
    let missing = || PipelineError::MissingRunArtifacts(run_dir.to_path_buf());
    let entries = fs::read_dir(&dir).map_err(|_| missing())?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(&p).at(Stage::Report)?;
        records.push(serde_json::from_str::<RunRecord>(&text).at(Stage::Report)?);
    }
    if records.is_empty() {
        return Err(missing());
    }
    records.sort_by_key(|r| (r.cell, r.run));
    Ok(records)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub aggregate: PathBuf,
    pub cells: Vec<CellAggregate>,
}

/// Rebuilds the aggregate table from persisted records and writes
/// `report.md` and `report_aggregate.csv`. Never recomputes metrics.
pub fn generate_report(run_dir: &Path) -> Result<ReportFiles, PipelineError> {
    let records = read_records(run_dir)?;
    let cells = aggregate_records(&records);
    let aggregate = run_dir.join("report_aggregate.csv");
    write_aggregate_csv(&aggregate, &cells)?;
    let markdown = run_dir.join("report.md");
    fs::write(&markdown, render_markdown(&cells)).at(Stage::Persist)?;
    Ok(ReportFiles {
        markdown,
        aggregate,
        cells,
    })
}

fn render_markdown(cells: &[CellAggregate]) -> String {
    let present: Vec<&str> = METRICS
        .iter()
        .copied()
        .filter(|m| cells.iter().any(|c| c.get(m).is_some()))
        .collect();
    let mut s = String::from("# Run report\n\nMean ± RMS over runs.\n\n| config | runs |");
    for m in &present {
        s.push_str(&format!(" {m} |"));
    }
    s.push_str("\n|---|---|");
    for _ in &present {
        s.push_str("---|");
    }
    s.push('\n');
    for c in cells {
        s.push_str(&format!("| {} | {} |", c.config, c.runs));
        for m in &present {
            match c.get(m) {
                Some(a) => s.push_str(&format!(" {:.4} ± {:.4} |", a.mean, a.rms)),
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    s
}
