//! Report files: JSON with full precision, two plot CSVs, and a text summary.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use styleviz_core::metrics::EvaluationReport;

pub const REPORT_JSON: &str = "report.json";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const SCATTER_CSV: &str = "scatter.csv";
pub const SUMMARY_TXT: &str = "summary.txt";

pub fn histogram_csv(report: &EvaluationReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bin-start", "bin-end", "count"]).expect("in-memory write");
    let h = &report.histogram;
    for (i, count) in h.counts.iter().enumerate() {
        w.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), count.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn scatter_csv(report: &EvaluationReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item-id", "mean-rating", "mean-distinctiveness"])
        .expect("in-memory write");
    for p in &report.scatter {
        w.write_record([p.item_id.clone(), p.mean_rating.to_string(), p.mean_distinctiveness.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn summary_text(report: &EvaluationReport) -> String {
    format!(
        "Items with two responses: {}\nResponses: {}\nIncomplete items: {}\n{}\n",
        report.n_items,
        report.n_responses,
        report.n_incomplete,
        report.display()
    )
}

/// Writes the four report files into `dir` and returns their paths.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(report).map_err(io::Error::other)?;
    json.push(b'\n');
    let files = [
        (REPORT_JSON, json),
        (HISTOGRAM_CSV, histogram_csv(report)),
        (SCATTER_CSV, scatter_csv(report)),
        (SUMMARY_TXT, summary_text(report).into_bytes()),
    ];
    let mut out = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes)?;
        out.push(path);
    }
    Ok(out)
}
