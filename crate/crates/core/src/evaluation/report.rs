//! Report rendering: JSON, plain-text tables and a per-step timing CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::benchmark::{BenchmarkReport, STEPS};

/// One row per labelled run: instances, update time, mAP, P, R, F1 and the
/// confidence threshold.
pub fn summary_table(rows: &[(&str, &BenchmarkReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(7);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} | {:>6} | {:>8} | {:>5} | {:>5} | {:>5} | {:>5} | {:>6}",
        "Run", "Ins.", "Time [s]", "mAP", "P", "R", "F1", "Thresh"
    );
    let _ = writeln!(out, "{}", "-".repeat(width + 62));
    for (label, r) in rows {
        let processed: Vec<_> = r.images.iter().filter(|i| i.error.is_none()).collect();
        let secs = if processed.is_empty() {
            0.0
        } else {
            processed.iter().map(|i| i.times.total().as_secs_f64()).sum::<f64>() / processed.len() as f64
        };
        let m = &r.metrics;
        let thresh = m.threshold.map_or("-".to_string(), |t| format!("{t:.3}"));
        let _ = writeln!(
            out,
            "{:<width$} | {:>6.1} | {:>8.2} | {:>5.2} | {:>5.2} | {:>5.2} | {:>5.2} | {:>6}",
            label, r.mean_grounded, secs, m.map, m.precision, m.recall, m.f1, thresh
        );
    }
    out
}

pub fn per_class_table(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<32} | {:>4} | {:>5} | {:>6} | {:>6}", "Class", "GT", "Dets", "AP", "AP50");
    let _ = writeln!(out, "{}", "-".repeat(65));
    for c in &report.metrics.per_class {
        let name = report.class_names.get(c.class).map(String::as_str).unwrap_or("?");
        let name: String = name.chars().take(32).collect();
        let _ = writeln!(
            out,
            "{:<32} | {:>4} | {:>5} | {:>6.3} | {:>6.3}",
            name, c.ground_truth, c.detections, c.ap, c.ap50
        );
    }
    out
}

/// `step,images,total_ms,mean_ms` in pipeline order.
pub fn timing_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("step,images,total_ms,mean_ms\n");
    for step in STEPS {
        if let Some(r) = report.timing.iter().find(|r| r.step == step) {
            let _ = writeln!(out, "{},{},{:.3},{:.3}", r.step, r.images, r.total_ms, r.mean_ms);
        }
    }
    out
}

/// Writes `report.json`, `metrics.txt` and `timing.csv` under `dir`.
pub fn write_reports(dir: &Path, label: &str, report: &BenchmarkReport) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join("report.json");
    std::fs::write(&json, serde_json::to_vec_pretty(report)?)?;
    let txt = dir.join("metrics.txt");
    std::fs::write(&txt, format!("{}\n{}", summary_table(&[(label, report)]), per_class_table(report)))?;
    let csv = dir.join("timing.csv");
    std::fs::write(&csv, timing_csv(report))?;
    Ok(vec![json, txt, csv])
}
