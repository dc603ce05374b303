//! Plain-text summaries of run and sweep output directories.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use super::metrics::{last_step, parse_metrics_csv, MetricsRow};
use super::run::CycleRecord;
use crate::error::{LencError, Result};

/// Final accuracy per node and task, plus cycle outcome counts.
pub fn summarize_run(rows: &[MetricsRow], cycles: &[CycleRecord]) -> String {
    let mut s = String::new();
    let step = last_step(rows);
    let last: Vec<&MetricsRow> = rows.iter().filter(|r| r.step == step).collect();
    let tasks = last.iter().map(|r| r.task + 1).max().unwrap_or(0);
    let mut by_node: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &last {
        by_node.entry(r.node).or_insert_with(|| vec![0.0; tasks])[r.task] = r.accuracy;
    }
    let _ = write!(s, "{:>6}", "node");
    for t in 0..tasks {
        let _ = write!(s, "{:>9}", format!("task{t}"));
    }
    let _ = writeln!(s, "{:>9}", "mean");
    for (node, accs) in &by_node {
        let _ = write!(s, "{node:>6}");
        for a in accs {
            let _ = write!(s, "{:>9.2}", 100.0 * a);
        }
        let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        let _ = writeln!(s, "{:>9.2}", 100.0 * mean);
    }
    let community = last.first().map_or(0.0, |r| r.community_accuracy);
    let _ = writeln!(s, "community accuracy after step {step}: {:.2}%", 100.0 * community);

    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    let mut teachers: BTreeMap<u32, usize> = BTreeMap::new();
    let mut bytes = 0u64;
    for c in cycles {
        let key = match &c.report {
            Some(r) => {
                bytes += r.bytes;
                if let Some(t) = r.teacher {
                    *teachers.entry(t).or_default() += 1;
                }
                format!("{:?}", r.outcome).split('(').next().unwrap_or("").to_string()
            }
            None => "Error".to_string(),
        };
        *outcomes.entry(key).or_default() += 1;
    }
    let _ = writeln!(s, "cycles: {}", cycles.len());
    for (k, n) in &outcomes {
        let _ = writeln!(s, "  {k}: {n}");
    }
    for (t, n) in &teachers {
        let _ = writeln!(s, "  teacher {t} chosen {n}x");
    }
    let _ = writeln!(s, "bytes transferred: {bytes}");
    s
}

/// Reads a run directory (`metrics.csv`, `reports.json`) or a sweep
/// directory (`aggregate.csv`) and renders a summary.
pub fn report_dir(dir: &Path) -> Result<String> {
    let agg = dir.join("aggregate.csv");
    if agg.exists() {
        return summarize_aggregate(&std::fs::read_to_string(agg)?);
    }
    let rows = parse_metrics_csv(&std::fs::read_to_string(dir.join("metrics.csv"))?)?;
    let cycles: Vec<CycleRecord> = match std::fs::read_to_string(dir.join("reports.json")) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| LencError::Config(e.to_string()))?,
        Err(_) => Vec::new(),
    };
    Ok(summarize_run(&rows, &cycles))
}

fn summarize_aggregate(text: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut s = String::new();
    let _ = writeln!(s, "{:>12} {:>10} {:<20} {:>16} {:>5}", "axis", "value", "metric", "mean ± std", "fail");
    for rec in r.records() {
        let rec = rec.map_err(|e| LencError::Io(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let mean: f64 = f(3).parse().unwrap_or(f64::NAN);
        let std: f64 = f(4).parse().unwrap_or(f64::NAN);
        let cell = if f(2).ends_with("accuracy") {
            format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
        } else {
            format!("{mean:.0} ± {std:.0}")
        };
        let _ = writeln!(s, "{:>12} {:>10} {:<20} {:>16} {:>5}", f(0), f(1), f(2), cell, f(6));
    }
    Ok(s)
}
