//! Per-condition metric tables with percent deltas against a named baseline.
//!
//! Columns run B1..B4, then R1/R2/RL precision, recall, F1 — thirteen metrics
//! per row. Markdown output uses display rounding (values to 4 decimals,
//! deltas to 1); CSV keeps full precision.

use crate::metrics::MetricBundle;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const METRIC_COUNT: usize = 13;

pub const METRIC_NAMES: [&str; METRIC_COUNT] = [
    "B1", "B2", "B3", "B4", "R1-P", "R1-R", "R1-F", "R2-P", "R2-R", "R2-F", "RL-P", "RL-R", "RL-F",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("baseline '{baseline}' not found among conditions: {available:?}")]
    UnknownBaseline { baseline: String, available: Vec<String> },
}

/// One evaluated condition: a name, its macro-averaged bundle, and how many
/// instances went into the average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition_name: String,
    pub bundle: MetricBundle,
    pub n_instances: usize,
}

/// Flatten a bundle into the canonical column order.
pub fn metric_values(bundle: &MetricBundle) -> [f64; METRIC_COUNT] {
    [
        bundle.bleu[0],
        bundle.bleu[1],
        bundle.bleu[2],
        bundle.bleu[3],
        bundle.rouge1.precision,
        bundle.rouge1.recall,
        bundle.rouge1.f1,
        bundle.rouge2.precision,
        bundle.rouge2.recall,
        bundle.rouge2.f1,
        bundle.rouge_l.precision,
        bundle.rouge_l.recall,
        bundle.rouge_l.f1,
    ]
}

/// 100 * (value - baseline) / baseline, full precision. A zero baseline has
/// no defined delta.
pub fn percent_delta(value: f64, baseline: f64) -> Option<f64> {
    if baseline == 0.0 {
        None
    } else {
        Some(100.0 * (value - baseline) / baseline)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub condition_name: String,
    pub n_instances: usize,
    pub values: [f64; METRIC_COUNT],
    pub deltas: [Option<f64>; METRIC_COUNT],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub baseline_name: String,
    pub rows: Vec<DeltaRow>,
}

/// Build the table in input row order. The baseline row carries all-zero
/// deltas; every other row is measured against it.
pub fn build_table(results: &[ConditionResult], baseline: &str) -> Result<DeltaTable, ReportError> {
    let base = results
        .iter()
        .find(|r| r.condition_name == baseline)
        .ok_or_else(|| ReportError::UnknownBaseline {
            baseline: baseline.to_string(),
            available: results.iter().map(|r| r.condition_name.clone()).collect(),
        })?;
    let base_values = metric_values(&base.bundle);

    let rows = results
        .iter()
        .map(|r| {
            let values = metric_values(&r.bundle);
            let mut deltas = [None; METRIC_COUNT];
            for i in 0..METRIC_COUNT {
                deltas[i] = if r.condition_name == baseline {
                    Some(0.0)
                } else {
                    percent_delta(values[i], base_values[i])
                };
            }
            DeltaRow {
                condition_name: r.condition_name.clone(),
                n_instances: r.n_instances,
                values,
                deltas,
            }
        })
        .collect();

    Ok(DeltaTable { baseline_name: baseline.to_string(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

/// Deterministic rendering. Improvements over the baseline print positive.
pub fn render(table: &DeltaTable, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(table),
        ReportFormat::Csv => render_csv(table),
        ReportFormat::Json => {
            let mut out = serde_json::to_string_pretty(table).expect("table serializes");
            out.push('\n');
            out
        }
    }
}

fn render_markdown(table: &DeltaTable) -> String {
    let mut out = String::new();
    let _ = write!(out, "| Condition |");
    for name in METRIC_NAMES {
        let _ = write!(out, " {name} |");
    }
    out.push('\n');
    let _ = write!(out, "|---|{}", "---|".repeat(METRIC_COUNT));
    out.push('\n');
    for row in &table.rows {
        let is_baseline = row.condition_name == table.baseline_name;
        let _ = write!(out, "| {} |", row.condition_name);
        for i in 0..METRIC_COUNT {
            if is_baseline {
                let _ = write!(out, " {:.4} |", row.values[i]);
            } else {
                match row.deltas[i] {
                    Some(d) => {
                        let _ = write!(out, " {:.4} ({:+.1}%) |", row.values[i], d);
                    }
                    None => {
                        let _ = write!(out, " {:.4} (—) |", row.values[i]);
                    }
                }
            }
        }
        out.push('\n');
    }
    out
}

fn render_csv(table: &DeltaTable) -> String {
    let mut out = String::from("condition,n_instances");
    for name in METRIC_NAMES {
        let _ = write!(out, ",{name},{name}_delta_pct");
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(out, "{},{}", row.condition_name, row.n_instances);
        for i in 0..METRIC_COUNT {
            match row.deltas[i] {
                Some(d) => {
                    let _ = write!(out, ",{},{}", row.values[i], d);
                }
                None => {
                    let _ = write!(out, ",{},", row.values[i]);
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Write report.md, report.csv, and report.json into `dir`.
pub fn write_report_files(table: &DeltaTable, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.md"), render(table, ReportFormat::Markdown))?;
    std::fs::write(dir.join("report.csv"), render(table, ReportFormat::Csv))?;
    std::fs::write(dir.join("report.json"), render(table, ReportFormat::Json))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RougeScore;

    fn bundle_from(values: [f64; METRIC_COUNT]) -> MetricBundle {
        MetricBundle {
            bleu: [values[0], values[1], values[2], values[3]],
            rouge1: RougeScore { precision: values[4], recall: values[5], f1: values[6] },
            rouge2: RougeScore { precision: values[7], recall: values[8], f1: values[9] },
            rouge_l: RougeScore { precision: values[10], recall: values[11], f1: values[12] },
        }
    }

    fn condition(name: &str, values: [f64; METRIC_COUNT]) -> ConditionResult {
        ConditionResult {
            condition_name: name.to_string(),
            bundle: bundle_from(values),
            n_instances: 10,
        }
    }

    #[test]
    fn percent_delta_reproduces_verified_reported_values() {
        // each pair checked against the published score pairs by hand
        let d = percent_delta(0.5443, 0.4867).unwrap();
        assert!((d - 11.8).abs() <= 0.05, "got {d}");
        let d = percent_delta(0.2572, 0.2223).unwrap();
        assert!((d - 15.7).abs() <= 0.05, "got {d}");
        let d = percent_delta(0.4430, 0.4068).unwrap();
        assert!((d - 8.9).abs() <= 0.05, "got {d}");
        let d = percent_delta(0.4034, 0.4151).unwrap();
        assert!((d - -2.8).abs() <= 0.05, "got {d}");
        assert_eq!(percent_delta(0.5, 0.5), Some(0.0));
        assert_eq!(percent_delta(0.5, 0.0), None);
    }

    #[test]
    fn build_table_shape_and_baseline_invariants() {
        let a = condition("base", [0.2; METRIC_COUNT]);
        let b = condition("other", [0.3; METRIC_COUNT]);
        let table = build_table(&[a, b], "base").unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows[0].deltas.iter().all(|d| *d == Some(0.0)));
        assert_eq!(table.rows[1].deltas.len(), METRIC_COUNT);
        for d in table.rows[1].deltas.iter().flatten() {
            assert!((d - 50.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_condition_is_its_own_baseline() {
        let a = condition("only", [0.4; METRIC_COUNT]);
        let table = build_table(&[a], "only").unwrap();
        assert!(table.rows[0].deltas.iter().all(|d| *d == Some(0.0)));
    }

    #[test]
    fn unknown_baseline_lists_available_conditions() {
        let a = condition("x", [0.4; METRIC_COUNT]);
        match build_table(&[a], "y") {
            Err(ReportError::UnknownBaseline { baseline, available }) => {
                assert_eq!(baseline, "y");
                assert_eq!(available, vec!["x".to_string()]);
            }
            other => panic!("expected UnknownBaseline, got {other:?}"),
        }
    }

    #[test]
    fn zero_baseline_renders_as_undefined() {
        let mut base_values = [0.2; METRIC_COUNT];
        base_values[0] = 0.0;
        let a = condition("base", base_values);
        let b = condition("other", [0.3; METRIC_COUNT]);
        let table = build_table(&[a, b], "base").unwrap();
        assert_eq!(table.rows[1].deltas[0], None);
        let md = render(&table, ReportFormat::Markdown);
        assert!(md.contains("(—)"));
        let csv = render(&table, ReportFormat::Csv);
        assert!(csv.contains("0.3,,"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = condition("base", [0.2; METRIC_COUNT]);
        let b = condition("other", [0.3; METRIC_COUNT]);
        let table = build_table(&[a, b], "base").unwrap();
        for fmt in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
            assert_eq!(render(&table, fmt), render(&table, fmt));
        }
    }

    #[test]
    fn empty_rows_render_header_only() {
        let table = DeltaTable { baseline_name: "none".into(), rows: vec![] };
        let md = render(&table, ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 2);
        let csv = render(&table, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn markdown_shows_signed_one_decimal_deltas() {
        let a = condition("base", [0.4867; METRIC_COUNT]);
        let b = condition("improved", [0.5443; METRIC_COUNT]);
        let table = build_table(&[a, b], "base").unwrap();
        let md = render(&table, ReportFormat::Markdown);
        assert!(md.contains("0.5443 (+11.8%)"), "markdown was:\n{md}");
        assert!(md.lines().nth(2).unwrap().starts_with("| base | 0.4867 |"));
    }

    #[test]
    fn markdown_golden_two_row_table() {
        let mut base_values = [0.0; METRIC_COUNT];
        let mut row_values = [0.0; METRIC_COUNT];
        for i in 0..METRIC_COUNT {
            base_values[i] = 0.1 + i as f64 / 100.0;
            row_values[i] = 0.2 + i as f64 / 100.0;
        }
        let table = build_table(
            &[condition("zero_shot", base_values), condition("category_focused", row_values)],
            "zero_shot",
        )
        .unwrap();
        let golden = "\
| Condition | B1 | B2 | B3 | B4 | R1-P | R1-R | R1-F | R2-P | R2-R | R2-F | RL-P | RL-R | RL-F |
|---|---|---|---|---|---|---|---|---|---|---|---|---|---|
| zero_shot | 0.1000 | 0.1100 | 0.1200 | 0.1300 | 0.1400 | 0.1500 | 0.1600 | 0.1700 | 0.1800 | 0.1900 | 0.2000 | 0.2100 | 0.2200 |
| category_focused | 0.2000 (+100.0%) | 0.2100 (+90.9%) | 0.2200 (+83.3%) | 0.2300 (+76.9%) | 0.2400 (+71.4%) | 0.2500 (+66.7%) | 0.2600 (+62.5%) | 0.2700 (+58.8%) | 0.2800 (+55.6%) | 0.2900 (+52.6%) | 0.3000 (+50.0%) | 0.3100 (+47.6%) | 0.3200 (+45.5%) |
";
        assert_eq!(render(&table, ReportFormat::Markdown), golden);
    }

    #[test]
    fn csv_keeps_full_precision() {
        let a = condition("base", [0.3; METRIC_COUNT]);
        let b = condition("other", [0.4; METRIC_COUNT]);
        let table = build_table(&[a, b], "base").unwrap();
        let csv = render(&table, ReportFormat::Csv);
        let delta = percent_delta(0.4, 0.3).unwrap();
        assert!(csv.contains(&format!("{delta}")));
    }
}
