//! Result rows: one per simulation cell, rendered once and reused verbatim
//! by both the console table and the CSV file so the two never disagree.

use std::io::Write;
use std::path::Path;

use cartrial_core::SimulationSummary;

use crate::cells::ResolvedCell;

pub const HEADER: [&str; 14] = [
    "dgp",
    "model",
    "scheme",
    "test",
    "metric",
    "iota1",
    "iota2",
    "stage1_rate",
    "stage2_rate",
    "overall_rate",
    "mc_se",
    "invalid_count",
    "reps",
    "seed",
];

/// One cell's rendered result line.
pub struct Row {
    pub fields: [String; 14],
}

/// Rates are percentages with two decimals; the Monte Carlo standard error
/// is a percentage with four.
pub fn build_row(cell: &ResolvedCell, seed: u64, summary: &SimulationSummary) -> Row {
    let pct = |r: f64| format!("{:.2}", r * 100.0);
    Row {
        fields: [
            cell.dgp_token.to_string(),
            cell.model_token.to_string(),
            cell.scheme_token.to_string(),
            cell.test_token.to_string(),
            cell.metric_token.to_string(),
            format!("{}", cell.iota1),
            format!("{}", cell.iota2),
            pct(summary.stage1_rate),
            pct(summary.stage2_rate),
            pct(summary.overall_rate),
            format!("{:.4}", summary.mc_se * 100.0),
            summary.invalid.to_string(),
            summary.replications.to_string(),
            seed.to_string(),
        ],
    }
}

pub fn to_csv(rows: &[Row]) -> String {
    let mut out = String::new();
    out.push_str(&HEADER.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, rows: &[Row]) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(to_csv(rows).as_bytes())?;
    file.flush()
}

/// Aligned console table built from the same strings the CSV uses.
pub fn render_table(rows: &[Row]) -> String {
    let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, f) in widths.iter_mut().zip(row.fields.iter()) {
            *w = (*w).max(f.len());
        }
    }
    let mut out = String::new();
    let mut line = |fields: &[&str]| {
        let cells: Vec<String> = fields
            .iter()
            .zip(widths.iter())
            .map(|(f, w)| format!("{f:>w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    };
    line(&HEADER);
    for row in rows {
        let fields: Vec<&str> = row.fields.iter().map(String::as_str).collect();
        line(&fields);
    }
    out
}
