//! Line-delimited JSON records and aligned text tables for reports.

use super::experiment::{MetricsReport, RunRecord};

/// One JSON object per line.
pub fn records_jsonl<'a>(records: impl IntoIterator<Item = &'a RunRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Pads every column to its widest cell; the first row is the header and is
/// followed by a rule.
pub fn aligned_table(rows: &[Vec<String>]) -> String {
    let Some(header) = rows.first() else {
        return String::new();
    };
    let mut widths = vec![0; header.len()];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let render = |row: &Vec<String>| {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        cells.join(" | ").trim_end().to_string()
    };
    let mut out = render(header);
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for row in &rows[1..] {
        out.push_str(&render(row));
        out.push('\n');
    }
    out
}

pub fn format_sparsity(sparsity: Option<f64>) -> String {
    sparsity.map_or_else(|| "-".to_string(), |s| format!("{:.1}%", 100.0 * s))
}

/// `RMSE`, `MAE`, `MAPE` cells as `mean ± std`.
pub fn metric_cells(report: &MetricsReport) -> [String; 3] {
    [
        report.rmse.display(2),
        report.mae.display(2),
        format!("{:.2}% ± {:.2}%", report.mape.mean, report.mape.std),
    ]
}

/// Comparison table with one row per report.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let mut rows = vec![["Model", "Sparsity", "RMSE", "MAE", "MAPE"].map(String::from).to_vec()];
    for r in reports {
        let [rmse, mae, mape] = metric_cells(r);
        rows.push(vec![r.label.clone(), format_sparsity(r.sparsity), rmse, mae, mape]);
    }
    aligned_table(&rows)
}

/// Per-item breakdown of one report.
pub fn product_table(report: &MetricsReport) -> String {
    let mut rows = vec![["Item", "RMSE", "MAE", "MAPE"].map(String::from).to_vec()];
    for p in &report.products {
        rows.push(vec![
            p.item.to_string(),
            p.rmse.display(2),
            p.mae.display(2),
            format!("{:.2}% ± {:.2}%", p.mape.mean, p.mape.std),
        ]);
    }
    aligned_table(&rows)
}
