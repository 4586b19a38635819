use super::MetricsReport;

/// Percentage with at most one decimal; a trailing `.0` is dropped (`0.78 → "78%"`).
pub fn format_percent(x: f64) -> String {
    let tenths = (x * 1000.0).round() / 10.0;
    if tenths.fract() == 0.0 {
        format!("{tenths:.0}%")
    } else {
        format!("{tenths:.1}%")
    }
}

pub struct Comparison {
    pub table: String,
    pub json: String,
}

const HEADERS: [&str; 5] = ["Algorithm", "Precision", "Recall", "Exact Matches", "Accuracy"];

/// Aligned text table plus a JSON array of the same rows with raw floats.
pub fn render_comparison(rows: &[MetricsReport]) -> Comparison {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.algorithm.clone(),
                format_percent(r.precision),
                format_percent(r.recall),
                format_percent(r.exact_match),
                format_percent(r.token_accuracy),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: [&str; 5]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i + 1 == row.len() {
                s.push_str(c);
            } else {
                s.push_str(&format!("{c:<w$}  "));
            }
        }
        s.push('\n');
        s
    };
    let mut table = line(HEADERS);
    let rule_len = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    table.push_str(&"-".repeat(rule_len));
    table.push('\n');
    for row in &cells {
        table.push_str(&line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
    }
    let json = serde_json::to_string_pretty(rows).expect("reports always serialize");
    Comparison { table, json }
}
