//! Plain-text summary tables from metrics CSV rows.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub slice: String,
    pub config: String,
    pub seed: u64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Parses rows in the `slice,config,seed,accuracy,f1,n_scenes,n_objects`
/// format produced by the eval and ablate commands.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("slice,") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(Error::Malformed { line: i + 1, msg: format!("expected >= 5 fields, got {}", fields.len()) });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Malformed { line: i + 1, msg: format!("bad {what}: {s}") })
        };
        rows.push(MetricsRow {
            slice: fields[0].to_string(),
            config: fields[1].to_string(),
            seed: parse(fields[2], "seed")? as u64,
            accuracy: parse(fields[3], "accuracy")?,
            f1: parse(fields[4], "f1")?,
        });
    }
    Ok(rows)
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Renders a per-slice table with one column per config; cells hold
/// `accuracy / F1` means (plus-minus std when multiple seeds are present).
pub fn render_table(rows: &[MetricsRow]) -> String {
    let mut configs: Vec<String> = Vec::new();
    for r in rows {
        if !configs.contains(&r.config) {
            configs.push(r.config.clone());
        }
    }
    let slices = ["left", "forward", "right", "all"];
    let col_w = configs.iter().map(|c| c.len()).chain([18]).max().unwrap_or(18).max(14) + 2;
    let mut out = String::new();
    out.push_str(&format!("{:<12}{:<10}", "slice", "metric"));
    for c in &configs {
        out.push_str(&format!("{:>w$}", c, w = col_w));
    }
    out.push('\n');
    out.push_str(&"-".repeat(12 + 10 + col_w * configs.len()));
    out.push('\n');
    for slice in slices {
        for (metric, pick) in [("accuracy", 0), ("f1", 1)] {
            out.push_str(&format!("{:<12}{:<10}", slice, metric));
            for c in &configs {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.slice == slice && &r.config == c)
                    .map(|r| if pick == 0 { r.accuracy } else { r.f1 })
                    .collect();
                if vals.is_empty() {
                    out.push_str(&format!("{:>w$}", "-", w = col_w));
                } else if vals.len() == 1 {
                    out.push_str(&format!("{:>w$}", format!("{:.2}", vals[0]), w = col_w));
                } else {
                    let (m, s) = mean_std(&vals);
                    out.push_str(&format!("{:>w$}", format!("{m:.2}±{s:.2}"), w = col_w));
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_into_a_table() {
        let csv = "slice,config,seed,accuracy,f1,n_scenes,n_objects\n\
                   all,S,0,90.5,80.25,10,60\n\
                   all,S,1,91.5,81.75,10,60\n\
                   forward,S,0,92,83,7,40\n";
        let rows = parse_metrics_csv(csv).unwrap();
        assert_eq!(rows.len(), 3);
        let table = render_table(&rows);
        assert!(table.contains("91.00"), "{table}");
        assert!(table.contains('±'), "{table}");
    }

    #[test]
    fn malformed_rows_are_reported_with_line_numbers() {
        let err = parse_metrics_csv("all,S,zero,1,2,3,4").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
