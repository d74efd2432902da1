//! Evaluation tables and their CSV / Markdown renderings.
//!
//! Both renderers share one formatting path, so the rounded values are
//! guaranteed identical across output formats. Percentages show one decimal
//! place; undefined rates render as `n/a`.

use super::{SettingAverages, SweepRow, VariabilityCount};

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// A rate in [0, 1], shown as a percentage; `None` when undefined.
    Percent(Option<f64>),
    Count(u64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Percent(Some(v)) => format!("{:.1}%", v * 100.0),
            Cell::Percent(None) => "n/a".to_string(),
            Cell::Count(c) => c.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// Key columns identifying the row (setting values or a score range).
    pub key: Vec<String>,
    pub cells: Vec<Cell>,
}

/// Table-level context recorded with every rendering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableMeta {
    /// Submissions per document in the pool this table was computed from.
    pub submissions: usize,
    /// Documents with at least one non-Abstain verdict (the metric
    /// denominator population).
    pub evaluated: u64,
    /// Documents excluded because every submission abstained.
    pub fully_abstained: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTable {
    pub title: String,
    /// Header names, key columns first.
    pub columns: Vec<String>,
    pub rows: Vec<EvalRow>,
    pub meta: TableMeta,
}

/// Format a sampling value the way the tables key it: `0`, `0.5`, `1.5`.
pub fn format_setting(v: f64) -> String {
    format!("{v}")
}

impl EvalTable {
    fn meta_note(&self) -> String {
        format!(
            "{} submissions per document; {} documents evaluated (>=1 non-abstain verdict), {} fully abstained and excluded",
            self.meta.submissions, self.meta.evaluated, self.meta.fully_abstained
        )
    }

    /// CSV with `#`-prefixed context lines, then a header row, then rows.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.title));
        out.push_str(&format!("# {}\n", self.meta_note()));
        out.push_str(&csv_line(&self.columns));
        for row in &self.rows {
            let mut fields: Vec<String> = row.key.clone();
            fields.extend(row.cells.iter().map(Cell::render));
            out.push_str(&csv_line(&fields));
        }
        out
    }

    /// A captioned Markdown pipe table with identical values to the CSV.
    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("**{}**\n\n", self.title));
        out.push_str(&format!("_{}_\n\n", self.meta_note()));
        out.push_str(&format!("| {} |\n", self.columns.join(" | ")));
        out.push_str(&format!(
            "|{}\n",
            self.columns.iter().map(|_| "---|").collect::<String>()
        ));
        for row in &self.rows {
            let mut fields: Vec<String> = row.key.clone();
            fields.extend(row.cells.iter().map(Cell::render));
            out.push_str(&format!("| {} |\n", fields.join(" | ")));
        }
        out
    }
}

fn csv_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn csv_line<S: AsRef<str>>(fields: &[S]) -> String {
    let mut line = fields
        .iter()
        .map(|f| csv_field(f.as_ref()))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// Averaged precision/recall per setting. Keys by temperature alone when
/// the plan holds a single top-p value, otherwise by (temperature, top-p).
pub fn settings_table(
    averages: &[SettingAverages],
    trials: u32,
    single_top_p: bool,
) -> EvalTable {
    let columns = if single_top_p {
        vec![
            "Temperature".to_string(),
            "Precision".to_string(),
            "Recall".to_string(),
        ]
    } else {
        vec![
            "Temperature".to_string(),
            "Top-P".to_string(),
            "Precision".to_string(),
            "Recall".to_string(),
        ]
    };
    let rows = averages
        .iter()
        .map(|a| {
            let mut key = vec![format_setting(a.temperature)];
            if !single_top_p {
                key.push(format_setting(a.top_p));
            }
            EvalRow {
                key,
                cells: vec![Cell::Percent(a.mean_precision), Cell::Percent(a.mean_recall)],
            }
        })
        .collect();
    let evaluated = averages.iter().map(|a| a.evaluated).max().unwrap_or(0);
    let fully_abstained = averages.iter().map(|a| a.fully_abstained).max().unwrap_or(0);
    EvalTable {
        title: format!(
            "Average precision and recall per sampling setting ({trials} trials per setting)"
        ),
        columns,
        rows,
        meta: TableMeta {
            submissions: trials as usize,
            evaluated,
            fully_abstained,
        },
    }
}

/// Inconsistent/consistent document counts per setting.
pub fn variability_table(
    counts: &[VariabilityCount],
    trials: u32,
    single_top_p: bool,
) -> EvalTable {
    let mut columns = vec!["Temperature".to_string()];
    if !single_top_p {
        columns.push("Top-P".to_string());
    }
    columns.push("Counts for Docs with different classifications".to_string());
    columns.push("Counts for Docs with the same classifications".to_string());

    let rows = counts
        .iter()
        .map(|c| {
            let mut key = vec![format_setting(c.temperature)];
            if !single_top_p {
                key.push(format_setting(c.top_p));
            }
            EvalRow {
                key,
                cells: vec![Cell::Count(c.inconsistent), Cell::Count(c.consistent)],
            }
        })
        .collect();
    let evaluated = counts
        .iter()
        .map(|c| c.inconsistent + c.consistent)
        .max()
        .unwrap_or(0);
    let fully_abstained = counts.iter().map(|c| c.fully_abstained).max().unwrap_or(0);
    EvalTable {
        title: format!(
            "Documents with divergent verdicts across {trials} trials, per sampling setting"
        ),
        columns,
        rows,
        meta: TableMeta {
            submissions: trials as usize,
            evaluated,
            fully_abstained,
        },
    }
}

/// Precision/recall by confidence-score range, rows in descending range
/// order.
pub fn sweep_table(rows: &[SweepRow], pool_label: &str, submissions: usize, fully_abstained: u64) -> EvalTable {
    let evaluated = rows.first().map(|r| r.metrics.evaluated()).unwrap_or(0);
    EvalTable {
        title: format!(
            "Precision and recall by confidence-score range ({pool_label})"
        ),
        columns: vec![
            "Score Range".to_string(),
            "Precision".to_string(),
            "Recall".to_string(),
        ],
        rows: rows
            .iter()
            .map(|r| EvalRow {
                key: vec![r.range_label.clone()],
                cells: vec![
                    Cell::Percent(r.metrics.precision()),
                    Cell::Percent(r.metrics.recall()),
                ],
            })
            .collect(),
        meta: TableMeta {
            submissions,
            evaluated,
            fully_abstained,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::Metrics;

    fn sample_table() -> EvalTable {
        EvalTable {
            title: "sample".into(),
            columns: vec!["Score Range".into(), "Precision".into(), "Recall".into()],
            rows: vec![
                EvalRow {
                    key: vec!["0.90-1.00".into()],
                    cells: vec![Cell::Percent(Some(0.8503)), Cell::Percent(Some(0.535))],
                },
                EvalRow {
                    key: vec!["0.80-0.90".into()],
                    cells: vec![Cell::Percent(None), Cell::Count(12).clone()],
                },
            ],
            meta: TableMeta {
                submissions: 5,
                evaluated: 1200,
                fully_abstained: 3,
            },
        }
    }

    #[test]
    fn percent_formatting_one_decimal() {
        assert_eq!(Cell::Percent(Some(0.834)).render(), "83.4%");
        assert_eq!(Cell::Percent(Some(1.0)).render(), "100.0%");
        assert_eq!(Cell::Percent(Some(0.33416)).render(), "33.4%");
        assert_eq!(Cell::Percent(None).render(), "n/a");
        assert_eq!(Cell::Count(1153).render(), "1153");
    }

    #[test]
    fn setting_keys_trim_trailing_zeroes() {
        assert_eq!(format_setting(0.0), "0");
        assert_eq!(format_setting(0.5), "0.5");
        assert_eq!(format_setting(1.0), "1");
        assert_eq!(format_setting(1.5), "1.5");
    }

    #[test]
    fn csv_and_markdown_carry_identical_values() {
        let t = sample_table();
        let csv = t.render_csv();
        let md = t.render_markdown();
        for value in ["85.0%", "53.5%", "n/a", "12"] {
            assert!(csv.contains(value), "csv missing {value}:\n{csv}");
            assert!(md.contains(value), "md missing {value}:\n{md}");
        }
    }

    #[test]
    fn csv_header_follows_comment_lines() {
        let t = sample_table();
        let csv = t.render_csv();
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "Score Range,Precision,Recall");
    }

    #[test]
    fn sweep_table_shape() {
        let metrics = Metrics {
            tp: 1,
            fp: 1,
            fn_: 1,
            tn: 1,
        };
        let rows: Vec<SweepRow> = crate::analytics::sweep_thresholds()
            .into_iter()
            .map(|(threshold, range_label)| SweepRow {
                threshold,
                range_label,
                metrics,
            })
            .collect();
        let t = sweep_table(&rows, "5 submissions, temperature 0, top-p 0.9", 5, 0);
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.rows[0].key, vec!["0.90-1.00".to_string()]);
        assert_eq!(t.rows[9].key, vec!["0.00-0.10".to_string()]);
    }
}
