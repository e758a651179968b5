//! Result rows and Markdown tables in the layouts of the error-rate,
//! keyword-error-rate and bias-breakdown tables.

use serde::{Deserialize, Serialize};

use super::MetricReport;
use crate::corpus::KeywordMode;

pub const CHECK: &str = "✓";
pub const CROSS: &str = "✗";

pub fn train_mark(mode: KeywordMode) -> &'static str {
    match mode {
        KeywordMode::None => "",
        KeywordMode::Duplicated => CHECK,
        KeywordMode::KeywordsOnly => CROSS,
    }
}

pub fn inference_mark(with_keywords: bool) -> &'static str {
    if with_keywords {
        CHECK
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub kw_train: KeywordMode,
    pub kw_inference: bool,
    pub dataset: String,
    pub split: String,
    pub report: MetricReport,
}

type RowKey = (String, KeywordMode, bool);

fn row_key(r: &ResultRow) -> RowKey {
    (r.model.clone(), r.kw_train, r.kw_inference)
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

/// One line per (model, KW@Train, KW@Inference); one column per
/// (dataset, split), both in order of first appearance. Empty cells where a
/// combination was not evaluated.
fn grid(rows: &[ResultRow], value: impl Fn(&ResultRow) -> Option<f64>) -> String {
    let mut keys: Vec<RowKey> = Vec::new();
    let mut cols: Vec<(String, String)> = Vec::new();
    for r in rows {
        if value(r).is_some() {
            push_unique(&mut keys, row_key(r));
            push_unique(&mut cols, (r.dataset.clone(), r.split.clone()));
        }
    }
    let mut out = String::from("| Model | KW@Train | KW@Inference |");
    for (d, s) in &cols {
        out.push_str(&format!(" {d} {s} |"));
    }
    out.push_str("\n|---|---|---|");
    for _ in &cols {
        out.push_str("---:|");
    }
    out.push('\n');
    for key in &keys {
        out.push_str(&format!(
            "| {} | {} | {} |",
            key.0,
            train_mark(key.1),
            inference_mark(key.2)
        ));
        for (d, s) in &cols {
            let cell = rows
                .iter()
                .find(|r| row_key(r) == *key && &r.dataset == d && &r.split == s)
                .and_then(&value)
                .map(|v| format!("{v:.2}"))
                .unwrap_or_default();
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

pub fn rate_table(rows: &[ResultRow]) -> String {
    grid(rows, |r| Some(r.report.rate))
}

pub fn kwer_table(rows: &[ResultRow]) -> String {
    grid(rows, |r| r.report.kwer)
}

/// KWER, error rate and the operation breakdown, one line per row.
pub fn bias_table(rows: &[ResultRow]) -> String {
    let metric = rows.first().map_or("CER", |r| r.report.unit.metric_name());
    let mut out = format!(
        "| KW@Train | KW@Inference | KWER | {metric} | Insertions | Deletions | Substitutions |\n\
         |---|---|---:|---:|---:|---:|---:|\n"
    );
    for r in rows {
        let kwer = r.report.kwer.map(|v| format!("{v:.2}")).unwrap_or_default();
        out.push_str(&format!(
            "| {} | {} | {} | {:.2} | {} | {} | {} |\n",
            train_mark(r.kw_train),
            inference_mark(r.kw_inference),
            kwer,
            r.report.rate,
            r.report.ops.insertions,
            r.report.ops.deletions,
            r.report.ops.substitutions
        ));
    }
    out
}
