use std::fmt::Write;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::confusion::ConfusionMatrix;
use super::metrics::{aggregate_folds, overall_accuracy, Aggregate};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Names of metrics whose denominator was zero (reported as 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub accuracy: f64,
    pub per_class: IndexMap<String, ClassMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub precision: Aggregate,
    pub sensitivity: Aggregate,
    pub specificity: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: Aggregate,
    pub per_class: IndexMap<String, ClassSummary>,
}

/// Per-fold metrics of one model and their mean ± std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameters: Option<usize>,
    pub folds: Vec<FoldResult>,
    /// Present when at least two folds were evaluated.
    pub aggregate: Option<Summary>,
}

impl FoldResult {
    pub fn from_confusion(fold: usize, cm: &ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        if class_names.len() != cm.classes() {
            return Err(Error::invalid(format!("{} class names for a {}-class matrix", class_names.len(), cm.classes())));
        }
        let per_class = class_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let counts = cm.ovr_counts(c);
                let (p, se, sp) = (counts.precision(), counts.sensitivity(), counts.specificity());
                let undefined = [("precision", p), ("sensitivity", se), ("specificity", sp)]
                    .iter()
                    .filter(|(_, m)| m.undefined)
                    .map(|(n, _)| n.to_string())
                    .collect();
                (name.clone(), ClassMetrics { precision: p.value, sensitivity: se.value, specificity: sp.value, undefined })
            })
            .collect();
        Ok(FoldResult { fold, accuracy: overall_accuracy(cm)?, per_class })
    }
}

impl FoldReport {
    pub fn new(model: impl Into<String>, folds: Vec<FoldResult>) -> Result<Self> {
        let aggregate = if folds.len() >= 2 { Some(summarize(&folds)?) } else { None };
        Ok(FoldReport { model: model.into(), parameters: None, folds, aggregate })
    }

    pub fn from_confusions(model: impl Into<String>, class_names: &[String], folds: &[(usize, ConfusionMatrix)]) -> Result<Self> {
        let results = folds.iter().map(|(f, cm)| FoldResult::from_confusion(*f, cm, class_names)).collect::<Result<_>>()?;
        Self::new(model, results)
    }

    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.folds.first().map(|f| f.per_class.keys().cloned().collect()).unwrap_or_default()
    }
}

fn summarize(folds: &[FoldResult]) -> Result<Summary> {
    let accuracy = aggregate_folds(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>())?;
    let names: Vec<String> = folds[0].per_class.keys().cloned().collect();
    let mut per_class = IndexMap::new();
    for name in names {
        let pick = |get: fn(&ClassMetrics) -> f64| -> Result<Aggregate> {
            let vals = folds
                .iter()
                .map(|f| f.per_class.get(&name).map(get).ok_or_else(|| Error::invalid(format!("fold lacks class {name}"))))
                .collect::<Result<Vec<_>>>()?;
            aggregate_folds(&vals)
        };
        let summary = ClassSummary { precision: pick(|m| m.precision)?, sensitivity: pick(|m| m.sensitivity)?, specificity: pick(|m| m.specificity)? };
        per_class.insert(name, summary);
    }
    Ok(Summary { accuracy, per_class })
}

/// `mean` and `std` as fractions → `"92.89%(±0.42)"`.
pub fn format_percent(mean: f64, std: f64) -> String {
    format!("{:.2}%(±{:.2})", mean * 100.0, std * 100.0)
}

/// Inverse of [`format_percent`] at its two-decimal precision.
pub fn parse_percent(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::invalid(format!("not a percentage with deviation: {s:?}"));
    let (mean, rest) = s.split_once("%(±").ok_or_else(bad)?;
    let std = rest.strip_suffix(')').ok_or_else(bad)?;
    let mean: f64 = mean.parse().map_err(|_| bad())?;
    let std: f64 = std.parse().map_err(|_| bad())?;
    Ok((mean / 100.0, std / 100.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Csv,
    Json,
}

pub fn emit_report(report: &FoldReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        _ => emit_reports(std::slice::from_ref(report), format),
    }
}

/// Several models side by side; JSON output is an array.
pub fn emit_reports(reports: &[FoldReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => Ok(table(reports)),
        ReportFormat::Csv => Ok(csv(reports)),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(reports)? + "\n"),
    }
}

fn cell(report: &FoldReport, agg: impl Fn(&Summary) -> Aggregate, single: impl Fn(&FoldResult) -> f64) -> String {
    match (&report.aggregate, report.folds.as_slice()) {
        (Some(s), _) => {
            let a = agg(s);
            format_percent(a.mean, a.std)
        }
        (None, [f]) => format!("{:.2}%", single(f) * 100.0),
        _ => "n/a".to_string(),
    }
}

fn table(reports: &[FoldReport]) -> String {
    let mut rows = vec![vec!["Model".to_string(), "Params".into(), "Folds".into(), "Accuracy".into()]];
    for r in reports {
        rows.push(vec![
            r.model.clone(),
            r.parameters.map_or_else(|| "-".into(), |p| p.to_string()),
            r.folds.len().to_string(),
            cell(r, |s| s.accuracy, |f| f.accuracy),
        ]);
    }
    let mut out = align(&rows);
    out.push('\n');
    let mut rows = vec![vec!["Model".to_string(), "Class".into(), "Precision".into(), "Sensitivity".into(), "Specificity".into()]];
    for r in reports {
        for name in r.class_names() {
            let n = name.as_str();
            rows.push(vec![
                r.model.clone(),
                name.clone(),
                cell(r, |s| s.per_class[n].precision, |f| f.per_class[n].precision),
                cell(r, |s| s.per_class[n].sensitivity, |f| f.per_class[n].sensitivity),
                cell(r, |s| s.per_class[n].specificity, |f| f.per_class[n].specificity),
            ]);
        }
    }
    out + &align(&rows)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(v, &w)| format!("{v:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv(reports: &[FoldReport]) -> String {
    let mut out = String::from("model,fold,class,metric,value\n");
    let mut row = |model: &str, fold: &str, class: &str, metric: &str, value: f64| {
        let _ = writeln!(out, "{model},{fold},{class},{metric},{value}");
    };
    for r in reports {
        for f in &r.folds {
            let fold = f.fold.to_string();
            row(&r.model, &fold, "all", "accuracy", f.accuracy);
            for (name, m) in &f.per_class {
                row(&r.model, &fold, name, "precision", m.precision);
                row(&r.model, &fold, name, "sensitivity", m.sensitivity);
                row(&r.model, &fold, name, "specificity", m.specificity);
            }
        }
        if let Some(s) = &r.aggregate {
            for (stat, pick) in [("mean", (|a: Aggregate| a.mean) as fn(Aggregate) -> f64), ("std", |a: Aggregate| a.std)] {
                row(&r.model, stat, "all", "accuracy", pick(s.accuracy));
                for (name, c) in &s.per_class {
                    row(&r.model, stat, name, "precision", pick(c.precision));
                    row(&r.model, stat, name, "sensitivity", pick(c.sensitivity));
                    row(&r.model, stat, name, "specificity", pick(c.specificity));
                }
            }
        }
    }
    out
}
