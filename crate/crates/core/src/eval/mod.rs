//! Confusion accounting, one-vs-rest metrics, fold aggregation and reports.

mod confusion;
mod metrics;
mod report;

pub use confusion::{confusion_matrix, ConfusionCounts, ConfusionMatrix};
pub use metrics::{aggregate_folds, overall_accuracy, Aggregate, Metric};
pub use report::{emit_report, emit_reports, format_percent, parse_percent, ClassMetrics, ClassSummary, FoldReport, FoldResult, ReportFormat, Summary};

#[cfg(test)]
mod tests;
