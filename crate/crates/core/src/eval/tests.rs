use super::*;

fn six_sample() -> ConfusionMatrix {
    confusion_matrix(&[0, 1, 1, 2, 3, 2], &[0, 0, 1, 2, 3, 3], 4).unwrap()
}

#[test]
fn tally_and_one_vs_rest() {
    let cm = six_sample();
    let expect = ConfusionMatrix::from_rows(&[vec![1, 1, 0, 0], vec![0, 1, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 1, 1]]).unwrap();
    assert_eq!(cm, expect);
    assert_eq!(cm.ovr_counts(0), ConfusionCounts { tp: 1, tn: 4, fp: 0, fn_: 1 });
    assert_eq!(cm.ovr_counts(2), ConfusionCounts { tp: 1, tn: 4, fp: 1, fn_: 0 });
    assert!((overall_accuracy(&cm).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    assert_eq!(confusion_matrix(&[], &[], 4).unwrap(), ConfusionMatrix::zeros(4));
    assert!(overall_accuracy(&ConfusionMatrix::zeros(4)).is_err());
    assert!(confusion_matrix(&[4], &[0], 4).is_err());
}

#[test]
fn metric_arithmetic() {
    let c = ConfusionCounts { tp: 3, tn: 5, fp: 1, fn_: 1 };
    assert_eq!(c.accuracy().value, 0.8);
    assert_eq!(c.sensitivity().value, 0.75);
    assert_eq!(c.specificity().value, 5.0 / 6.0);
    assert_eq!(c.precision().value, 0.75);
    let none = ConfusionCounts { tp: 0, tn: 7, fp: 0, fn_: 3 };
    assert_eq!(none.precision(), Metric { value: 0.0, undefined: true });
    let perfect = ConfusionCounts { tp: 4, tn: 6, fp: 0, fn_: 0 };
    for m in [perfect.accuracy(), perfect.sensitivity(), perfect.specificity(), perfect.precision()] {
        assert_eq!(m, Metric { value: 1.0, undefined: false });
    }
}

#[test]
fn aggregates() {
    let a = aggregate_folds(&[0.9; 5]).unwrap();
    assert!((a.mean - 0.9).abs() < 1e-15 && a.std < 1e-15);
    let b = aggregate_folds(&[0.8, 1.0]).unwrap();
    assert!((b.mean - 0.9).abs() < 1e-15);
    assert!((b.std - 0.02f64.sqrt()).abs() < 1e-15);
    assert!(aggregate_folds(&[0.5]).is_err());
}

#[test]
fn percent_strings() {
    assert_eq!(format_percent(0.9289, 0.0042), "92.89%(±0.42)");
    assert_eq!(format_percent(1.0, 0.0), "100.00%(±0.00)");
    assert_eq!(format_percent(0.0, 0.0), "0.00%(±0.00)");
    let (m, s) = parse_percent("92.89%(±0.42)").unwrap();
    assert_eq!(format_percent(m, s), "92.89%(±0.42)");
    assert!(parse_percent("92.89%").is_err());
}

#[test]
fn report_json_round_trip_and_formats() {
    let names: Vec<String> = (0..4).map(|c| format!("band{c}")).collect();
    let cms = vec![(0, six_sample()), (1, confusion_matrix(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap())];
    let report = FoldReport::from_confusions("SFUSNet", &names, &cms).unwrap();
    let json = emit_report(&report, ReportFormat::Json).unwrap();
    let back: FoldReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
    let agg = report.aggregate.as_ref().unwrap();
    assert!((agg.accuracy.mean - (4.0 / 6.0 + 1.0) / 2.0).abs() < 1e-15);
    let table = emit_report(&report, ReportFormat::Table).unwrap();
    assert!(table.contains("band3"));
    let csv = emit_report(&report, ReportFormat::Csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 13 + 2 * 13);
}
