use ircoco::pipeline::ResultsBundle;
use ircoco::report::{check_comparable, csv, render_report, CSV_HEADER};
use ircoco_core::metrics::MetricAccumulator;

fn bundle(method: &str, corpus: &str, start: &str) -> ResultsBundle {
    let mut acc = MetricAccumulator::new();
    let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    acc.add(t("a b c d").as_slice(), t("a b c d").as_slice());
    acc.add(t("x = 1").as_slice(), t("x = 2").as_slice());
    ResultsBundle {
        method: method.into(),
        report: acc.finish(),
        corpus_hash: corpus.into(),
        config_hash: "c".into(),
        start_checkpoint: start.into(),
    }
}

#[test]
fn csv_has_one_row_per_run_with_two_decimals() {
    let text = csv(&[bundle("sft", "h", "s"), bundle("ircoco", "h", "s")]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("sft,") && lines[2].starts_with("ircoco,"));
    assert_eq!(lines[1].split(',').nth(2), Some("50.00"));
}

#[test]
fn runs_from_different_corpora_or_starts_are_refused() {
    assert!(check_comparable(&[bundle("a", "h", "s"), bundle("b", "h", "s")]).is_ok());
    let e = check_comparable(&[bundle("a", "h", "s"), bundle("b", "other", "s")]).unwrap_err();
    assert!(e.to_string().contains("corpus"), "{e}");
    assert!(check_comparable(&[bundle("a", "h", "s"), bundle("b", "h", "t")]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    assert!(render_report(&[bundle("a", "h", "s"), bundle("b", "x", "s")], &out).is_err());
    assert!(!out.join("report.csv").exists());
}
