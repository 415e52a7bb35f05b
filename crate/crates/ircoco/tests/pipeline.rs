mod common;

use std::fs;

use common::{full_pipeline, tiny_corpus};
use ircoco::config::CorpusConfig;
use ircoco::pipeline::{self, Outcome};
use ircoco::report::{CSV, CSV_HEADER, JSON, TEXT};

#[test]
fn prepare_is_byte_stable_and_reruns_are_no_ops() {
    let work = tempfile::tempdir().unwrap();
    let corpus = CorpusConfig {
        paths: vec![tiny_corpus(work.path())],
        vocab_cap: 300,
        ..CorpusConfig::default()
    };
    let (a, b) = (work.path().join("a"), work.path().join("b"));
    assert_eq!(pipeline::prepare(&corpus, 3, &a).unwrap(), Outcome::Ran);
    assert_eq!(pipeline::prepare(&corpus, 3, &b).unwrap(), Outcome::Ran);
    for f in [pipeline::TRAIN, pipeline::VALID, pipeline::TEST, pipeline::VOCAB, pipeline::MANIFEST] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let before = fs::read(a.join(pipeline::TRAIN)).unwrap();
    assert_eq!(pipeline::prepare(&corpus, 3, &a).unwrap(), Outcome::UpToDate);
    assert_eq!(fs::read(a.join(pipeline::TRAIN)).unwrap(), before);

    // A different seed is a different key.
    assert_eq!(pipeline::prepare(&corpus, 4, &a).unwrap(), Outcome::Ran);
    assert_ne!(fs::read(a.join(pipeline::TRAIN)).unwrap(), before);

    // Held-out splits never share a sample with training.
    let p = pipeline::load_prepared(&a).unwrap();
    let train: std::collections::HashSet<_> = p.train.iter().map(|e| e.id.clone()).collect();
    assert!(p.valid.iter().chain(&p.test).all(|e| !train.contains(&e.id)));
    assert!(!p.test.is_empty() && !p.valid.is_empty());
}

#[test]
fn full_pipeline_writes_a_comparison_report() {
    let work = tempfile::tempdir().unwrap();
    let report = full_pipeline(work.path());
    let csv = fs::read_to_string(report.join(CSV)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("sft,") && lines[2].starts_with("ircoco,"));
    for row in &lines[1..] {
        for v in row.split(',').skip(1) {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=100.0).contains(&x));
            assert_eq!(v.split('.').nth(1).map(str::len), Some(2));
        }
    }
    assert!(report.join(JSON).exists() && report.join(TEXT).exists());
    let json: serde_json::Value = serde_json::from_slice(&fs::read(report.join(JSON)).unwrap()).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 2);
}
