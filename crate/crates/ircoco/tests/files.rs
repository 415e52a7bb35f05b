use std::fs;

use ircoco::checkpoint;
use ircoco::jsonl;
use ircoco::Error;
use ircoco_core::lm::{DecoderLM, HeadKind, ModelConfig};
use ircoco_core::rng;
use proptest::prelude::*;
use serde::{Deserialize, Serialize};

fn config(kind: HeadKind) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        vocab_size: 11,
        max_len: 16,
        head_kind: kind,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), scalar in any::<bool>()) {
        let kind = if scalar { HeadKind::Scalar } else { HeadKind::Vocabulary };
        let m = DecoderLM::new(config(kind), &mut rng::stream(seed, rng::STREAM_INIT)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        checkpoint::save(&path, &m).unwrap();
        let back = checkpoint::load(&path, Some(&config(kind))).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let m = DecoderLM::new(config(HeadKind::Vocabulary), &mut rng::stream(1, rng::STREAM_INIT)).unwrap();
    let bytes = checkpoint::to_bytes(&m);
    let path = std::path::Path::new("m.ckpt");
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        let e = checkpoint::from_bytes(&bytes[..cut], None, path).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "{cut}: {e}");
        assert!(e.to_string().contains("m.ckpt"));
    }
}

#[test]
fn configuration_mismatch_names_the_field() {
    let m = DecoderLM::new(config(HeadKind::Vocabulary), &mut rng::stream(1, rng::STREAM_INIT)).unwrap();
    let bytes = checkpoint::to_bytes(&m);
    let want = ModelConfig {
        d_model: 16,
        ..config(HeadKind::Vocabulary)
    };
    let e = checkpoint::from_bytes(&bytes, Some(&want), "x".as_ref()).unwrap_err();
    assert!(e.to_string().contains("d_model"), "{e}");
    let e = checkpoint::from_bytes(&bytes, Some(&config(HeadKind::Scalar)), "x".as_ref()).unwrap_err();
    assert!(e.to_string().contains("head_kind"), "{e}");
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Row {
    id: String,
    n: u32,
}

#[test]
fn jsonl_round_trips_and_reports_the_bad_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.jsonl");
    let rows = vec![Row { id: "a".into(), n: 1 }, Row { id: "b".into(), n: 2 }];
    jsonl::write(&path, &rows).unwrap();
    assert_eq!(jsonl::read::<Row>(&path).unwrap(), rows);

    fs::write(&path, "{\"id\":\"a\",\"n\":1}\n\n{\"id\":\"b\",\"n\":\"two\"}\n").unwrap();
    match jsonl::read::<Row>(&path).unwrap_err() {
        Error::Format { line, .. } => assert_eq!(line, Some(3)),
        e => panic!("{e}"),
    }
    let missing = dir.path().join("missing.jsonl");
    let e = jsonl::read::<Row>(&missing).unwrap_err();
    assert!(matches!(e, Error::Io { .. }) && e.to_string().contains("missing.jsonl"));
}
