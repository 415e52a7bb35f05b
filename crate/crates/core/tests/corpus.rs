use ircoco_core::corpus::{
    build_vocab, normalize_literals, split_example, tokenize_with, LexOptions, LiteralTable, EOL, MIN_PREFIX_LEN,
    NUM_LIT, REFERENCE_LEN, STR_LIT,
};
use ircoco_core::rng;
use proptest::prelude::*;

fn source_line() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec![
            "x", "y_1", "=", "+", "(", ")", "'hi'", "\"s\"", "42", "3.5", "0x1f", "def", ":", ",", "#c", "**",
        ]),
        0..8,
    )
    .prop_map(|ws| ws.join(" "))
}

fn source() -> impl Strategy<Value = String> {
    prop::collection::vec(source_line(), 1..6).prop_map(|ls| ls.join("\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn encode_inverts_decode(ids in prop::collection::vec(0usize..12, 0..30)) {
        let streams = [vec!["a", "b", "c", "d", "e", "f", "g", "h"]];
        let vocab = build_vocab(streams.iter().map(|s| s.as_slice()), 1, 100).unwrap();
        prop_assert_eq!(vocab.len(), 12);
        prop_assert_eq!(vocab.encode(&vocab.decode(&ids)), ids);
    }

    #[test]
    fn normalization_is_idempotent(src in source(), train in source()) {
        let opts = LexOptions::for_language("python");
        let table = LiteralTable::from_training([tokenize_with(&train, opts).tokens.as_slice()], 3, 2);
        let once = normalize_literals(&tokenize_with(&src, opts).tokens, &table);
        prop_assert_eq!(normalize_literals(&once, &table), once);
    }

    #[test]
    fn splits_have_ten_token_references(n in 0usize..60, seed in any::<u64>()) {
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let mut r = rng::stream(seed, rng::STREAM_SPLIT);
        match split_example("s", &tokens, &mut r) {
            Some(ex) => {
                prop_assert_eq!(ex.reference.len(), REFERENCE_LEN);
                prop_assert!(ex.prefix.len() >= MIN_PREFIX_LEN);
                let mut joined = ex.prefix.clone();
                joined.extend(ex.reference.clone());
                prop_assert_eq!(&joined[..], &tokens[..joined.len()]);
            }
            None => prop_assert!(n < MIN_PREFIX_LEN + REFERENCE_LEN),
        }
    }

    #[test]
    fn lexer_never_emits_blank_tokens(src in source()) {
        for t in tokenize_with(&src, LexOptions::for_language("python")).tokens {
            prop_assert!(!t.trim().is_empty());
        }
    }
}

#[test]
fn literal_table_ignores_held_out_frequencies() {
    let opts = LexOptions::for_language("python");
    let train = tokenize_with("a = 'x'\nb = 'x'\nc = 7", opts).tokens;
    let table = LiteralTable::from_training([train.as_slice()], 10, 10);
    // 'zzz' dominates the held-out text but never appears in training.
    let held_out = tokenize_with("q = 'zzz' + 'zzz' + 'zzz' + 'x' + 7 + 9", opts).tokens;
    let norm = normalize_literals(&held_out, &table);
    assert_eq!(norm.iter().filter(|t| *t == STR_LIT).count(), 3);
    assert!(norm.contains(&"<STR_LIT:x>".to_string()));
    assert!(norm.contains(&"<NUM_LIT:7>".to_string()));
    assert!(norm.contains(&NUM_LIT.to_string()));
    let again = LiteralTable::from_training([train.as_slice()], 10, 10);
    assert_eq!(table, again);
}

#[test]
fn end_of_line_markers_separate_lines() {
    let t = tokenize_with("x = 1\n\n\ny = 2\n", LexOptions::for_language("python")).tokens;
    assert_eq!(t, ["x", "=", "1", EOL, "y", "=", "2", EOL]);
}
