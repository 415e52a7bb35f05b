use ircoco_core::corpus::EOL;
use ircoco_core::metrics::{
    bleu4, bleu4_with, completion_length, edit_sim, exact_match, levenshtein, spearman, MetricAccumulator,
    LENGTH_BUCKETS, MIN_BLEU_TOKENS,
};
use ircoco_core::rng;
use proptest::prelude::*;

mod oracles;
use oracles::{bleu_oracle, edit_sim_oracle, random_tokens, ALPHABET};

#[test]
fn bleu_matches_counting_oracle_on_random_pairs() {
    let mut r = rng::stream(2024, rng::STREAM_DATA);
    for _ in 0..1000 {
        let c = random_tokens(&mut r, 12);
        let reference = random_tokens(&mut r, 12);
        for smooth in [true, false] {
            let got = bleu4_with(&c, &reference, smooth);
            let want = bleu_oracle(&c, &reference, smooth);
            assert!((got - want).abs() <= 1e-9, "{c:?} vs {reference:?}: {got} != {want}");
        }
    }
}

#[test]
fn edit_sim_matches_dp_oracle_on_random_pairs() {
    let mut r = rng::stream(2025, rng::STREAM_DATA);
    for _ in 0..1000 {
        let c = random_tokens(&mut r, 12);
        let reference = random_tokens(&mut r, 12);
        assert_eq!(edit_sim(&c, &reference), edit_sim_oracle(&c, &reference));
    }
}

#[test]
fn known_values() {
    let k: Vec<char> = "kitten".chars().collect();
    let s: Vec<char> = "sitting".chars().collect();
    assert_eq!(levenshtein(&k, &s), 3);
    let t = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    assert_eq!(edit_sim(&t("a b"), &t("a c")), 1.0 - 1.0 / 3.0);
    assert_eq!(bleu4(&t("x = y"), &t("x = y")), 1.0);
    assert_eq!(bleu4(&t("p q"), &t("x = y")), 0.0);
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(ALPHABET.to_vec()).prop_map(String::from), 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn edit_sim_is_a_bounded_symmetric_similarity(a in tokens(), b in tokens()) {
        let s = edit_sim(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, edit_sim(&b, &a));
        prop_assert_eq!(edit_sim(&a, &a), 1.0);
    }

    #[test]
    fn bleu_is_bounded_and_self_match_is_maximal(a in tokens(), b in tokens()) {
        let s = bleu4(&b, &a);
        prop_assert!((0.0..=1.0).contains(&s));
        if b.len() == a.len() && !a.is_empty() {
            prop_assert!(bleu4(&a, &a) >= s);
        }
    }

    #[test]
    fn exact_match_implies_top_scores(a in tokens()) {
        prop_assert!(exact_match(&a, &a));
        prop_assert_eq!(edit_sim(&a, &a), 1.0);
        if !a.is_empty() {
            prop_assert_eq!(bleu4(&a, &a), 1.0);
        }
    }

    #[test]
    fn buckets_partition_the_examples(pairs in prop::collection::vec((tokens(), tokens()), 1..40)) {
        let mut acc = MetricAccumulator::new();
        for (c, r) in &pairs {
            acc.add(c.as_slice(), r.as_slice());
        }
        let report = acc.finish();
        prop_assert_eq!(report.per_length.len(), LENGTH_BUCKETS);
        prop_assert_eq!(report.per_length.iter().map(|b| b.count).sum::<usize>(), pairs.len());
        for b in &report.per_length {
            prop_assert_eq!(b.bleu4.is_some(), b.tokens >= MIN_BLEU_TOKENS && b.count > 0);
            prop_assert_eq!(b.edit_sim.is_some(), b.count > 0);
        }
    }
}

#[test]
fn perfect_completions_score_one_hundred() {
    let mut acc = MetricAccumulator::new();
    let r: Vec<String> = ["x", "=", "1", EOL].iter().map(|s| s.to_string()).collect();
    acc.add(r.as_slice(), r.as_slice());
    let rep = acc.finish();
    assert_eq!((rep.em, rep.edit_sim, rep.bleu4), (100.0, 100.0, 100.0));
    assert_eq!(completion_length(&r), 4);
}

#[test]
fn spearman_ranks() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
}
