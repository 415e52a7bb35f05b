use ircoco_core::corpus::{CompletionExample, EOS_ID, PAD_ID};
use ircoco_core::lm::{decode_at, DecodeMode, DecoderLM, HeadKind, ModelConfig};
use ircoco_core::rng;
use ircoco_core::optim::{adam_step, AdamConfig, AdamState};
use ircoco_core::sft::{encode_all, sft_loss, sft_loss_on, train_sft_with, SftBatch, SftConfig};
use ircoco_core::synthetic::{grammar_corpus, grammar_vocab};
use ircoco_core::{Tape, Tensor};
use proptest::prelude::*;

fn config(vocab: usize) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        vocab_size: vocab,
        max_len: 24,
        head_kind: HeadKind::Vocabulary,
    }
}

fn model(seed: u64) -> DecoderLM {
    DecoderLM::new(config(20), &mut rng::stream(seed, rng::STREAM_INIT)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn appending_tokens_leaves_earlier_states_unchanged(
        prefix in prop::collection::vec(0usize..20, 1..10),
        ext in prop::collection::vec(0usize..20, 1..10),
        seed in 0u64..4,
    ) {
        let m = model(seed);
        let short = m.hidden_states(&prefix).unwrap();
        let mut longer = prefix.clone();
        longer.extend(&ext);
        let long = m.hidden_states(&longer).unwrap();
        prop_assert_eq!(&short.data[..], &long.data[..short.data.len()]);
    }

    #[test]
    fn next_token_distribution_is_a_distribution(ids in prop::collection::vec(0usize..20, 1..24), seed in 0u64..4) {
        let p = model(seed).next_token_distribution(&ids).unwrap();
        prop_assert_eq!(p.len(), 20);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }
}

fn examples() -> Vec<CompletionExample> {
    let tok = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    vec![
        CompletionExample {
            id: "a".into(),
            prefix: tok("w1 w2"),
            reference: tok("w3 w4 w5 w6 w7 w8 w9 w10 w11 w0"),
        },
        CompletionExample {
            id: "b".into(),
            prefix: tok("w4 w4 w4 w4 w4 w4 w4"),
            reference: tok("w1 w1 w2 w2 w3 w3 w4 w4 w5 w5"),
        },
    ]
}

#[test]
fn padding_is_masked_out_of_the_loss() {
    let vocab = grammar_vocab(12);
    let m = DecoderLM::new(config(vocab.len()), &mut rng::stream(3, rng::STREAM_INIT)).unwrap();
    let enc = encode_all(&vocab, &examples(), 24).unwrap();
    let alone = sft_loss(&m, &SftBatch::new(&[&enc[0]], false)).unwrap();
    // Batched with a longer example, row 0 is padded after its `</s>`.
    let mut batch = SftBatch::new(&[&enc[0], &enc[1]], false);
    let n0 = enc[0].full().len();
    assert_eq!(&batch.ids[0][n0 - 1..n0 + 1], &[EOS_ID, PAD_ID]);
    let other = sft_loss(&m, &SftBatch::new(&[&enc[1]], false)).unwrap();
    let both = sft_loss(&m, &batch).unwrap();
    assert!((both - (alone + other) / 2.0).abs() < 1e-6, "{both} vs {alone} {other}");
    // Whatever sits in the padding does not matter.
    let before = both;
    for id in batch.ids[0].iter_mut().skip(n0) {
        *id = 7;
    }
    assert_eq!(sft_loss(&m, &batch).unwrap(), before);
}

/// A few Adam steps on fixed batches; returns the model.
fn fit(batches: &[SftBatch], vocab: usize) -> DecoderLM {
    let mut m = DecoderLM::new(config(vocab), &mut rng::stream(5, rng::STREAM_INIT)).unwrap();
    let mut adam = AdamState::new(AdamConfig::with_lr(3e-3), m.params());
    for _ in 0..20 {
        for b in batches {
            let mut tape = Tape::new();
            let vars = m.attach(&mut tape);
            let loss = sft_loss_on(&mut tape, &m, &vars, b).unwrap();
            let g = tape.backward(loss).unwrap();
            m.zero_grad();
            m.accumulate_grads(&g, &vars);
            adam_step(m.params_mut(), &mut adam).unwrap();
        }
    }
    m
}

#[test]
fn greedy_decoding_is_unchanged_by_batch_padding() {
    let vocab = grammar_vocab(12);
    let enc = encode_all(&vocab, &examples(), 24).unwrap();
    let plain = vec![SftBatch::new(&[&enc[0], &enc[1]], false)];
    let mut padded = plain.clone();
    for b in &mut padded {
        for (ids, mask) in b.ids.iter_mut().zip(&mut b.mask) {
            ids.extend([PAD_ID; 3]);
            mask.extend([false; 3]);
        }
    }
    let (m1, m2) = (fit(&plain, vocab.len()), fit(&padded, vocab.len()));
    for (p, q) in m1.params().iter().zip(m2.params()) {
        assert_eq!(p.data, q.data);
    }
    let mut g = rng::stream(0, 0);
    for e in &enc {
        let d1 = decode_at(&m1, &e.context, e.offset, DecodeMode::Greedy, 10, &mut g).unwrap();
        let d2 = decode_at(&m2, &e.context, e.offset, DecodeMode::Greedy, 10, &mut g).unwrap();
        assert_eq!(d1, d2);
    }
}

#[test]
fn prefix_targets_contribute_no_gradient() {
    let vocab = grammar_vocab(12);
    let m = DecoderLM::new(config(vocab.len()), &mut rng::stream(4, rng::STREAM_INIT)).unwrap();
    let enc = encode_all(&vocab, &examples(), 24).unwrap();
    let e = &enc[1];
    let full = e.full();
    let c = e.context.len();

    // Per-position losses over every row, with the reference-only weights.
    let grads_with = |prefix_targets: &[usize]| {
        let mut tape = Tape::new();
        let vars = m.attach(&mut tape);
        let ids = &full[..full.len() - 1];
        let h = m.forward_hidden_at(&mut tape, &vars, ids, e.offset).unwrap();
        let logits = m.logits(&mut tape, &vars, h).unwrap();
        let mut targets = full[1..].to_vec();
        targets[..c - 1].copy_from_slice(prefix_targets);
        let ce = tape.cross_entropy_rows(logits, &targets).unwrap();
        let n = targets.len() - (c - 1);
        let w: Vec<f32> = (0..targets.len()).map(|i| if i + 1 >= c { 1.0 / n as f32 } else { 0.0 }).collect();
        let loss = tape.weighted_sum(ce, &w).unwrap();
        let value = tape.scalar(loss);
        let g = tape.backward(loss).unwrap();
        let dl = g.wrt(logits);
        let rows: Vec<f32> = dl[..(c - 1) * vocab.len()].to_vec();
        let all: Vec<Vec<f32>> = vars.vars().iter().map(|&v| g.wrt(v)).collect();
        (value, rows, all)
    };
    let (v1, rows1, g1) = grads_with(&full[1..c]);
    let scrambled: Vec<usize> = (0..c - 1).map(|i| 4 + (i * 5) % 12).collect();
    let (v2, rows2, g2) = grads_with(&scrambled);
    assert!(rows1.iter().chain(&rows2).all(|&x| x == 0.0));
    assert_eq!(v1, v2);
    assert_eq!(g1, g2);

    // The library loss is the same function.
    let mut tape = Tape::inference();
    let vars = m.attach(&mut tape);
    let l = sft_loss_on(&mut tape, &m, &vars, &SftBatch::new(&[e], false)).unwrap();
    assert!((tape.scalar(l) - v1).abs() < 1e-6);
}

#[test]
fn identical_seeds_give_identical_parameter_trajectories() {
    let vocab = grammar_vocab(6);
    let corpus = grammar_corpus(60, 6, 2);
    let mut r = rng::stream(2, rng::STREAM_SPLIT);
    let ex: Vec<_> = corpus
        .iter()
        .filter_map(|(id, t)| ircoco_core::corpus::split_example(id, t, &mut r))
        .collect();
    let enc = encode_all(&vocab, &ex, 24).unwrap();
    let cfg = SftConfig {
        epochs: 4,
        batch_size: 2,
        lr: 1e-3,
        seed: 9,
        ..SftConfig::default()
    };
    let run = || {
        let mut m = DecoderLM::new(config(vocab.len()), &mut rng::stream(9, rng::STREAM_INIT)).unwrap();
        let mut steps: Vec<Vec<Tensor>> = Vec::new();
        train_sft_with(&mut m, &enc, &[], &cfg, |_, m| steps.push(m.params().to_vec())).unwrap();
        steps
    };
    let (a, b) = (run(), run());
    assert!(a.len() >= 100, "{} steps", a.len());
    for (x, y) in a.iter().zip(&b) {
        for (p, q) in x.iter().zip(y) {
            assert_eq!(p.data, q.data);
        }
    }
    assert_ne!(a[0][0].data, a[a.len() - 1][0].data);
}
