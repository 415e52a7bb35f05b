//! Small generated workloads with known answers.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::corpus::{Vocab, BOS_ID, RESERVED};
use crate::critic::ScoredIds;
use crate::drl::{drl_loss_on, Trajectory};
use crate::error::Result;
use crate::lm::{generate, DecodeMode, DecoderLM, HeadKind, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::sft::apply_update;
use crate::tape::Tape;

/// Symbols of the synthetic grammar.
pub fn grammar_symbols(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("w{i}")).collect()
}

/// Token sequences in which every token is a fixed function of the two
/// before it, so any prefix of two or more tokens has one continuation.
pub fn grammar_corpus(samples: usize, symbols: usize, seed: u64) -> Vec<(String, Vec<String>)> {
    let names = grammar_symbols(symbols);
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let table: Vec<usize> = (0..symbols * symbols).map(|_| rng.random_range(0..symbols)).collect();
    (0..samples)
        .map(|i| {
            let len = rng.random_range(16..=28);
            let mut seq = vec![rng.random_range(0..symbols), rng.random_range(0..symbols)];
            while seq.len() < len {
                let (a, b) = (seq[seq.len() - 2], seq[seq.len() - 1]);
                seq.push(table[a * symbols + b]);
            }
            (format!("g{i}"), seq.into_iter().map(|s| names[s].clone()).collect())
        })
        .collect()
}

/// A vocabulary holding the reserved markers and `symbols` grammar tokens.
pub fn grammar_vocab(symbols: usize) -> Vocab {
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| String::from(*s)).collect();
    tokens.extend(grammar_symbols(symbols));
    Vocab::from_tokens(tokens).expect("distinct tokens")
}

/// Which property of the input determines a synthetic critic target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// Proportional to the number of tokens.
    PrefixLength,
    /// Proportional to the id of the last token.
    LastToken,
    Constant,
}

/// Random id sequences with a target determined by `rule`.
pub fn critic_regression_set(
    n: usize,
    vocab_size: usize,
    max_len: usize,
    rule: ScoreRule,
    seed: u64,
) -> Vec<ScoredIds> {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let first = RESERVED.len();
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=max_len);
            let mut ids = vec![BOS_ID];
            ids.extend((1..len).map(|_| rng.random_range(first..vocab_size)));
            let score = match rule {
                ScoreRule::PrefixLength => (len - 2) as f32 / (max_len - 2).max(1) as f32,
                ScoreRule::LastToken => (ids[len - 1] - first) as f32 / (vocab_size - first - 1).max(1) as f32,
                ScoreRule::Constant => 0.5,
            };
            ScoredIds { ids, score }
        })
        .collect()
}

/// Single-state REINFORCE: a one-step policy over a two-token vocabulary,
/// rewarded only for token 0. Returns `P(token 0)` before each update and
/// after the last one.
pub fn bandit_reinforce(steps: usize, lr: f32, seed: u64) -> Result<Vec<f32>> {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        d_model: 4,
        vocab_size: 2,
        max_len: 2,
        head_kind: HeadKind::Vocabulary,
    };
    let mut policy = DecoderLM::new(cfg, &mut rng::stream(seed, rng::STREAM_INIT))?;
    let mut sampler = rng::stream(seed, rng::STREAM_SAMPLE);
    let mut adam = AdamState::new(AdamConfig::with_lr(lr), policy.params());
    let state = [0usize];
    let mut history = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        history.push(policy.next_token_distribution(&state)?[0]);
        let g = generate(&policy, &state, DecodeMode::Sample { temperature: 1.0 }, 1, &mut sampler)?;
        let reward = if g.tokens[0] == 0 { 1.0 } else { 0.0 };
        let t = Trajectory {
            context: state.to_vec(),
            offset: 0,
            tokens: g.tokens,
            log_probs: g.log_probs,
            rewards: vec![reward],
        };
        let mut tape = Tape::new();
        let vars = policy.attach(&mut tape);
        let loss = drl_loss_on(&mut tape, &policy, &vars, &[&t], &[t.rewards.clone()])?;
        apply_update(&mut policy, &tape, &vars, loss, &mut adam, None, (1, step))?;
    }
    history.push(policy.next_token_distribution(&state)?[0]);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_is_second_order_deterministic() {
        let corpus = grammar_corpus(200, 12, 3);
        let mut seen = alloc::collections::BTreeMap::new();
        for (_, seq) in &corpus {
            for w in seq.windows(3) {
                let next = seen.entry((w[0].clone(), w[1].clone())).or_insert_with(|| w[2].clone());
                assert_eq!(*next, w[2]);
            }
        }
        assert_eq!(corpus, grammar_corpus(200, 12, 3));
    }

    #[test]
    fn regression_targets_in_unit_range() {
        for rule in [ScoreRule::PrefixLength, ScoreRule::LastToken, ScoreRule::Constant] {
            for d in critic_regression_set(50, 10, 8, rule, 1) {
                assert!((0.0..=1.0).contains(&d.score));
                assert!(d.ids.len() >= 2 && d.ids.len() <= 8);
            }
        }
    }
}
