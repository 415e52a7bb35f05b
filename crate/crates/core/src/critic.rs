//! Completion-quality evaluator: labelled data from the actor's own greedy
//! completions, and a scalar-head model regressing those labels.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_example, Vocab, BOS_ID, PAD_ID, REFERENCE_LEN};
use crate::error::{contract, Result};
use crate::lm::{decode_at, DecodeMode, DecoderLM, HeadKind, ParamVars};
use crate::metrics::MetricKind;
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::sft::{apply_update, divergence, epoch_batches, EncodedExample};
use crate::tape::{Tape, Var};

/// A code prefix labelled with how well the actor completes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorExample {
    pub prefix: Vec<String>,
    pub score: f32,
}

/// Critic input: `<s>` followed by as much of the prefix tail as fits.
pub fn critic_input(vocab: &Vocab, prefix: &[String], max_len: usize) -> Vec<usize> {
    let keep = prefix.len().min(max_len.saturating_sub(1));
    let mut ids = Vec::with_capacity(keep + 1);
    ids.push(BOS_ID);
    ids.extend(vocab.encode(&prefix[prefix.len() - keep..]));
    ids
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorBuild {
    pub examples: Vec<EvaluatorExample>,
    pub skipped: usize,
}

/// Splits each tokenized sample `splits_per_sample` times, completes the
/// prefix greedily with the actor and labels it with `metric` against the
/// held-back reference.
pub fn build_evaluator_dataset(
    actor: &DecoderLM,
    vocab: &Vocab,
    samples: &[(String, Vec<String>)],
    metric: MetricKind,
    splits_per_sample: usize,
    rng: &mut rng::Rng,
) -> Result<EvaluatorBuild> {
    let mut examples = Vec::with_capacity(samples.len() * splits_per_sample);
    let mut skipped = 0;
    for (id, tokens) in samples {
        for _ in 0..splits_per_sample.max(1) {
            let Some(ex) = split_example(id, tokens, rng) else {
                skipped += 1;
                continue;
            };
            let enc = EncodedExample::new(vocab, &ex, actor.config().max_len)?;
            let out = decode_at(actor, &enc.context, enc.offset, DecodeMode::Greedy, REFERENCE_LEN, rng)?;
            let candidate = vocab.decode(&out.tokens);
            let score = metric.score(&candidate, &ex.reference) as f32;
            examples.push(EvaluatorExample {
                prefix: ex.prefix,
                score,
            });
        }
    }
    Ok(EvaluatorBuild { examples, skipped })
}

fn check_critic(critic: &DecoderLM) -> Result<()> {
    if critic.config().head_kind != HeadKind::Scalar {
        return Err(contract!("critic needs a scalar head"));
    }
    Ok(())
}

fn strip_padding(ids: &[usize]) -> &[usize] {
    let end = ids.iter().rposition(|&i| i != PAD_ID).map_or(0, |p| p + 1);
    &ids[..end]
}

/// Score in (0,1) read at the last non-padding position.
pub fn critic_score(critic: &DecoderLM, ids: &[usize]) -> Result<f32> {
    check_critic(critic)?;
    let ids = strip_padding(ids);
    let all = critic.score_all(ids)?;
    Ok(all[all.len() - 1])
}

/// Score of every prefix `ids[..=k]` from a single causal pass.
pub fn critic_scores_all(critic: &DecoderLM, ids: &[usize]) -> Result<Vec<f32>> {
    check_critic(critic)?;
    critic.score_all(ids)
}

/// Mean squared error between predicted and target scores, on `tape`.
pub fn critic_loss_on(
    tape: &mut Tape,
    critic: &DecoderLM,
    vars: &ParamVars,
    batch: &[(&[usize], f32)],
) -> Result<Var> {
    check_critic(critic)?;
    if batch.is_empty() {
        return Err(contract!("critic loss over an empty batch"));
    }
    let mut preds: Option<Var> = None;
    for (ids, _) in batch {
        let ids = strip_padding(ids);
        let h = critic.forward_hidden(tape, vars, ids)?;
        let last = tape.slice_rows(h, ids.len() - 1, ids.len())?;
        let s = critic.scores(tape, vars, last)?;
        preds = Some(match preds {
            Some(p) => tape.concat_rows(p, s)?,
            None => s,
        });
    }
    let targets: Vec<f32> = batch.iter().map(|(_, s)| *s).collect();
    tape.mse(preds.expect("batch is non-empty"), &targets)
}

pub fn critic_loss(critic: &DecoderLM, batch: &[(&[usize], f32)]) -> Result<f32> {
    let mut tape = Tape::inference();
    let vars = critic.attach(&mut tape);
    let l = critic_loss_on(&mut tape, critic, &vars, batch)?;
    Ok(tape.scalar(l))
}

/// Critic input ids paired with a target score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredIds {
    pub ids: Vec<usize>,
    pub score: f32,
}

pub fn encode_evaluator(vocab: &Vocab, data: &[EvaluatorExample], max_len: usize) -> Vec<ScoredIds> {
    data.iter()
        .map(|e| ScoredIds {
            ids: critic_input(vocab, &e.prefix, max_len),
            score: e.score,
        })
        .collect()
}

pub fn dataset_mse(critic: &DecoderLM, data: &[ScoredIds]) -> Result<f32> {
    if data.is_empty() {
        return Err(contract!("mse over an empty dataset"));
    }
    let mut sum = 0.0f64;
    for d in data {
        let e = critic_score(critic, &d.ids)? - d.score;
        sum += (e * e) as f64;
    }
    Ok((sum / data.len() as f64) as f32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub clip: Option<f32>,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 3e-4,
            seed: 0,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticEpochLog {
    pub epoch: usize,
    pub train_mse: f32,
    pub valid_mse: Option<f32>,
}

pub fn train_critic(
    critic: &mut DecoderLM,
    train: &[ScoredIds],
    valid: &[ScoredIds],
    config: &CriticConfig,
) -> Result<Vec<CriticEpochLog>> {
    check_critic(critic)?;
    if train.is_empty() {
        return Err(contract!("critic training set is empty"));
    }
    if let Some(bad) = train.iter().chain(valid).find(|d| !(0.0..=1.0).contains(&d.score)) {
        return Err(contract!("score {} outside [0, 1]", bad.score));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), critic.params());
    let mut order = rng::stream(config.seed, rng::STREAM_ORDER);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train.len(), config.batch_size, &mut order);
        let mut sum = 0.0f64;
        for idx in &batches {
            let batch: Vec<(&[usize], f32)> = idx
                .iter()
                .map(|&i| (train[i].ids.as_slice(), train[i].score))
                .collect();
            let mut tape = Tape::new();
            let vars = critic.attach(&mut tape);
            let loss = critic_loss_on(&mut tape, critic, &vars, &batch).map_err(|e| divergence(epoch, step, e))?;
            sum += apply_update(critic, &tape, &vars, loss, &mut adam, config.clip, (epoch, step))? as f64;
            step += 1;
        }
        let valid_mse = if valid.is_empty() {
            None
        } else {
            Some(dataset_mse(critic, valid)?)
        };
        log.push(CriticEpochLog {
            epoch,
            train_mse: (sum / batches.len() as f64) as f32,
            valid_mse,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use rand::SeedableRng;

    fn critic() -> DecoderLM {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            vocab_size: 10,
            max_len: 12,
            head_kind: HeadKind::Scalar,
        };
        DecoderLM::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn zeroed_head_scores_one_half() {
        let mut c = critic();
        let n = c.params().len();
        c.params_mut()[n - 2].data.fill(0.0);
        assert_eq!(critic_score(&c, &[1, 4, 5]).unwrap(), 0.5);
    }

    #[test]
    fn trailing_padding_is_ignored() {
        let c = critic();
        let a = critic_score(&c, &[1, 4, 5]).unwrap();
        assert_eq!(critic_score(&c, &[1, 4, 5, PAD_ID, PAD_ID]).unwrap(), a);
        assert_eq!(a, critic_score(&c, &[1, 4, 5]).unwrap());
    }

    #[test]
    fn per_position_scores_match_prefix_scores() {
        let c = critic();
        let ids = [1, 4, 5, 7, 8];
        let all = critic_scores_all(&c, &ids).unwrap();
        for k in 0..ids.len() {
            assert_eq!(all[k], critic_score(&c, &ids[..=k]).unwrap());
        }
    }

    #[test]
    fn loss_is_mse_of_scores() {
        let mut c = critic();
        let n = c.params().len();
        c.params_mut()[n - 2].data.fill(0.0);
        let ids = [1usize, 4];
        let l = critic_loss(&c, &[(&ids, 0.7)]).unwrap();
        assert!((l - 0.04).abs() < 1e-6);
        assert_eq!(critic_loss(&c, &[(&ids, 0.5)]).unwrap(), 0.0);
        assert!(critic_loss(&c, &[]).is_err());
    }

    #[test]
    fn vocabulary_head_is_rejected() {
        let cfg = ModelConfig {
            head_kind: HeadKind::Vocabulary,
            ..*critic().config()
        };
        let m = DecoderLM::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(critic_score(&m, &[1]).is_err());
    }
}
