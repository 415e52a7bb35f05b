//! Policy-gradient alignment of the completion model.
//!
//! A trajectory is a completion sampled from the actor. Each step is
//! weighted by a reward from one of four schedules, and the resulting
//! REINFORCE loss is added to the supervised loss of the same batch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{Vocab, EOS_ID, REFERENCE_LEN};
use crate::critic::{critic_score, critic_scores_all};
use crate::error::{contract, Error, Result};
use crate::eval::evaluate;
use crate::lm::{generate_at, DecodeMode, DecoderLM, HeadKind, ParamVars};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::sft::{apply_update, divergence, epoch_batches, sft_loss_on, EncodedExample, SftBatch};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Critic score of the prefix extended by the tokens so far.
    ImmediateCritic,
    /// Critic score of the finished completion, at the last step only.
    Delayed,
    /// The delayed value spread linearly over positions.
    LinearAttenuation,
    /// One when the token matches the reference token at that position.
    Binary01,
}

impl ScheduleKind {
    pub fn needs_critic(self) -> bool {
        !matches!(self, ScheduleKind::Binary01)
    }
}

/// A reward schedule bound to the resources it needs.
#[derive(Debug, Clone, Copy)]
pub struct RewardSchedule<'a> {
    pub kind: ScheduleKind,
    critic: Option<&'a DecoderLM>,
    /// Linear attenuation grows toward the end instead of decaying.
    pub la_increasing: bool,
}

impl<'a> RewardSchedule<'a> {
    pub fn new(kind: ScheduleKind, critic: Option<&'a DecoderLM>) -> Result<Self> {
        match critic {
            None if kind.needs_critic() => {
                return Err(Error::Config(format!("the {kind:?} reward schedule needs a critic")));
            }
            Some(c) if c.config().head_kind != HeadKind::Scalar => {
                return Err(Error::Config("the critic must have a scalar head".into()));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            critic,
            la_increasing: false,
        })
    }

    pub fn with_increasing_attenuation(mut self, on: bool) -> Self {
        self.la_increasing = on;
        self
    }

    fn critic(&self) -> Result<&'a DecoderLM> {
        self.critic
            .ok_or_else(|| Error::Config(format!("the {:?} reward schedule needs a critic", self.kind)))
    }

    /// Rewards for every step of `tokens` generated after `context`.
    ///
    /// Critic-based schedules make a single causal pass over the context and
    /// the generated tokens, reading the score at each position.
    pub fn rewards(&self, context: &[usize], tokens: &[usize], reference: Option<&[usize]>) -> Result<Vec<f32>> {
        let t_len = tokens.len();
        if t_len == 0 {
            return Err(contract!("rewards for an empty completion"));
        }
        if let ScheduleKind::Binary01 = self.kind {
            let reference = reference
                .ok_or_else(|| Error::Config("the binary reward schedule needs the reference".into()))?;
            return Ok(tokens
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let want = reference.get(i).copied().unwrap_or(EOS_ID);
                    let hit = i <= reference.len() && y == want;
                    if hit {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect());
        }
        let critic = self.critic()?;
        let body = match tokens.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => tokens,
        };
        let mut ids = Vec::with_capacity(context.len() + body.len());
        ids.extend_from_slice(context);
        ids.extend_from_slice(body);
        let scores = critic_scores_all(critic, &ids)?;
        // Position of the newest token after step t; `</s>` reuses the
        // previous position, so it repeats the score without it.
        let at = |t: usize| {
            let k = if tokens[t - 1] == EOS_ID { t - 1 } else { t };
            scores[context.len() - 1 + k]
        };
        let r_final = at(t_len);
        Ok(match self.kind {
            ScheduleKind::ImmediateCritic => (1..=t_len).map(at).collect(),
            ScheduleKind::Delayed => {
                let mut r = vec![0.0; t_len];
                r[t_len - 1] = r_final;
                r
            }
            ScheduleKind::LinearAttenuation => (1..=t_len)
                .map(|t| linear_attenuation(r_final, t, t_len, self.la_increasing))
                .collect(),
            ScheduleKind::Binary01 => unreachable!(),
        })
    }

    /// Reward for step `t` (1-based) of a `t_len`-step completion, computed
    /// from scratch for that step alone.
    pub fn step_reward(
        &self,
        context: &[usize],
        generated: &[usize],
        t: usize,
        t_len: usize,
        reference: Option<&[usize]>,
    ) -> Result<f32> {
        if t == 0 || t > t_len || generated.len() < t_len {
            return Err(contract!("step {} of a {}-step completion", t, t_len));
        }
        let score_upto = |k: usize| -> Result<f32> {
            let mut ids = context.to_vec();
            ids.extend_from_slice(&generated[..k]);
            critic_score(self.critic()?, &ids)
        };
        let terminal = || {
            if generated[t_len - 1] == EOS_ID {
                score_upto(t_len - 1)
            } else {
                score_upto(t_len)
            }
        };
        match self.kind {
            ScheduleKind::ImmediateCritic => {
                if generated[t - 1] == EOS_ID {
                    score_upto(t - 1)
                } else {
                    score_upto(t)
                }
            }
            ScheduleKind::Delayed => {
                if t < t_len {
                    Ok(0.0)
                } else {
                    terminal()
                }
            }
            ScheduleKind::LinearAttenuation => Ok(linear_attenuation(terminal()?, t, t_len, self.la_increasing)),
            ScheduleKind::Binary01 => Ok(self.rewards(context, &generated[..t_len], reference)?[t - 1]),
        }
    }
}

/// `r_T (T - t + 1) / T`, or `r_T t / T` for the increasing variant.
pub fn linear_attenuation(r_final: f32, t: usize, t_len: usize, increasing: bool) -> f32 {
    let w = if increasing { t } else { t_len - t + 1 };
    r_final * w as f32 / t_len as f32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: Vec<usize>,
    /// Position of the first context token in the actor's window.
    pub offset: usize,
    /// Generated tokens, possibly ending with `</s>`.
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.tokens.last() == Some(&EOS_ID)
    }
}

/// Samples up to ten tokens plus an optional `</s>` and fills in rewards.
///
/// The horizon is eleven steps; an eleventh token other than `</s>` is
/// dropped so every trajectory holds at most ten code tokens.
pub fn sample_trajectory(
    actor: &DecoderLM,
    schedule: &RewardSchedule,
    example: &EncodedExample,
    temperature: f32,
    rng: &mut rng::Rng,
) -> Result<Trajectory> {
    let mut g = generate_at(
        actor,
        &example.context,
        example.offset,
        DecodeMode::Sample { temperature },
        REFERENCE_LEN + 1,
        rng,
    )?;
    if g.tokens.len() > REFERENCE_LEN && g.tokens.last() != Some(&EOS_ID) {
        g.tokens.pop();
        g.log_probs.pop();
    }
    let rewards = schedule.rewards(&example.context, &g.tokens, Some(example.reference_ids()))?;
    Ok(Trajectory {
        context: example.context.clone(),
        offset: example.offset,
        tokens: g.tokens,
        log_probs: g.log_probs,
        rewards,
    })
}

/// `-(1/N) Σ_i Σ_t w_it log p(ŷ_t | ...)` recorded on `tape`, where
/// `weights[i]` holds the constant step weights of trajectory `i`.
pub fn drl_loss_on(
    tape: &mut Tape,
    actor: &DecoderLM,
    vars: &ParamVars,
    trajectories: &[&Trajectory],
    weights: &[Vec<f32>],
) -> Result<Var> {
    if trajectories.is_empty() || trajectories.len() != weights.len() {
        return Err(contract!("{} trajectories with {} weight rows", trajectories.len(), weights.len()));
    }
    let n = trajectories.len() as f32;
    let mut acc: Option<Var> = None;
    for (tr, w) in trajectories.iter().zip(weights) {
        if tr.is_empty() {
            return Err(contract!("policy loss of an empty trajectory"));
        }
        if w.len() != tr.len() || w.iter().any(|r| !r.is_finite()) {
            return Err(contract!("trajectory needs {} finite rewards, got {:?}", tr.len(), w));
        }
        let c = tr.context.len();
        let mut ids = tr.context.clone();
        ids.extend_from_slice(&tr.tokens[..tr.len() - 1]);
        let h = actor.forward_hidden_at(tape, vars, &ids, tr.offset)?;
        let h = tape.slice_rows(h, c - 1, ids.len())?;
        let logits = actor.logits(tape, vars, h)?;
        // Cross-entropy is -log p, so weighting it by r gives -r log p.
        let nll = tape.cross_entropy_rows(logits, &tr.tokens)?;
        let scaled: Vec<f32> = w.iter().map(|r| r / n).collect();
        let term = tape.weighted_sum(nll, &scaled)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one trajectory"))
}

/// Policy loss of trajectories weighted by their own per-step rewards.
pub fn drl_loss(actor: &DecoderLM, trajectories: &[&Trajectory]) -> Result<f32> {
    let mut tape = Tape::inference();
    let vars = actor.attach(&mut tape);
    let w: Vec<Vec<f32>> = trajectories.iter().map(|t| t.rewards.clone()).collect();
    let l = drl_loss_on(&mut tape, actor, &vars, trajectories, &w)?;
    Ok(tape.scalar(l))
}

/// Supervised plus policy loss on one tape.
pub fn joint_loss_on(
    tape: &mut Tape,
    actor: &DecoderLM,
    vars: &ParamVars,
    batch: &SftBatch,
    trajectories: &[&Trajectory],
    weights: &[Vec<f32>],
) -> Result<(Var, Var, Var)> {
    let sft = sft_loss_on(tape, actor, vars, batch)?;
    let drl = drl_loss_on(tape, actor, vars, trajectories, weights)?;
    Ok((tape.add(sft, drl)?, sft, drl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Joint,
    SftOnly,
    DrlOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub schedule: ScheduleKind,
    pub samples_per_example: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub temperature: f32,
    /// Multiplies every reward; zero turns alignment into plain supervision.
    pub reward_scale: f32,
    /// Weight step `t` by `r_t`; otherwise every step gets the final reward.
    pub per_step_reward: bool,
    /// Subtract the batch-mean reward.
    pub baseline: bool,
    /// Draw fresh trajectories every epoch rather than once up front.
    pub resample_each_epoch: bool,
    pub la_increasing: bool,
    pub clip: Option<f32>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            lr: 2e-5,
            schedule: ScheduleKind::ImmediateCritic,
            samples_per_example: 1,
            seed: 0,
            loss_mode: LossMode::Joint,
            temperature: 1.0,
            reward_scale: 1.0,
            per_step_reward: true,
            baseline: false,
            resample_each_epoch: true,
            la_increasing: false,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignEpochLog {
    pub epoch: usize,
    pub sft_loss: f32,
    pub drl_loss: f32,
    pub edit_sim: Option<f64>,
    pub em: Option<f64>,
    pub bleu4: Option<f64>,
}

/// Step weights from rewards according to the configuration.
pub fn step_weights(config: &AlignConfig, trajectories: &[&Trajectory]) -> Vec<Vec<f32>> {
    let mut w: Vec<Vec<f32>> = trajectories
        .iter()
        .map(|t| {
            if config.per_step_reward {
                t.rewards.iter().map(|r| r * config.reward_scale).collect()
            } else {
                let last = t.rewards.last().copied().unwrap_or(0.0);
                vec![last * config.reward_scale; t.len()]
            }
        })
        .collect();
    if config.baseline {
        let n: usize = w.iter().map(Vec::len).sum();
        let mean = w.iter().flatten().sum::<f32>() / n.max(1) as f32;
        w.iter_mut().flatten().for_each(|r| *r -= mean);
    }
    w
}

/// Alignment inputs besides the actor.
pub struct AlignData<'a> {
    pub vocab: &'a Vocab,
    pub train: &'a [EncodedExample],
    /// Scored with greedy decoding after every epoch; may be empty.
    pub valid: &'a [EncodedExample],
}

pub fn train_ircoco(
    actor: &mut DecoderLM,
    critic: Option<&DecoderLM>,
    data: &AlignData,
    config: &AlignConfig,
) -> Result<Vec<AlignEpochLog>> {
    train_ircoco_with(actor, critic, data, config, |_, _| {})
}

/// [`train_ircoco`] calling `on_step(step, actor)` after every update.
pub fn train_ircoco_with<F: FnMut(usize, &DecoderLM)>(
    actor: &mut DecoderLM,
    critic: Option<&DecoderLM>,
    data: &AlignData,
    config: &AlignConfig,
    mut on_step: F,
) -> Result<Vec<AlignEpochLog>> {
    let train = data.train;
    if train.is_empty() {
        return Err(contract!("alignment set is empty"));
    }
    let uses_policy = config.loss_mode != LossMode::SftOnly;
    let schedule = if uses_policy {
        Some(RewardSchedule::new(config.schedule, critic)?.with_increasing_attenuation(config.la_increasing))
    } else {
        None
    };
    if let Some(c) = critic.filter(|_| uses_policy && config.schedule.needs_critic()) {
        if c.config().max_len < actor.config().max_len {
            return Err(Error::Config("critic max_len is shorter than the actor's".into()));
        }
    }
    let k = config.samples_per_example.max(1);
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), actor.params());
    let mut order = rng::stream(config.seed, rng::STREAM_ORDER);
    let mut sampler = rng::stream(config.seed, rng::STREAM_SAMPLE);

    let sample_for = |actor: &DecoderLM, idx: &[usize], sampler: &mut rng::Rng| -> Result<Vec<Trajectory>> {
        let s = schedule.as_ref().expect("policy modes have a schedule");
        let mut out = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            for _ in 0..k {
                out.push(sample_trajectory(actor, s, &train[i], config.temperature, sampler)?);
            }
        }
        Ok(out)
    };
    let fixed: Option<Vec<Trajectory>> = if uses_policy && !config.resample_each_epoch {
        let all: Vec<usize> = (0..train.len()).collect();
        Some(sample_for(actor, &all, &mut sampler)?)
    } else {
        None
    };

    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train.len(), config.batch_size, &mut order);
        let (mut sft_sum, mut drl_sum) = (0.0f64, 0.0f64);
        for idx in &batches {
            let refs: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = SftBatch::new(&refs, false);
            let fresh;
            let trajs: Vec<&Trajectory> = if !uses_policy {
                Vec::new()
            } else if let Some(all) = &fixed {
                idx.iter().flat_map(|&i| &all[i * k..(i + 1) * k]).collect()
            } else {
                fresh = sample_for(actor, idx, &mut sampler).map_err(|e| divergence(epoch, step, e))?;
                fresh.iter().collect()
            };
            let weights = step_weights(config, &trajs);

            let mut tape = Tape::new();
            let vars = actor.attach(&mut tape);
            let recorded = match config.loss_mode {
                LossMode::Joint => joint_loss_on(&mut tape, actor, &vars, &batch, &trajs, &weights)
                    .map(|(l, s, d)| (l, Some(s), Some(d))),
                LossMode::SftOnly => sft_loss_on(&mut tape, actor, &vars, &batch).map(|s| (s, Some(s), None)),
                LossMode::DrlOnly => {
                    drl_loss_on(&mut tape, actor, &vars, &trajs, &weights).map(|d| (d, None, Some(d)))
                }
            };
            let (loss, sft, drl) = recorded.map_err(|e| divergence(epoch, step, e))?;
            sft_sum += sft.map_or(0.0, |v| tape.scalar(v) as f64);
            drl_sum += drl.map_or(0.0, |v| tape.scalar(v) as f64);
            apply_update(actor, &tape, &vars, loss, &mut adam, config.clip, (epoch, step))?;
            step += 1;
            on_step(step, actor);
        }
        let n = batches.len() as f64;
        let report = if data.valid.is_empty() {
            None
        } else {
            Some(evaluate(actor, data.vocab, data.valid)?)
        };
        log.push(AlignEpochLog {
            epoch,
            sft_loss: (sft_sum / n) as f32,
            drl_loss: (drl_sum / n) as f32,
            edit_sim: report.as_ref().map(|r| r.edit_sim),
            em: report.as_ref().map(|r| r.em),
            bleu4: report.as_ref().map(|r| r.bleu4),
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;
    use rand::SeedableRng;

    fn model(head: HeadKind, seed: u64) -> DecoderLM {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            vocab_size: 9,
            max_len: 24,
            head_kind: head,
        };
        DecoderLM::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn traj(tokens: &[usize], rewards: &[f32]) -> Trajectory {
        Trajectory {
            context: vec![1, 4],
            offset: 0,
            tokens: tokens.to_vec(),
            log_probs: vec![0.0; tokens.len()],
            rewards: rewards.to_vec(),
        }
    }

    #[test]
    fn delayed_and_attenuated_shapes() {
        let critic = model(HeadKind::Scalar, 2);
        let d = RewardSchedule::new(ScheduleKind::Delayed, Some(&critic)).unwrap();
        let r = d.rewards(&[1, 4], &[5, 6, 7, 8, 5], None).unwrap();
        assert_eq!(&r[..4], &[0.0; 4]);
        assert!(r[4] > 0.0 && r[4] < 1.0);
        let la: Vec<f32> = (1..=4).map(|t| linear_attenuation(0.8, t, 4, false)).collect();
        for (a, b) in la.iter().zip([0.8, 0.6, 0.4, 0.2]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn end_marker_repeats_previous_score() {
        let critic = model(HeadKind::Scalar, 2);
        let s = RewardSchedule::new(ScheduleKind::ImmediateCritic, Some(&critic)).unwrap();
        let r = s.rewards(&[1, 4], &[5, 6, EOS_ID], None).unwrap();
        assert_eq!(r[2], r[1]);
        assert_eq!(r[2], critic_score(&critic, &[1, 4, 5, 6]).unwrap());
        for t in 1..=3 {
            assert_eq!(s.step_reward(&[1, 4], &[5, 6, EOS_ID], t, 3, None).unwrap(), r[t - 1]);
        }
        let only_eos = s.rewards(&[1, 4], &[EOS_ID], None).unwrap();
        assert_eq!(only_eos[0], critic_score(&critic, &[1, 4]).unwrap());
    }

    #[test]
    fn binary_rewards_match_reference() {
        let s = RewardSchedule::new(ScheduleKind::Binary01, None).unwrap();
        let r = s.rewards(&[1], &[5, 7, 6, EOS_ID], Some(&[5, 6, 6])).unwrap();
        assert_eq!(r, vec![1.0, 0.0, 1.0, 1.0]);
        assert!(s.rewards(&[1], &[5], None).is_err());
    }

    #[test]
    fn schedules_requiring_a_critic_reject_none() {
        assert!(matches!(
            RewardSchedule::new(ScheduleKind::ImmediateCritic, None),
            Err(Error::Config(_))
        ));
        assert!(RewardSchedule::new(ScheduleKind::Delayed, None).is_err());
    }

    #[test]
    fn zero_rewards_give_zero_loss() {
        let actor = model(HeadKind::Vocabulary, 1);
        let t = traj(&[5, 6], &[0.0, 0.0]);
        assert_eq!(drl_loss(&actor, &[&t]).unwrap(), 0.0);
        assert!(drl_loss(&actor, &[&traj(&[], &[])]).is_err());
    }

    #[test]
    fn single_step_loss_is_negative_log_prob() {
        let mut actor = model(HeadKind::Vocabulary, 1);
        let n = actor.params().len();
        actor.params_mut()[n - 2].data.fill(0.0);
        let b = &mut actor.params_mut()[n - 1].data;
        b.fill(-1e4);
        b[5] = 0.0;
        b[6] = 0.0;
        let l = drl_loss(&actor, &[&traj(&[5], &[1.0])]).unwrap();
        assert!((l - core::f32::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn trajectory_constant_and_baseline_weights() {
        let a = traj(&[5, 6], &[0.2, 0.6]);
        let b = traj(&[5], &[0.4]);
        let mut cfg = AlignConfig {
            per_step_reward: false,
            ..AlignConfig::default()
        };
        assert_eq!(step_weights(&cfg, &[&a, &b]), vec![vec![0.6, 0.6], vec![0.4]]);
        cfg.per_step_reward = true;
        cfg.baseline = true;
        let w = step_weights(&cfg, &[&a, &b]);
        let total: f32 = w.iter().flatten().sum();
        assert!(total.abs() < 1e-6);
    }
}
