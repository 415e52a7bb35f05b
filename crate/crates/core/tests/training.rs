use ircoco_core::corpus::{split_example, Vocab, EOS_ID};
use ircoco_core::critic::{dataset_mse, train_critic, CriticConfig};
use ircoco_core::drl::{
    drl_loss_on, sample_trajectory, train_ircoco_with, AlignConfig, AlignData, LossMode, RewardSchedule, ScheduleKind,
    Trajectory,
};
use ircoco_core::lm::{DecoderLM, HeadKind, ModelConfig};
use ircoco_core::rng;
use ircoco_core::sft::{encode_all, train_sft, train_sft_with, EncodedExample, SftConfig};
use ircoco_core::synthetic::{bandit_reinforce, critic_regression_set, grammar_corpus, grammar_vocab, ScoreRule};
use ircoco_core::{Tape, Tensor};

const SYMBOLS: usize = 8;
const MAX_LEN: usize = 32;

fn config(vocab: usize, head_kind: HeadKind) -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 16,
        vocab_size: vocab,
        max_len: MAX_LEN,
        head_kind,
    }
}

fn grammar(samples: usize) -> (Vocab, Vec<EncodedExample>) {
    let vocab = grammar_vocab(SYMBOLS);
    let mut r = rng::stream(1, rng::STREAM_SPLIT);
    let ex: Vec<_> = grammar_corpus(samples, SYMBOLS, 1)
        .iter()
        .filter_map(|(id, t)| split_example(id, t, &mut r))
        .collect();
    let enc = encode_all(&vocab, &ex, MAX_LEN).unwrap();
    (vocab, enc)
}

fn fresh(vocab: usize, kind: HeadKind, seed: u64) -> DecoderLM {
    DecoderLM::new(config(vocab, kind), &mut rng::stream(seed, rng::STREAM_INIT)).unwrap()
}

#[test]
fn supervised_loss_falls_on_the_grammar() {
    let (vocab, enc) = grammar(120);
    let mut m = fresh(vocab.len(), HeadKind::Vocabulary, 1);
    let cfg = SftConfig {
        epochs: 3,
        batch_size: 8,
        lr: 3e-3,
        seed: 1,
        ..SftConfig::default()
    };
    let log = train_sft(&mut m, &enc, &[], &cfg).unwrap();
    let losses: Vec<f32> = log.iter().map(|l| l.train_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

fn actor_grads(actor: &DecoderLM, t: &Trajectory, w: &[f32]) -> Vec<Vec<f32>> {
    let mut tape = Tape::new();
    let vars = actor.attach(&mut tape);
    let loss = drl_loss_on(&mut tape, actor, &vars, &[t], &[w.to_vec()]).unwrap();
    let g = tape.backward(loss).unwrap();
    vars.vars().iter().map(|&v| g.wrt(v)).collect()
}

#[test]
fn policy_gradient_treats_rewards_as_constants() {
    let (vocab, enc) = grammar(10);
    let actor = fresh(vocab.len(), HeadKind::Vocabulary, 2);
    let mut critic = fresh(vocab.len(), HeadKind::Scalar, 3);
    let schedule = RewardSchedule::new(ScheduleKind::ImmediateCritic, Some(&critic)).unwrap();
    let t = sample_trajectory(&actor, &schedule, &enc[0], 1.0, &mut rng::stream(3, rng::STREAM_SAMPLE)).unwrap();
    let with_rewards = actor_grads(&actor, &t, &t.rewards);

    // The gradient is the reward-weighted sum of per-step score gradients.
    let mut oracle = vec![Vec::new(); with_rewards.len()];
    for (step, &r) in t.rewards.iter().enumerate() {
        let mut unit = vec![0.0; t.len()];
        unit[step] = 1.0;
        for (acc, g) in oracle.iter_mut().zip(actor_grads(&actor, &t, &unit)) {
            acc.resize(g.len(), 0.0);
            acc.iter_mut().zip(g).for_each(|(a, x)| *a += r * x);
        }
    }
    for (a, b) in with_rewards.iter().flatten().zip(oracle.iter().flatten()) {
        assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
    }

    // Moving the critic after the rewards were drawn changes nothing.
    critic.params_mut().iter_mut().for_each(|p| p.data.iter_mut().for_each(|x| *x += 0.5));
    assert_eq!(actor_grads(&actor, &t, &t.rewards), with_rewards);
}

#[test]
fn zero_rewards_reduce_alignment_to_supervision() {
    let (vocab, enc) = grammar(120);
    let critic = fresh(vocab.len(), HeadKind::Scalar, 4);
    let start = fresh(vocab.len(), HeadKind::Vocabulary, 5);
    let (epochs, batch_size, lr, seed) = (2, 4, 1e-3, 6);

    let mut aligned = start.clone();
    let mut a: Vec<Vec<Tensor>> = Vec::new();
    let align = AlignConfig {
        epochs,
        batch_size,
        lr,
        seed,
        reward_scale: 0.0,
        loss_mode: LossMode::Joint,
        ..AlignConfig::default()
    };
    let data = AlignData {
        vocab: &vocab,
        train: &enc,
        valid: &[],
    };
    train_ircoco_with(&mut aligned, Some(&critic), &data, &align, |_, m| a.push(m.params().to_vec())).unwrap();

    let mut supervised = start.clone();
    let mut s: Vec<Vec<Tensor>> = Vec::new();
    let sft = SftConfig {
        epochs,
        batch_size,
        lr,
        seed,
        ..SftConfig::default()
    };
    train_sft_with(&mut supervised, &enc, &[], &sft, |_, m| s.push(m.params().to_vec())).unwrap();

    assert!(a.len() >= 50, "{} steps", a.len());
    assert_eq!(a.len(), s.len());
    for (x, y) in a.iter().zip(&s) {
        for (p, q) in x.iter().zip(y) {
            assert_eq!(p.data, q.data);
        }
    }
    assert_ne!(start, aligned);
}

#[test]
fn rewards_follow_their_schedules_on_sampled_trajectories() {
    let (vocab, enc) = grammar(100);
    let actor = fresh(vocab.len(), HeadKind::Vocabulary, 7);
    let critic = fresh(vocab.len(), HeadKind::Scalar, 8);
    let immediate = RewardSchedule::new(ScheduleKind::ImmediateCritic, Some(&critic)).unwrap();
    let delayed = RewardSchedule::new(ScheduleKind::Delayed, Some(&critic)).unwrap();
    let la = RewardSchedule::new(ScheduleKind::LinearAttenuation, Some(&critic)).unwrap();
    let mut sampler = rng::stream(9, rng::STREAM_SAMPLE);
    let mut terminated = 0;
    for i in 0..1000 {
        let e = &enc[i % enc.len()];
        let t = sample_trajectory(&actor, &immediate, e, 1.0, &mut sampler).unwrap();
        assert!(!t.is_empty() && t.len() <= 11);
        assert!(t.tokens[..t.len() - 1].iter().all(|&y| y != EOS_ID));
        let score = |k: usize| {
            let mut ids = e.context.clone();
            ids.extend(t.tokens[..k].iter().filter(|&&y| y != EOS_ID));
            // Scored directly: a sampled `<pad>` is a real token here, not padding.
            *critic.score_all(&ids).unwrap().last().unwrap()
        };
        for (k, &r) in t.rewards.iter().enumerate() {
            assert_eq!(r, score(k + 1));
        }
        let terminal = score(t.len());
        let d = delayed.rewards(&e.context, &t.tokens, None).unwrap();
        assert_eq!(d[t.len() - 1], terminal);
        assert!(d[..t.len() - 1].iter().all(|&r| r == 0.0));
        let l = la.rewards(&e.context, &t.tokens, None).unwrap();
        for (k, r) in l.iter().enumerate() {
            let want = terminal * (t.len() - k) as f32 / t.len() as f32;
            assert!((r - want).abs() <= 1e-6);
        }
        if t.terminated() {
            terminated += 1;
        }
    }
    assert!(terminated > 0);
}

#[test]
fn reinforce_learns_the_rewarded_arm() {
    for seed in 0..3 {
        let p = bandit_reinforce(500, 0.01, seed).unwrap();
        assert!(*p.last().unwrap() >= 0.9, "seed {seed}: {:?}", p.last());
    }
}

#[test]
fn critic_fits_synthetic_targets() {
    let vocab = 16;
    for (i, rule) in [ScoreRule::PrefixLength, ScoreRule::LastToken, ScoreRule::Constant].into_iter().enumerate() {
        let train = critic_regression_set(400, vocab, 12, rule, i as u64);
        let held = critic_regression_set(100, vocab, 12, rule, 100 + i as u64);
        let mut c = fresh(vocab, HeadKind::Scalar, 10 + i as u64);
        let cfg = CriticConfig {
            epochs: 30,
            batch_size: 16,
            lr: 3e-3,
            seed: i as u64,
            clip: None,
        };
        train_critic(&mut c, &train, &[], &cfg).unwrap();
        let mse = dataset_mse(&c, &held).unwrap();
        assert!(mse <= 0.02, "{rule:?}: {mse}");
    }
}
