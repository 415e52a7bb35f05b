use ircoco_core::drl::{joint_loss_on, Trajectory};
use ircoco_core::gradcheck::{check_model, finite_difference_check, GradCheckReport};
use ircoco_core::lm::{DecoderLM, HeadKind, ModelConfig};
use ircoco_core::rng;
use ircoco_core::sft::{sft_loss_on, SftBatch};
use ircoco_core::critic::critic_loss_on;
use ircoco_core::{Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

const EPS: f32 = 1e-2;
const MODEL_EPS: f32 = 1e-2;
const TOL: f64 = 5e-2;
const PROBES: usize = 32;

fn random(shape: &[usize], scale: f32, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, 0);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-scale..scale)).collect()).unwrap()
}

fn named(name: &str, t: Tensor) -> (String, Tensor) {
    (name.to_string(), t)
}

/// Reduces any output to a scalar with fixed random weights so every
/// output entry reaches the gradient.
fn project(t: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut r = rng::stream(seed, 9);
    let w: Vec<f32> = (0..t.value(y).len()).map(|_| r.random_range(-1.0..1.0)).collect();
    t.weighted_sum(y, &w)
}

fn assert_pass(r: GradCheckReport) {
    assert!(r.pass, "worst {:.3e}: {:?}", r.worst(), r.params);
}

fn check<F>(params: Vec<(String, Tensor)>, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_eps(params, f, EPS);
}

fn check_eps<F>(params: Vec<(String, Tensor)>, f: F, eps: f32)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert_pass(finite_difference_check(f, &params, eps, TOL, 0).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn matmul(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        check(vec![named("a", random(&[m, k], 1.0, seed)), named("b", random(&[k, n], 1.0, seed + 1))],
            |t, v| { let y = t.matmul(v[0], v[1])?; project(t, y, seed) });
    }

    #[test]
    fn add_same_shape_and_broadcast_row(m in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        check(vec![named("a", random(&[m, n], 1.0, seed)), named("b", random(&[m, n], 1.0, seed + 1))],
            |t, v| { let y = t.add(v[0], v[1])?; project(t, y, seed) });
        check(vec![named("a", random(&[m, n], 1.0, seed)), named("row", random(&[n], 1.0, seed + 1))],
            |t, v| { let y = t.add(v[0], v[1])?; project(t, y, seed) });
    }

    #[test]
    fn mul_scale_sum(m in 1usize..5, n in 1usize..5, c in -3.0f32..3.0, seed in any::<u64>()) {
        check(vec![named("a", random(&[m, n], 1.0, seed)), named("b", random(&[m, n], 1.0, seed + 1))],
            |t, v| { let y = t.mul(v[0], v[1])?; let y = t.scale(y, c)?; project(t, y, seed) });
        check(vec![named("x", random(&[m, n], 1.0, seed))],
            |t, v| { let sq = t.mul(v[0], v[0])?; t.sum(sq) });
    }

    #[test]
    fn softmax_rows(m in 1usize..5, n in 1usize..6, seed in any::<u64>()) {
        check(vec![named("x", random(&[m, n], 2.0, seed))],
            |t, v| { let y = t.softmax_rows(v[0])?; project(t, y, seed) });
    }

    #[test]
    fn layer_norm(m in 1usize..4, n in 3usize..7, seed in any::<u64>()) {
        // Normalization is steep when a row's entries nearly coincide, so
        // the probe is kept small.
        check_eps(
            vec![
                named("x", random(&[m, n], 1.0, seed)),
                named("gamma", random(&[n], 1.0, seed + 1)),
                named("beta", random(&[n], 1.0, seed + 2)),
            ],
            |t, v| { let y = t.layer_norm(v[0], v[1], v[2])?; project(t, y, seed) },
            1e-3,
        );
    }

    #[test]
    fn gelu_and_sigmoid(m in 1usize..4, n in 1usize..5, seed in any::<u64>()) {
        check(vec![named("x", random(&[m, n], 3.0, seed))],
            |t, v| { let y = t.gelu(v[0])?; project(t, y, seed) });
        check(vec![named("x", random(&[m, n], 3.0, seed))],
            |t, v| { let y = t.sigmoid(v[0])?; project(t, y, seed) });
    }

    #[test]
    fn embed_lookup(v in 1usize..6, d in 1usize..4, ids in prop::collection::vec(0usize..6, 1..6), seed in any::<u64>()) {
        let ids: Vec<usize> = ids.into_iter().map(|i| i % v).collect();
        check(vec![named("table", random(&[v, d], 1.0, seed))],
            |t, p| { let y = t.embed_lookup(p[0], &ids)?; project(t, y, seed) });
    }

    #[test]
    fn concat_and_slice_rows(a in 1usize..4, b in 1usize..4, n in 1usize..4, seed in any::<u64>()) {
        check(vec![named("a", random(&[a, n], 1.0, seed)), named("b", random(&[b, n], 1.0, seed + 1))],
            |t, v| {
                let y = t.concat_rows(v[0], v[1])?;
                let y = t.slice_rows(y, a.saturating_sub(1), a + b)?;
                project(t, y, seed)
            });
    }

    #[test]
    fn cross_entropy_rows(m in 1usize..5, n in 2usize..7, seed in any::<u64>()) {
        let targets: Vec<usize> = (0..m).map(|i| (seed as usize + i * 7) % n).collect();
        check(vec![named("logits", random(&[m, n], 2.0, seed))],
            |t, v| { let y = t.cross_entropy_rows(v[0], &targets)?; project(t, y, seed) });
    }

    #[test]
    fn mse(m in 1usize..6, seed in any::<u64>()) {
        let target: Vec<f32> = random(&[m], 1.0, seed + 5).data;
        check(vec![named("pred", random(&[m, 1], 1.0, seed))], |t, v| t.mse(v[0], &target));
    }

    #[test]
    fn causal_attention(steps in 1usize..5, heads in 1usize..3, dh in 1usize..3, seed in any::<u64>()) {
        let d = heads * dh;
        check(vec![named("qkv", random(&[steps, 3 * d], 1.0, seed))],
            |t, v| { let y = t.causal_attention(v[0], heads)?; project(t, y, seed) });
    }
}

#[test]
fn fan_out_accumulates() {
    let x = Tensor::new(&[1, 3], vec![1.0, -2.0, 0.5]).unwrap().with_grad();
    let mut t = Tape::new();
    let v = t.leaf(&x);
    let y = t.add(v, v).unwrap();
    let s = t.sum(y).unwrap();
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(v), vec![2.0, 2.0, 2.0]);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(m in 1usize..6, n in 1usize..9, seed in any::<u64>()) {
        let mut t = Tape::inference();
        let x = t.leaf(&random(&[m, n], 20.0, seed));
        let y = t.softmax_rows(x).unwrap();
        for row in t.value(y).chunks(n) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f32>() - 1.0).abs() <= 1e-5);
        }
    }
}

fn model(kind: HeadKind, seed: u64) -> DecoderLM {
    let cfg = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 32,
        vocab_size: 64,
        max_len: 16,
        head_kind: kind,
    };
    let mut m = DecoderLM::new(cfg, &mut rng::stream(seed, rng::STREAM_INIT)).unwrap();
    // Larger weights than the initializer so every tensor gets a gradient
    // well above the finite-difference noise.
    let mut r = rng::stream(seed, 7);
    for p in m.params_mut() {
        for x in p.data.iter_mut() {
            *x += r.random_range(-0.1..0.1);
        }
    }
    m
}

fn batch() -> SftBatch {
    SftBatch {
        ids: vec![vec![1, 10, 11, 12, 13, 2], vec![1, 20, 21, 22, 0, 0]],
        mask: vec![
            vec![false, false, true, true, true, true],
            vec![false, true, true, true, false, false],
        ],
        offsets: vec![3, 0],
    }
}

#[test]
fn supervised_loss_matches_finite_differences() {
    let m = model(HeadKind::Vocabulary, 1);
    let b = batch();
    let r = check_model(&m, |t, m, v| sft_loss_on(t, m, v, &b), MODEL_EPS, TOL, PROBES).unwrap();
    assert_pass(r);
}

#[test]
fn critic_loss_matches_finite_differences() {
    let m = model(HeadKind::Scalar, 2);
    let a = [1usize, 5, 6, 7];
    let b = [1usize, 9];
    let data: Vec<(&[usize], f32)> = vec![(&a, 0.9), (&b, 0.1)];
    let r = check_model(&m, |t, m, v| critic_loss_on(t, m, v, &data), MODEL_EPS, TOL, PROBES).unwrap();
    assert_pass(r);
}

#[test]
fn joint_loss_matches_finite_differences() {
    let m = model(HeadKind::Vocabulary, 3);
    let b = batch();
    let trajs = [
        Trajectory {
            context: vec![1, 10, 11],
            offset: 2,
            tokens: vec![30, 31, 2],
            log_probs: vec![0.0; 3],
            rewards: vec![0.4, -0.2, 0.7],
        },
        Trajectory {
            context: vec![1, 20],
            offset: 0,
            tokens: vec![40],
            log_probs: vec![0.0],
            rewards: vec![1.0],
        },
    ];
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    let weights: Vec<Vec<f32>> = trajs.iter().map(|t| t.rewards.clone()).collect();
    let r = check_model(
        &m,
        |t, m, v| Ok(joint_loss_on(t, m, v, &b, &refs, &weights)?.0),
        MODEL_EPS,
        TOL,
        PROBES,
    )
    .unwrap();
    assert_pass(r);
}
