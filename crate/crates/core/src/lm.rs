//! Decoder-only transformer shared by the completion policy and the critic.
//!
//! Pre-norm GPT-2 layout: token plus learned position embeddings, `layers`
//! blocks of causal multi-head attention and a GELU feed-forward of width
//! `4 * d_model`, a final layer norm, then either a vocabulary head
//! (`softmax(h K + b)`) or a scalar head read at the last position.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EOS_ID;
use crate::error::{contract, Error, Result};
use crate::kernels;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Vocabulary,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub head_kind: HeadKind,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(contract!(
                "d_model {} not divisible into {} heads",
                self.d_model,
                self.heads
            ));
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return Err(contract!("vocab_size and max_len must be positive"));
        }
        Ok(())
    }

    pub fn num_tensors(&self) -> usize {
        2 + BLOCK_TENSORS * self.layers + 4
    }
}

const BLOCK_TENSORS: usize = 12;
const BLOCK_NAMES: [&str; BLOCK_TENSORS] = [
    "ln1.gamma",
    "ln1.beta",
    "attn.w_qkv",
    "attn.b_qkv",
    "attn.w_out",
    "attn.b_out",
    "ln2.gamma",
    "ln2.beta",
    "mlp.w_fc",
    "mlp.b_fc",
    "mlp.w_proj",
    "mlp.b_proj",
];

// Indices into a block's tensors.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const W_QKV: usize = 2;
const B_QKV: usize = 3;
const W_OUT: usize = 4;
const B_OUT: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W_FC: usize = 8;
const B_FC: usize = 9;
const W_PROJ: usize = 10;
const B_PROJ: usize = 11;

/// Parameter names and shapes in storage order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        (String::from("tok_emb"), vec![cfg.vocab_size, d]),
        (String::from("pos_emb"), vec![cfg.max_len, d]),
    ];
    for b in 0..cfg.layers {
        let shapes = [
            vec![d],
            vec![d],
            vec![d, 3 * d],
            vec![3 * d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, 4 * d],
            vec![4 * d],
            vec![4 * d, d],
            vec![d],
        ];
        for (name, shape) in BLOCK_NAMES.iter().zip(shapes) {
            out.push((format!("blocks.{b}.{name}"), shape));
        }
    }
    out.push((String::from("ln_f.gamma"), vec![d]));
    out.push((String::from("ln_f.beta"), vec![d]));
    match cfg.head_kind {
        HeadKind::Vocabulary => {
            out.push((String::from("head.k"), vec![d, cfg.vocab_size]));
            out.push((String::from("head.b"), vec![cfg.vocab_size]));
        }
        HeadKind::Scalar => {
            out.push((String::from("head.w"), vec![d]));
            out.push((String::from("head.b"), vec![1]));
        }
    }
    out
}

/// Standard normal draw via Box-Muller.
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)) as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLM {
    config: ModelConfig,
    params: Vec<Tensor>,
}

/// Leaves of a model's parameters on one tape.
#[derive(Debug, Clone)]
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl DecoderLM {
    /// GPT-2 style initialization: N(0, 0.02) weights, residual projections
    /// scaled by `1/sqrt(2 * layers)`, zero biases, unit norms.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let proj_std = 0.02 / libm::sqrtf(2.0 * config.layers.max(1) as f32);
        let params = param_layout(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with("gamma") {
                    vec![1.0; n]
                } else if shape.len() == 2 || name == "head.w" {
                    let std = if name.ends_with("w_out") || name.ends_with("w_proj") {
                        proj_std
                    } else {
                        0.02
                    };
                    (0..n).map(|_| normal(rng) * std).collect()
                } else {
                    vec![0.0; n]
                };
                Tensor::new(&shape, data).map(Tensor::with_grad)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, params })
    }

    /// Rebuilds a model from stored tensors, checking every shape.
    pub fn from_parts(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(contract!(
                "expected {} tensors, got {}",
                layout.len(),
                params.len()
            ));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(contract!(
                    "tensor {} has shape {:?}, expected {:?}",
                    name,
                    p.shape(),
                    shape
                ));
            }
        }
        let params = params.into_iter().map(Tensor::with_grad).collect();
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (String, &Tensor)> {
        param_layout(&self.config)
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.params.iter())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    fn block(&self, b: usize, i: usize) -> &Tensor {
        &self.params[2 + BLOCK_TENSORS * b + i]
    }

    fn tail(&self, i: usize) -> &Tensor {
        &self.params[2 + BLOCK_TENSORS * self.config.layers + i]
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn attach(&self, tape: &mut Tape) -> ParamVars {
        let d = self.config.d_model;
        let last = self.params.len() - 2;
        ParamVars(
            self.params
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if i == last && self.config.head_kind == HeadKind::Scalar {
                        tape.leaf_as(p, &[d, 1]).expect("head.w is d values")
                    } else {
                        tape.leaf(p)
                    }
                })
                .collect(),
        )
    }

    /// Adds the gradients recorded for `vars` into the parameters' `grad`.
    pub fn accumulate_grads(&mut self, grads: &crate::tape::Gradients, vars: &ParamVars) {
        for (p, &v) in self.params.iter_mut().zip(&vars.0) {
            grads.accumulate_into(v, p);
        }
    }

    pub fn check_input(&self, ids: &[usize]) -> Result<()> {
        self.check_input_at(ids, 0)
    }

    fn check_input_at(&self, ids: &[usize], offset: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(contract!("empty input sequence"));
        }
        if offset + ids.len() > self.config.max_len {
            return Err(contract!(
                "sequence of {} tokens at position {} exceeds max_len {}",
                ids.len(),
                offset,
                self.config.max_len
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(contract!(
                "token id {} outside vocabulary of {}",
                bad,
                self.config.vocab_size
            ));
        }
        Ok(())
    }

    /// Final-block hidden states `[T × d_model]` (after the last layer norm).
    pub fn forward_hidden(&self, tape: &mut Tape, vars: &ParamVars, ids: &[usize]) -> Result<Var> {
        self.forward_hidden_at(tape, vars, ids, 0)
    }

    /// As [`forward_hidden`](Self::forward_hidden) with the first token at
    /// position `offset` of the position table.
    pub fn forward_hidden_at(&self, tape: &mut Tape, vars: &ParamVars, ids: &[usize], offset: usize) -> Result<Var> {
        self.check_input_at(ids, offset)?;
        let v = &vars.0;
        let heads = self.config.heads;
        let tok = tape.embed_lookup(v[0], ids)?;
        let pos = tape.slice_rows(v[1], offset, offset + ids.len())?;
        let mut x = tape.add(tok, pos)?;
        for b in 0..self.config.layers {
            let p = |i: usize| v[2 + BLOCK_TENSORS * b + i];
            let h = tape.layer_norm(x, p(LN1_G), p(LN1_B))?;
            let qkv = tape.matmul(h, p(W_QKV))?;
            let qkv = tape.add(qkv, p(B_QKV))?;
            let att = tape.causal_attention(qkv, heads)?;
            let att = tape.matmul(att, p(W_OUT))?;
            let att = tape.add(att, p(B_OUT))?;
            x = tape.add(x, att)?;
            let h = tape.layer_norm(x, p(LN2_G), p(LN2_B))?;
            let h = tape.matmul(h, p(W_FC))?;
            let h = tape.add(h, p(B_FC))?;
            let h = tape.gelu(h)?;
            let h = tape.matmul(h, p(W_PROJ))?;
            let h = tape.add(h, p(B_PROJ))?;
            x = tape.add(x, h)?;
        }
        let t = 2 + BLOCK_TENSORS * self.config.layers;
        tape.layer_norm(x, v[t], v[t + 1])
    }

    /// Vocabulary logits `h K + b` for every row of `hidden`.
    pub fn logits(&self, tape: &mut Tape, vars: &ParamVars, hidden: Var) -> Result<Var> {
        if self.config.head_kind != HeadKind::Vocabulary {
            return Err(contract!("model has a scalar head, not a vocabulary head"));
        }
        let t = 2 + BLOCK_TENSORS * self.config.layers;
        let z = tape.matmul(hidden, vars.0[t + 2])?;
        tape.add(z, vars.0[t + 3])
    }

    /// Squashed scalar score in (0,1) for every row of `hidden`, shape `[T × 1]`.
    pub fn scores(&self, tape: &mut Tape, vars: &ParamVars, hidden: Var) -> Result<Var> {
        if self.config.head_kind != HeadKind::Scalar {
            return Err(contract!("model has a vocabulary head, not a scalar head"));
        }
        let t = 2 + BLOCK_TENSORS * self.config.layers;
        let z = tape.matmul(hidden, vars.0[t + 2])?;
        let z = tape.add(z, vars.0[t + 3])?;
        tape.sigmoid(z)
    }

    /// Hidden states computed without recording gradients.
    pub fn hidden_states(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let vars = self.attach(&mut tape);
        let h = self.forward_hidden(&mut tape, &vars, ids)?;
        Ok(tape.to_tensor(h))
    }

    /// `softmax(K h_t + b)` at the last position.
    pub fn next_token_distribution(&self, ids: &[usize]) -> Result<Vec<f32>> {
        if self.config.head_kind != HeadKind::Vocabulary {
            return Err(contract!("model has a scalar head, not a vocabulary head"));
        }
        let mut state = DecodeState::new(self);
        let mut logits = Vec::new();
        for &id in ids {
            logits = state.push(id)?;
        }
        kernels::softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Scalar score at every position, without gradients.
    pub fn score_all(&self, ids: &[usize]) -> Result<Vec<f32>> {
        let mut tape = Tape::inference();
        let vars = self.attach(&mut tape);
        let h = self.forward_hidden(&mut tape, &vars, ids)?;
        let s = self.scores(&mut tape, &vars, h)?;
        Ok(tape.value(s).to_vec())
    }
}

/// Incremental forward pass that caches each layer's `[q|k|v]` rows.
///
/// Uses the same row kernels as the tape, so its outputs are bitwise equal
/// to the matching rows of a full forward pass.
pub struct DecodeState<'m> {
    model: &'m DecoderLM,
    qkv: Vec<Vec<f32>>,
    len: usize,
    offset: usize,
}

impl<'m> DecodeState<'m> {
    pub fn new(model: &'m DecoderLM) -> Self {
        Self::at(model, 0)
    }

    /// Starts the sequence at position `offset`.
    pub fn at(model: &'m DecoderLM, offset: usize) -> Self {
        Self {
            model,
            qkv: vec![Vec::new(); model.config.layers],
            len: 0,
            offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Final hidden state after appending `id`.
    pub fn push_hidden(&mut self, id: usize) -> Result<Vec<f32>> {
        let m = self.model;
        let cfg = &m.config;
        let d = cfg.d_model;
        if self.offset + self.len >= cfg.max_len {
            return Err(contract!("sequence exceeds max_len {}", cfg.max_len));
        }
        if id >= cfg.vocab_size {
            return Err(contract!("token id {} outside vocabulary of {}", id, cfg.vocab_size));
        }
        let i = self.len;
        let emb = &m.params[0].data[id * d..(id + 1) * d];
        let p = self.offset + i;
        let pos = &m.params[1].data[p * d..(p + 1) * d];
        let mut x: Vec<f32> = emb.iter().zip(pos).map(|(a, b)| a + b).collect();
        let mut h = vec![0.0; d];
        let mut row3 = vec![0.0; 3 * d];
        let mut att = vec![0.0; d];
        let mut proj = vec![0.0; d];
        let mut fc = vec![0.0; 4 * d];
        let mut probs = vec![0.0; cfg.heads * (i + 1)];
        for b in 0..cfg.layers {
            kernels::layer_norm_row(&x, &m.block(b, LN1_G).data, &m.block(b, LN1_B).data, &mut h);
            kernels::matmul_row(&h, &m.block(b, W_QKV).data, 3 * d, &mut row3);
            add_in_place(&mut row3, &m.block(b, B_QKV).data);
            let cache = &mut self.qkv[b];
            cache.extend_from_slice(&row3);
            kernels::attend_row(cache, d, cfg.heads, i, &mut probs, &mut att);
            kernels::matmul_row(&att, &m.block(b, W_OUT).data, d, &mut proj);
            add_in_place(&mut proj, &m.block(b, B_OUT).data);
            add_in_place(&mut x, &proj);
            kernels::layer_norm_row(&x, &m.block(b, LN2_G).data, &m.block(b, LN2_B).data, &mut h);
            kernels::matmul_row(&h, &m.block(b, W_FC).data, 4 * d, &mut fc);
            add_in_place(&mut fc, &m.block(b, B_FC).data);
            fc.iter_mut().for_each(|v| *v = kernels::gelu(*v));
            kernels::matmul_row(&fc, &m.block(b, W_PROJ).data, d, &mut proj);
            add_in_place(&mut proj, &m.block(b, B_PROJ).data);
            add_in_place(&mut x, &proj);
        }
        kernels::layer_norm_row(&x, &m.tail(0).data, &m.tail(1).data, &mut h);
        self.len += 1;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("decode"));
        }
        Ok(h)
    }

    /// Vocabulary logits after appending `id`.
    pub fn push(&mut self, id: usize) -> Result<Vec<f32>> {
        let m = self.model;
        if m.config.head_kind != HeadKind::Vocabulary {
            return Err(contract!("model has a scalar head, not a vocabulary head"));
        }
        let h = self.push_hidden(id)?;
        let v = m.config.vocab_size;
        let mut logits = vec![0.0; v];
        kernels::matmul_row(&h, &m.tail(2).data, v, &mut logits);
        add_in_place(&mut logits, &m.tail(3).data);
        Ok(logits)
    }
}

fn add_in_place(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f32 },
}

/// Tokens produced by [`generate`], possibly ending with `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f32>,
}

/// Completion without the end marker.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedOutput {
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub terminated: bool,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws from a probability vector with a single uniform number.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> usize {
    let u: f32 = rng.random::<f32>();
    let mut acc = 0.0f32;
    let mut last_nonzero = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Autoregressive generation after `prefix`, at most `max_new` tokens,
/// stopping after `</s>` (which is kept in the output).
pub fn generate<R: Rng + ?Sized>(
    model: &DecoderLM,
    prefix: &[usize],
    mode: DecodeMode,
    max_new: usize,
    rng: &mut R,
) -> Result<Generation> {
    generate_at(model, prefix, 0, mode, max_new, rng)
}

/// [`generate`] with the prefix starting at position `offset`.
pub fn generate_at<R: Rng + ?Sized>(
    model: &DecoderLM,
    prefix: &[usize],
    offset: usize,
    mode: DecodeMode,
    max_new: usize,
    rng: &mut R,
) -> Result<Generation> {
    if max_new == 0 {
        return Err(contract!("max_new must be at least 1"));
    }
    if let DecodeMode::Sample { temperature } = mode {
        if !(temperature > 0.0) {
            return Err(contract!("sampling temperature must be positive"));
        }
    }
    if prefix.is_empty() || offset + prefix.len() + max_new > model.config.max_len {
        return Err(contract!(
            "prefix of {} tokens at position {} does not leave room for {} new tokens within max_len {}",
            prefix.len(),
            offset,
            max_new,
            model.config.max_len
        ));
    }
    model.check_input_at(prefix, offset)?;
    let mut state = DecodeState::at(model, offset);
    let mut logits = Vec::new();
    for &id in prefix {
        logits = state.push(id)?;
    }
    let mut out = Generation {
        tokens: Vec::with_capacity(max_new),
        log_probs: Vec::with_capacity(max_new),
    };
    for step in 0..max_new {
        let (tok, lp) = match mode {
            DecodeMode::Greedy => {
                let t = argmax(&logits);
                (t, logits[t] - kernels::log_sum_exp(&logits))
            }
            DecodeMode::Sample { temperature } => {
                let mut scaled: Vec<f32> = logits.iter().map(|v| v / temperature).collect();
                let lse = kernels::log_sum_exp(&scaled);
                let raw = scaled.clone();
                kernels::softmax_in_place(&mut scaled);
                let t = sample_index(&scaled, rng);
                (t, raw[t] - lse)
            }
        };
        out.tokens.push(tok);
        out.log_probs.push(lp.min(0.0));
        if tok == EOS_ID || step + 1 == max_new {
            break;
        }
        logits = state.push(tok)?;
    }
    Ok(out)
}

/// Completion of `prefix`, reported without the trailing `</s>`.
pub fn decode<R: Rng + ?Sized>(
    model: &DecoderLM,
    prefix: &[usize],
    mode: DecodeMode,
    max_new: usize,
    rng: &mut R,
) -> Result<DecodedOutput> {
    decode_at(model, prefix, 0, mode, max_new, rng)
}

/// [`decode`] with the prefix starting at position `offset`.
pub fn decode_at<R: Rng + ?Sized>(
    model: &DecoderLM,
    prefix: &[usize],
    offset: usize,
    mode: DecodeMode,
    max_new: usize,
    rng: &mut R,
) -> Result<DecodedOutput> {
    let mut g = generate_at(model, prefix, offset, mode, max_new, rng)?;
    let terminated = g.tokens.last() == Some(&EOS_ID);
    if terminated {
        g.tokens.pop();
        g.log_probs.pop();
    }
    Ok(DecodedOutput {
        tokens: g.tokens,
        log_probs: g.log_probs,
        terminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(head: HeadKind) -> DecoderLM {
        let cfg = ModelConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            vocab_size: 11,
            max_len: 16,
            head_kind: head,
        };
        DecoderLM::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn layout_matches_tensor_count() {
        let m = tiny(HeadKind::Vocabulary);
        assert_eq!(m.params().len(), m.config().num_tensors());
        assert_eq!(m.named_params().next().unwrap().0, "tok_emb");
    }

    #[test]
    fn incremental_rows_equal_full_forward() {
        let m = tiny(HeadKind::Vocabulary);
        let ids = [1, 5, 7, 7, 2, 9];
        let full = m.hidden_states(&ids).unwrap();
        let mut st = DecodeState::new(&m);
        for (i, &id) in ids.iter().enumerate() {
            let h = st.push_hidden(id).unwrap();
            assert_eq!(h, full.data[i * 8..(i + 1) * 8]);
        }
    }

    #[test]
    fn offset_rows_equal_full_forward() {
        let m = tiny(HeadKind::Vocabulary);
        let ids = [1, 5, 7];
        let mut tape = Tape::inference();
        let vars = m.attach(&mut tape);
        let h = m.forward_hidden_at(&mut tape, &vars, &ids, 13).unwrap();
        let full = tape.value(h).to_vec();
        let mut st = DecodeState::at(&m, 13);
        for (i, &id) in ids.iter().enumerate() {
            assert_eq!(st.push_hidden(id).unwrap(), full[i * 8..(i + 1) * 8]);
        }
        assert!(st.push_hidden(1).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let mut m = tiny(HeadKind::Vocabulary);
        let n = m.params().len();
        m.params_mut()[n - 2].data.fill(0.0);
        m.params_mut()[n - 1].data.fill(0.0);
        let p = m.next_token_distribution(&[1, 4]).unwrap();
        for v in p {
            assert!((v - 1.0 / 11.0).abs() < 1e-7);
        }
    }

    #[test]
    fn input_contract() {
        let m = tiny(HeadKind::Vocabulary);
        assert!(m.hidden_states(&[11]).is_err());
        assert!(m.hidden_states(&[1; 17]).is_err());
        let s = tiny(HeadKind::Scalar);
        assert!(s.next_token_distribution(&[1]).is_err());
    }

    #[test]
    fn all_mass_on_eos_stops_immediately() {
        let mut m = tiny(HeadKind::Vocabulary);
        let n = m.params().len();
        m.params_mut()[n - 2].data.fill(0.0);
        let b = &mut m.params_mut()[n - 1].data;
        b.fill(-30.0);
        b[EOS_ID] = 30.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = decode(&m, &[1, 4], DecodeMode::Greedy, 5, &mut rng).unwrap();
        assert!(out.tokens.is_empty());
        assert!(out.terminated);
    }

    #[test]
    fn decode_preconditions() {
        let m = tiny(HeadKind::Vocabulary);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(decode(&m, &[1; 10], DecodeMode::Greedy, 7, &mut rng).is_err());
        assert!(decode(&m, &[1], DecodeMode::Greedy, 0, &mut rng).is_err());
        assert!(decode(&m, &[1], DecodeMode::Sample { temperature: 0.0 }, 3, &mut rng).is_err());
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5, 0.2]), 1);
    }
}
