//! Teacher-forced supervised training of the completion model.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{CompletionExample, Vocab, BOS_ID, EOS_ID, PAD_ID};
use crate::error::{contract, Error, Result};
use crate::lm::{DecoderLM, ParamVars};
use crate::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use crate::rng;
use crate::tape::{Tape, Var};

/// A completion example mapped to ids and fitted to the model context.
///
/// `context` is `<s>` followed by the tail of the prefix; `target` is the
/// reference followed by `</s>`. The reference text is kept for scoring so
/// out-of-vocabulary tokens never count as matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub id: String,
    pub context: Vec<usize>,
    pub target: Vec<usize>,
    pub reference: Vec<String>,
    /// Position of the first context token; contexts are right-aligned so
    /// the target always fills the last positions of the window.
    pub offset: usize,
}

impl EncodedExample {
    /// Keeps the last prefix tokens that still leave room for the reference
    /// and `</s>` within `max_len`, and anchors the target to the end of
    /// the window.
    pub fn new(vocab: &Vocab, ex: &CompletionExample, max_len: usize) -> Result<Self> {
        if ex.prefix.is_empty() {
            return Err(contract!("example {} has an empty prefix", ex.id));
        }
        let room = max_len
            .checked_sub(ex.reference.len() + 2)
            .filter(|&r| r > 0)
            .ok_or_else(|| contract!("max_len {} too small for a completion", max_len))?;
        let keep = ex.prefix.len().min(room);
        let mut context = Vec::with_capacity(keep + 1);
        context.push(BOS_ID);
        context.extend(vocab.encode(&ex.prefix[ex.prefix.len() - keep..]));
        let mut target = vocab.encode(&ex.reference);
        target.push(EOS_ID);
        let offset = max_len - context.len() - target.len();
        Ok(Self {
            id: ex.id.clone(),
            context,
            target,
            reference: ex.reference.clone(),
            offset,
        })
    }

    /// Reference ids without the end marker.
    pub fn reference_ids(&self) -> &[usize] {
        match self.target.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.target,
        }
    }

    pub fn full(&self) -> Vec<usize> {
        let mut ids = self.context.clone();
        ids.extend_from_slice(&self.target);
        ids
    }
}

pub fn encode_all(vocab: &Vocab, examples: &[CompletionExample], max_len: usize) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| EncodedExample::new(vocab, e, max_len))
        .collect()
}

/// Padded id rows with a mask over scored positions.
///
/// `mask[r][t]` marks that `ids[r][t]` is predicted from positions `..t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SftBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    /// Starting position of each row.
    pub offsets: Vec<usize>,
}

impl SftBatch {
    /// Scores the reference and `</s>`, or every position after `<s>` when
    /// `full_sequence` is set.
    pub fn new(examples: &[&EncodedExample], full_sequence: bool) -> Self {
        let width = examples
            .iter()
            .map(|e| e.context.len() + e.target.len())
            .max()
            .unwrap_or(0);
        let mut ids = Vec::with_capacity(examples.len());
        let mut mask = Vec::with_capacity(examples.len());
        let offsets = examples.iter().map(|e| e.offset).collect();
        for e in examples {
            let mut row = e.full();
            let n = row.len();
            let start = if full_sequence { 1 } else { e.context.len() };
            let mut m = vec![false; width];
            m[start..n].iter_mut().for_each(|v| *v = true);
            row.resize(width, PAD_ID);
            ids.push(row);
            mask.push(m);
        }
        Self { ids, mask, offsets }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn masked_positions(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }

    fn validate(&self) -> Result<()> {
        if self.ids.len() != self.mask.len() || self.ids.len() != self.offsets.len() {
            return Err(contract!(
                "{} id rows, {} mask rows, {} offsets",
                self.ids.len(),
                self.mask.len(),
                self.offsets.len()
            ));
        }
        for (r, (ids, mask)) in self.ids.iter().zip(&self.mask).enumerate() {
            if ids.len() != mask.len() {
                return Err(contract!("row {} has mismatched id and mask lengths", r));
            }
            if mask.first() == Some(&true) {
                return Err(contract!("row {} masks position 0, which has no context", r));
            }
            if ids.iter().zip(mask).any(|(&i, &m)| m && i == PAD_ID) {
                return Err(contract!("row {} scores a padding position", r));
            }
        }
        if self.masked_positions() == 0 {
            return Err(contract!("loss mask selects no positions"));
        }
        Ok(())
    }
}

/// Mean cross-entropy over the masked positions of `batch`, recorded on `tape`.
pub fn sft_loss_on(tape: &mut Tape, model: &DecoderLM, vars: &ParamVars, batch: &SftBatch) -> Result<Var> {
    batch.validate()?;
    let total = batch.masked_positions() as f32;
    let mut acc: Option<Var> = None;
    for ((ids, mask), &offset) in batch.ids.iter().zip(&batch.mask).zip(&batch.offsets) {
        let Some(lo) = mask.iter().position(|&m| m) else {
            continue;
        };
        let hi = mask.iter().rposition(|&m| m).map_or(0, |p| p + 1);
        let h = model.forward_hidden_at(tape, vars, &ids[..hi], offset)?;
        let h = tape.slice_rows(h, lo - 1, hi - 1)?;
        let logits = model.logits(tape, vars, h)?;
        let ce = tape.cross_entropy_rows(logits, &ids[lo..hi])?;
        let w: Vec<f32> = mask[lo..hi].iter().map(|&m| if m { 1.0 / total } else { 0.0 }).collect();
        let row = tape.weighted_sum(ce, &w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, row)?,
            None => row,
        });
    }
    acc.ok_or_else(|| contract!("loss mask selects no positions"))
}

/// Loss value without recording gradients.
pub fn sft_loss(model: &DecoderLM, batch: &SftBatch) -> Result<f32> {
    let mut tape = Tape::inference();
    let vars = model.attach(&mut tape);
    let l = sft_loss_on(&mut tape, model, &vars, batch)?;
    Ok(tape.scalar(l))
}

/// Mean per-position loss over a whole dataset.
pub fn dataset_loss(model: &DecoderLM, data: &[EncodedExample], full_sequence: bool) -> Result<f32> {
    if data.is_empty() {
        return Err(contract!("loss over an empty dataset"));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for chunk in data.chunks(16) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let batch = SftBatch::new(&refs, full_sequence);
        let k = batch.masked_positions();
        sum += sft_loss(model, &batch)? as f64 * k as f64;
        n += k;
    }
    Ok((sum / n as f64) as f32)
}

/// Shuffled minibatches of indices `0..n` for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, order: &mut rng::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(order);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Score every position instead of only the reference.
    pub full_sequence: bool,
    pub clip: Option<f32>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 8,
            lr: 3e-4,
            seed: 0,
            full_sequence: false,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SftEpochLog {
    pub epoch: usize,
    pub train_loss: f32,
    pub valid_loss: Option<f32>,
}

pub fn divergence(epoch: usize, step: usize, err: Error) -> Error {
    match err {
        Error::NumericOverflow(kind) => Error::Divergence {
            epoch,
            step,
            detail: format!("non-finite value in {kind}"),
        },
        other => other,
    }
}

/// One optimizer update from a recorded scalar loss. Returns the loss value.
pub(crate) fn apply_update(
    model: &mut DecoderLM,
    tape: &Tape,
    vars: &ParamVars,
    loss: Var,
    adam: &mut AdamState,
    clip: Option<f32>,
    (epoch, step): (usize, usize),
) -> Result<f32> {
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Divergence {
            epoch,
            step,
            detail: format!("loss became {value}"),
        });
    }
    let grads = tape.backward(loss).map_err(|e| divergence(epoch, step, e))?;
    model.zero_grad();
    model.accumulate_grads(&grads, vars);
    if let Some(c) = clip {
        let norm = clip_grad_norm(model.params_mut(), c);
        if !norm.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step,
                detail: format!("gradient norm became {norm}"),
            });
        }
    }
    adam_step(model.params_mut(), adam)?;
    Ok(value)
}

pub fn train_sft(
    model: &mut DecoderLM,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    config: &SftConfig,
) -> Result<Vec<SftEpochLog>> {
    train_sft_with(model, train, valid, config, |_, _| {})
}

/// [`train_sft`] calling `on_step(step, model)` after every update.
pub fn train_sft_with<F: FnMut(usize, &DecoderLM)>(
    model: &mut DecoderLM,
    train: &[EncodedExample],
    valid: &[EncodedExample],
    config: &SftConfig,
    mut on_step: F,
) -> Result<Vec<SftEpochLog>> {
    if train.is_empty() {
        return Err(contract!("training set is empty"));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(config.lr), model.params());
    let mut order = rng::stream(config.seed, rng::STREAM_ORDER);
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut sum = 0.0f64;
        let batches = epoch_batches(train.len(), config.batch_size, &mut order);
        for idx in &batches {
            let refs: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            let batch = SftBatch::new(&refs, config.full_sequence);
            let mut tape = Tape::new();
            let vars = model.attach(&mut tape);
            let loss = sft_loss_on(&mut tape, model, &vars, &batch).map_err(|e| divergence(epoch, step, e))?;
            sum += apply_update(model, &tape, &vars, loss, &mut adam, config.clip, (epoch, step))? as f64;
            step += 1;
            on_step(step, model);
        }
        let valid_loss = if valid.is_empty() {
            None
        } else {
            Some(dataset_loss(model, valid, config.full_sequence)?)
        };
        log.push(SftEpochLog {
            epoch,
            train_loss: (sum / batches.len() as f64) as f32,
            valid_loss,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{HeadKind, ModelConfig};
    use rand::SeedableRng;

    fn model(v: usize) -> DecoderLM {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            vocab_size: v,
            max_len: 20,
            head_kind: HeadKind::Vocabulary,
        };
        DecoderLM::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn ex(ctx: &[usize], tgt: &[usize]) -> EncodedExample {
        EncodedExample {
            id: "e".into(),
            context: ctx.to_vec(),
            target: tgt.to_vec(),
            reference: Vec::new(),
            offset: 0,
        }
    }

    #[test]
    fn uniform_model_gives_log_vocab() {
        let mut m = model(4);
        let n = m.params().len();
        m.params_mut()[n - 2].data.fill(0.0);
        let e = ex(&[1, 3], &[3, 2]);
        let loss = sft_loss(&m, &SftBatch::new(&[&e], false)).unwrap();
        assert!((loss - libm::logf(4.0)).abs() < 1e-6);
    }

    #[test]
    fn certain_model_gives_zero_loss() {
        let mut m = model(4);
        let n = m.params().len();
        m.params_mut()[n - 2].data.fill(0.0);
        let b = &mut m.params_mut()[n - 1].data;
        b.copy_from_slice(&[-200.0, -200.0, 200.0, -200.0]);
        let e = ex(&[1, 3], &[2, 2]);
        let loss = sft_loss(&m, &SftBatch::new(&[&e], false)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn batch_padding_and_mask() {
        let a = ex(&[1, 5], &[6, 2]);
        let b = ex(&[1, 5, 5, 5], &[7, 2]);
        let batch = SftBatch::new(&[&a, &b], false);
        assert_eq!(batch.ids[0], vec![1, 5, 6, 2, 0, 0]);
        assert_eq!(batch.mask[0], vec![false, false, true, true, false, false]);
        assert_eq!(batch.masked_positions(), 4);
        let empty = SftBatch {
            ids: vec![vec![1, 2]],
            mask: vec![vec![false, false]],
            offsets: vec![0],
        };
        assert!(sft_loss(&model(8), &empty).is_err());
    }

    #[test]
    fn padding_does_not_change_loss() {
        let m = model(8);
        let a = ex(&[1, 5], &[6, 2]);
        let b = ex(&[1, 5, 5, 5, 4], &[7, 2]);
        let alone = sft_loss(&m, &SftBatch::new(&[&a], false)).unwrap();
        let with_b = SftBatch::new(&[&a, &b], false);
        let mut a_only = with_b.clone();
        a_only.ids.truncate(1);
        a_only.mask.truncate(1);
        a_only.offsets.truncate(1);
        assert_eq!(sft_loss(&m, &a_only).unwrap(), alone);
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = model(8);
        let before = m.clone();
        let data = [ex(&[1, 5], &[6, 2])];
        let cfg = SftConfig {
            epochs: 0,
            ..SftConfig::default()
        };
        let log = train_sft(&mut m, &data, &[], &cfg).unwrap();
        assert!(log.is_empty());
        assert_eq!(m, before);
    }
}
