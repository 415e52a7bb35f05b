//! Greedy completion of a held-out set, scored against the reference text.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{Vocab, REFERENCE_LEN};
use crate::error::{contract, Result};
use crate::lm::{decode_at, DecodeMode, DecoderLM};
use crate::metrics::{MetricAccumulator, MetricReport};
use crate::rng;
use crate::sft::EncodedExample;

/// Fails when any example id appears in both sets.
pub fn check_disjoint<'a>(
    train_ids: impl IntoIterator<Item = &'a str>,
    test: &[EncodedExample],
) -> Result<()> {
    let train: BTreeSet<&str> = train_ids.into_iter().collect();
    if let Some(e) = test.iter().find(|e| train.contains(e.id.as_str())) {
        return Err(contract!("example {} is in both the training and test split", e.id));
    }
    Ok(())
}

/// Greedy completions (at most ten tokens) for each example.
pub fn complete_all(actor: &DecoderLM, vocab: &Vocab, test: &[EncodedExample]) -> Result<Vec<Vec<String>>> {
    // Greedy decoding never draws from the generator.
    let mut unused = rng::stream(0, 0);
    test.iter()
        .map(|e| {
            let out = decode_at(actor, &e.context, e.offset, DecodeMode::Greedy, REFERENCE_LEN, &mut unused)?;
            Ok(vocab.decode(&out.tokens))
        })
        .collect()
}

pub fn evaluate(actor: &DecoderLM, vocab: &Vocab, test: &[EncodedExample]) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(contract!("evaluation on an empty test set"));
    }
    let mut acc = MetricAccumulator::new();
    for (cand, e) in complete_all(actor, vocab, test)?.iter().zip(test) {
        acc.add(cand.as_slice(), e.reference.as_slice());
    }
    Ok(acc.finish())
}
