//! Completion quality metrics: Edit-Sim, BLEU-4 and exact match.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{EOL, EOS};

/// Minimal number of single-element insertions, deletions and substitutions.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Joins surface tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Character-level `1 - levenshtein / max_len` over detokenized strings.
pub fn edit_sim<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let c: Vec<char> = detokenize(candidate).chars().collect();
    let r: Vec<char> = detokenize(reference).chars().collect();
    let max = c.len().max(r.len());
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&c, &r) as f64 / max as f64
}

fn strip_eos<S: AsRef<str>>(tokens: &[S]) -> &[S] {
    match tokens.last() {
        Some(t) if t.as_ref() == EOS => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Token-for-token equality, ignoring a trailing end-of-sequence marker.
pub fn exact_match<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> bool {
    let c = strip_eos(candidate);
    let r = strip_eos(reference);
    c.len() == r.len() && c.iter().zip(r).all(|(a, b)| a.as_ref() == b.as_ref())
}

/// Clipped n-gram matches and candidate n-gram count.
pub fn ngram_overlap<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    let mut ref_counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for w in reference.windows(n) {
        *ref_counts
            .entry(w.iter().map(|s| s.as_ref()).collect())
            .or_default() += 1;
    }
    let mut cand_counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for w in candidate.windows(n) {
        *cand_counts
            .entry(w.iter().map(|s| s.as_ref()).collect())
            .or_default() += 1;
    }
    let matches = cand_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, candidate.len() + 1 - n)
}

/// BLEU-4 with uniform weights and brevity penalty.
///
/// With `smooth`, the 2- to 4-gram precisions use add-one smoothing
/// (`(m + 1) / (t + 1)`); the unigram precision is never smoothed, so a
/// candidate sharing no token with the reference scores 0.
pub fn bleu4_with<S: AsRef<str>>(candidate: &[S], reference: &[S], smooth: bool) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let (m, t) = ngram_overlap(candidate, reference, n);
        let p = if smooth && n > 1 {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else if t == 0 || m == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += libm::log(p) / 4.0;
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { libm::exp(1.0 - r / c) } else { 1.0 };
    bp * libm::exp(log_sum)
}

/// Smoothed BLEU-4, the variant used for rewards and reports.
pub fn bleu4<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    bleu4_with(candidate, reference, true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bleu,
    EditSim,
}

impl MetricKind {
    pub fn score<S: AsRef<str>>(self, candidate: &[S], reference: &[S]) -> f64 {
        match self {
            MetricKind::Bleu => bleu4(candidate, reference),
            MetricKind::EditSim => edit_sim(candidate, reference),
        }
    }
}

/// Number of per-length buckets in a report.
pub const LENGTH_BUCKETS: usize = 10;
/// BLEU-4 is only reported for completions of at least this many tokens.
pub const MIN_BLEU_TOKENS: usize = 4;

/// Scores for examples whose completion length is `tokens`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBucket {
    pub tokens: usize,
    pub count: usize,
    pub edit_sim: Option<f64>,
    pub em: Option<f64>,
    pub bleu4: Option<f64>,
}

/// Aggregate percentages plus the per-length breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub edit_sim: f64,
    pub em: f64,
    pub bleu4: f64,
    pub per_length: Vec<LengthBucket>,
}

/// Completion length used for bucketing: reference tokens up to and
/// including the first end-of-line, or the whole reference when it has none.
pub fn completion_length<S: AsRef<str>>(reference: &[S]) -> usize {
    let r = strip_eos(reference);
    let n = r
        .iter()
        .position(|t| t.as_ref() == EOL)
        .map_or(r.len(), |p| p + 1);
    n.clamp(1, LENGTH_BUCKETS)
}

#[derive(Debug, Clone, Default)]
struct Sums {
    count: usize,
    edit_sim: f64,
    em: f64,
    bleu4: f64,
}

impl Sums {
    fn add(&mut self, es: f64, em: bool, bleu: f64) {
        self.count += 1;
        self.edit_sim += es;
        self.em += f64::from(u8::from(em));
        self.bleu4 += bleu;
    }

    fn pct(&self, total: f64) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            100.0 * total / self.count as f64
        }
    }
}

/// Streaming accumulator behind [`MetricReport`].
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    overall: Sums,
    buckets: Vec<Sums>,
}

impl Default for MetricAccumulator {
    fn default() -> Self {
        Self {
            overall: Sums::default(),
            buckets: vec![Sums::default(); LENGTH_BUCKETS],
        }
    }
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores one completion overall and, truncated to its completion
    /// length, in the matching bucket.
    pub fn add<S: AsRef<str>>(&mut self, candidate: &[S], reference: &[S]) {
        let cand = strip_eos(candidate);
        let reference = strip_eos(reference);
        self.overall.add(
            edit_sim(cand, reference),
            exact_match(cand, reference),
            bleu4(cand, reference),
        );
        let k = completion_length(reference);
        let c = &cand[..cand.len().min(k)];
        let r = &reference[..reference.len().min(k)];
        self.buckets[k - 1].add(edit_sim(c, r), exact_match(c, r), bleu4(c, r));
    }

    pub fn count(&self) -> usize {
        self.overall.count
    }

    pub fn finish(&self) -> MetricReport {
        let o = &self.overall;
        let per_length = self
            .buckets
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let tokens = i + 1;
                let some = |v: f64| (b.count > 0).then(|| b.pct(v));
                LengthBucket {
                    tokens,
                    count: b.count,
                    edit_sim: some(b.edit_sim),
                    em: some(b.em),
                    bleu4: if tokens >= MIN_BLEU_TOKENS {
                        some(b.bleu4)
                    } else {
                        None
                    },
                }
            })
            .collect();
        MetricReport {
            count: o.count,
            edit_sim: o.pct(o.edit_sim),
            em: o.pct(o.em),
            bleu4: o.pct(o.bleu4),
            per_length,
        }
    }
}

/// Average ranks (1-based), with ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| out[k] = r);
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` when either side is constant or the
/// lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / libm::sqrt(va * vb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&chars(""), &chars("abc")), 3);
        assert_eq!(levenshtein(&chars("abc"), &chars("abc")), 0);
        assert_eq!(levenshtein(&chars("kitten"), &chars("sitting")), 3);
    }

    #[test]
    fn edit_sim_examples() {
        assert_eq!(edit_sim(&["x", "=", "1"], &["x", "=", "1"]), 1.0);
        assert!((edit_sim(&["abc"], &["abd"]) - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        let empty: [&str; 0] = [];
        assert_eq!(edit_sim(&empty, &["a", "b"]), 0.0);
        assert_eq!(edit_sim(&empty, &empty), 1.0);
    }

    #[test]
    fn exact_match_examples() {
        assert!(exact_match(&["a", "b"], &["a", "b"]));
        assert!(exact_match(&["a", "b", EOS], &["a", "b"]));
        assert!(!exact_match(&["a", "c"], &["a", "b"]));
        assert!(!exact_match(&["a"], &["a", "b"]));
    }

    #[test]
    fn bleu_perfect_and_disjoint() {
        let r: Vec<String> = (0..10).map(|i| alloc::format!("t{i}")).collect();
        assert_eq!(bleu4(&r, &r), 1.0);
        assert_eq!(bleu4_with(&r, &r, false), 1.0);
        let c: Vec<String> = (0..10).map(|i| alloc::format!("u{i}")).collect();
        assert!(bleu4(&c, &r) <= 0.05);
        let empty: [&str; 0] = [];
        assert_eq!(bleu4(&empty, &["a"]), 0.0);
    }

    #[test]
    fn bleu_partial_overlap_precisions() {
        let c = ["a", "b", "c", "e"];
        let r = ["a", "b", "c", "d"];
        assert_eq!(ngram_overlap(&c, &r, 1), (3, 4));
        assert_eq!(ngram_overlap(&c, &r, 2), (2, 3));
        assert_eq!(ngram_overlap(&c, &r, 3), (1, 2));
        assert_eq!(ngram_overlap(&c, &r, 4), (0, 1));
        // 3/4 * 3/4 * 2/3 * 1/2 under smoothing of n >= 2
        let expected = libm::pow(0.75 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
        assert!((bleu4(&c, &r) - expected).abs() < 1e-12);
        assert_eq!(bleu4_with(&c, &r, false), 0.0);
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let r = ["a", "b", "c", "d"];
        let c = ["a", "b"];
        let expected = libm::exp(1.0 - 2.0) * libm::pow(1.0 * 1.0 * 1.0 * 1.0, 0.25);
        assert!((bleu4(&c, &r) - expected).abs() < 1e-12);
    }

    #[test]
    fn completion_length_uses_first_eol() {
        assert_eq!(completion_length(&["a", "b", EOL, "c"]), 3);
        assert_eq!(completion_length(&[EOL, "c"]), 1);
        let ten: Vec<&str> = alloc::vec!["x"; 10];
        assert_eq!(completion_length(&ten), 10);
    }

    #[test]
    fn report_has_ten_buckets_with_bleu_from_four() {
        let mut acc = MetricAccumulator::new();
        acc.add(&["a", EOL, "b"], &["a", EOL, "b"]);
        acc.add(&["x", "y", "z", "w", "q"], &["x", "y", "z", "w", "q"]);
        acc.add(&["p"], &["q", "r", EOL]);
        let rep = acc.finish();
        assert_eq!(rep.per_length.len(), LENGTH_BUCKETS);
        assert_eq!(rep.per_length.iter().map(|b| b.count).sum::<usize>(), 3);
        for b in &rep.per_length {
            if b.tokens < MIN_BLEU_TOKENS {
                assert!(b.bleu4.is_none());
            }
        }
        assert_eq!(rep.per_length[1].count, 1);
        assert_eq!(rep.per_length[4].bleu4, Some(100.0));
        assert!((rep.em - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn spearman_of_monotone_and_reversed() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&a, &[10.0, 20.0, 25.0, 90.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // Ties share ranks: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
        let r = spearman(&a, &[1.0, 5.0, 5.0, 9.0]).unwrap();
        assert!((r - 4.5 / libm::sqrt(5.0 * 4.5)).abs() < 1e-12);
        assert_eq!(spearman(&a, &[1.0; 4]), None);
    }
}
