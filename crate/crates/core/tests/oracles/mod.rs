#![allow(dead_code)]

//! Slow, obviously-correct reference implementations of the metrics.

use rand::Rng;

pub const ALPHABET: [&str; 8] = ["a", "b", "c", "(", ")", "=", "x1", "<EOL>"];

pub fn random_tokens(r: &mut impl Rng, max_len: usize) -> Vec<String> {
    let n = r.random_range(0..=max_len);
    (0..n).map(|_| ALPHABET[r.random_range(0..ALPHABET.len())].to_string()).collect()
}

/// Textbook full-matrix Levenshtein distance.
pub fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn edit_sim_oracle(c: &[String], r: &[String]) -> f64 {
    let c: Vec<char> = c.join(" ").chars().collect();
    let r: Vec<char> = r.join(" ").chars().collect();
    let max = c.len().max(r.len());
    if max == 0 {
        1.0
    } else {
        1.0 - levenshtein_oracle(&c, &r) as f64 / max as f64
    }
}

/// Counts every n-gram by linear scans, no maps.
pub fn clipped_matches(c: &[String], r: &[String], n: usize) -> (usize, usize) {
    if c.len() < n {
        return (0, 0);
    }
    let grams = |s: &[String]| -> Vec<Vec<String>> { (0..s.len()).filter(|&i| i + n <= s.len()).map(|i| s[i..i + n].to_vec()).collect() };
    let cg = grams(c);
    let rg = grams(r);
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut matches = 0;
    for g in &cg {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let in_c = cg.iter().filter(|x| *x == g).count();
        let in_r = rg.iter().filter(|x| *x == g).count();
        matches += in_c.min(in_r);
    }
    (matches, cg.len())
}

pub fn bleu_oracle(c: &[String], r: &[String], smooth: bool) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut precisions = Vec::new();
    for n in 1..=4 {
        let (m, t) = clipped_matches(c, r, n);
        let p = if smooth && n >= 2 {
            (m as f64 + 1.0) / (t as f64 + 1.0)
        } else if m == 0 {
            0.0
        } else {
            m as f64 / t as f64
        };
        precisions.push(p);
    }
    if precisions.iter().any(|&p| p == 0.0) {
        return 0.0;
    }
    let geo = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
    let bp = if c.len() < r.len() { (1.0 - r.len() as f64 / c.len() as f64).exp() } else { 1.0 };
    bp * geo.exp()
}
