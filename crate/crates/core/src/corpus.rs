//! Lexing, literal normalization, vocabulary and completion-example splitting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const EOL: &str = "<EOL>";
pub const STR_LIT: &str = "<STR_LIT>";
pub const NUM_LIT: &str = "<NUM_LIT>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// Every completion reference holds exactly this many tokens.
pub const REFERENCE_LEN: usize = 10;
/// Smallest prefix a split may produce.
pub const MIN_PREFIX_LEN: usize = 2;
pub const MIN_SAMPLE_TOKENS: usize = MIN_PREFIX_LEN + REFERENCE_LEN;

/// A complete code fragment before splitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub source: String,
    pub language_tag: String,
}

/// A `(prefix, reference)` pair over surface tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionExample {
    pub id: String,
    pub prefix: Vec<String>,
    pub reference: Vec<String>,
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LexOptions {
    pub line_comment: Option<&'static str>,
    pub block_comment: Option<(&'static str, &'static str)>,
    /// Recognize `'''` / `"""` strings spanning lines.
    pub triple_quotes: bool,
}

impl LexOptions {
    pub fn for_language(tag: &str) -> Self {
        match tag {
            "python" | "py" => Self {
                line_comment: Some("#"),
                block_comment: None,
                triple_quotes: true,
            },
            "java" | "rust" | "c" | "cpp" | "javascript" | "js" | "go" => Self {
                line_comment: Some("//"),
                block_comment: Some(("/*", "*/")),
                triple_quotes: false,
            },
            _ => Self::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexed {
    pub tokens: Vec<String>,
    /// Count of string literals cut off at end of line.
    pub unterminated_strings: usize,
}

const OPERATORS_3: [&str; 9] = ["**=", "//=", ">>=", "<<=", "...", "===", "!==", ">>>", "<=>"];
const OPERATORS_2: [&str; 25] = [
    "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "->", "=>", "::",
    "**", "//", "<<", ">>", "&&", "||", "++", "--", ":=", "@=",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_char(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn is_string_prefix(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 2
        && s.chars().all(|c| matches!(c, 'r' | 'R' | 'b' | 'B' | 'u' | 'U' | 'f' | 'F'))
}

/// Language-agnostic lexer with default options.
pub fn tokenize(source: &str) -> Lexed {
    tokenize_with(source, LexOptions::default())
}

/// Splits source into identifiers, numbers, quoted strings, operators and
/// `<EOL>` markers. Runs of blank lines yield a single `<EOL>`.
pub fn tokenize_with(source: &str, opts: LexOptions) -> Lexed {
    let chars: Vec<char> = source.chars().collect();
    let starts_with = |i: usize, pat: &str| {
        let mut k = i;
        for pc in pat.chars() {
            if chars.get(k) != Some(&pc) {
                return false;
            }
            k += 1;
        }
        true
    };
    let mut out = Lexed::default();
    let push_eol = |out: &mut Lexed| {
        if out.tokens.last().is_some_and(|t| t != EOL) {
            out.tokens.push(EOL.to_string());
        }
    };
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            push_eol(&mut out);
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if let Some(lc) = opts.line_comment {
            if starts_with(i, lc) {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
        }
        if let Some((open, close)) = opts.block_comment {
            if starts_with(i, open) {
                i += open.chars().count();
                while i < chars.len() && !starts_with(i, close) {
                    i += 1;
                }
                i = (i + close.chars().count()).min(chars.len());
                continue;
            }
        }
        if c == '"' || c == '\'' {
            i = lex_string(&chars, i, i, opts, &mut out);
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') && is_string_prefix(&word) {
                i = lex_string(&chars, start, i, opts, &mut out);
            } else {
                out.tokens.push(word);
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let hex = c == '0' && matches!(chars.get(i + 1), Some('x' | 'X'));
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                if is_ident_char(d) || d == '.' {
                    i += 1;
                } else if (d == '+' || d == '-')
                    && !hex
                    && matches!(chars[i - 1], 'e' | 'E')
                {
                    i += 1;
                } else {
                    break;
                }
            }
            out.tokens.push(chars[start..i].iter().collect());
            continue;
        }
        let op = OPERATORS_3
            .iter()
            .chain(OPERATORS_2.iter())
            .find(|op| starts_with(i, op));
        match op {
            Some(op) => {
                out.tokens.push(op.to_string());
                i += op.chars().count();
            }
            None => {
                out.tokens.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}

/// Lexes a string literal whose (optional) prefix starts at `start` and whose
/// opening quote is at `q`. Returns the index after the literal.
fn lex_string(chars: &[char], start: usize, q: usize, opts: LexOptions, out: &mut Lexed) -> usize {
    let quote = chars[q];
    let triple = opts.triple_quotes
        && chars.get(q + 1) == Some(&quote)
        && chars.get(q + 2) == Some(&quote);
    let mut i = if triple { q + 3 } else { q + 1 };
    loop {
        if i >= chars.len() {
            out.unterminated_strings += 1;
            break;
        }
        let c = chars[i];
        if c == '\\' {
            i += 2;
            continue;
        }
        if triple {
            if c == quote && chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                i += 3;
                break;
            }
        } else if c == quote {
            i += 1;
            break;
        } else if c == '\n' {
            out.unterminated_strings += 1;
            break;
        }
        i += 1;
    }
    let end = i.min(chars.len());
    out.tokens.push(chars[start..end].iter().collect());
    end
}

// ------------------------------------------------------ literal handling

/// Content of a quoted literal token, without prefix and quotes.
pub fn string_literal_content(token: &str) -> Option<&str> {
    let body_start = token.find(['"', '\''])?;
    if !is_string_prefix(&token[..body_start]) && body_start != 0 {
        return None;
    }
    let quote = token[body_start..].chars().next()?;
    let body = &token[body_start..];
    let q3: String = core::iter::repeat_n(quote, 3).collect();
    let inner = if body.len() >= 6 && body.starts_with(&q3) && body.ends_with(&q3) {
        &body[3..body.len() - 3]
    } else if body.len() >= 2 && body.ends_with(quote) {
        &body[1..body.len() - 1]
    } else {
        &body[1..]
    };
    Some(inner)
}

pub fn is_number_literal(token: &str) -> bool {
    let mut cs = token.chars();
    match cs.next() {
        Some(c) if c.is_ascii_digit() => true,
        Some('.') => cs.next().is_some_and(|c| c.is_ascii_digit()),
        _ => false,
    }
}

/// Most frequent string and numeric literals of the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteralTable {
    pub strings: Vec<String>,
    pub numbers: Vec<String>,
}

pub const TOP_STRINGS: usize = 200;
pub const TOP_NUMBERS: usize = 30;

fn top_k(counts: BTreeMap<String, usize>, k: usize) -> Vec<String> {
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(s, _)| s).collect()
}

impl LiteralTable {
    /// Ranks literals by frequency (ties lexicographic) over training streams.
    pub fn from_training<'a, I, S>(streams: I, top_strings: usize, top_numbers: usize) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut strings: BTreeMap<String, usize> = BTreeMap::new();
        let mut numbers: BTreeMap<String, usize> = BTreeMap::new();
        for stream in streams {
            for tok in stream {
                let tok = tok.as_ref();
                if let Some(content) = string_literal_content(tok) {
                    *strings.entry(content.to_string()).or_default() += 1;
                } else if is_number_literal(tok) {
                    *numbers.entry(tok.to_string()).or_default() += 1;
                }
            }
        }
        Self {
            strings: top_k(strings, top_strings),
            numbers: top_k(numbers, top_numbers),
        }
    }
}

/// Replaces literals by `<STR_LIT[:content]>` / `<NUM_LIT[:content]>`.
///
/// Frequent literals keep their content. Already-normalized tokens are left
/// alone, so the function is idempotent.
pub fn normalize_literals<S: AsRef<str>>(tokens: &[S], table: &LiteralTable) -> Vec<String> {
    let strings: BTreeSet<&str> = table.strings.iter().map(String::as_str).collect();
    let numbers: BTreeSet<&str> = table.numbers.iter().map(String::as_str).collect();
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if let Some(content) = string_literal_content(t) {
                if strings.contains(content) {
                    format!("<STR_LIT:{content}>")
                } else {
                    STR_LIT.to_string()
                }
            } else if is_number_literal(t) {
                if numbers.contains(t) {
                    format!("<NUM_LIT:{t}>")
                } else {
                    NUM_LIT.to_string()
                }
            } else {
                t.to_string()
            }
        })
        .collect()
}

// ------------------------------------------------------------ vocabulary

pub const RESERVED: [&str; 4] = [PAD, BOS, EOS, UNK];
pub const DEFAULT_VOCAB_CAP: usize = 8192;

/// Token/index bijection with reserved ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = crate::Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(contract!("vocabulary must start with {:?}", RESERVED));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(contract!("duplicate vocabulary entry {:?}", t));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

/// Builds a vocabulary from tokens seen at least `min_freq` times, most
/// frequent first (ties lexicographic), capped at `max_size` entries
/// including the reserved ones.
pub fn build_vocab<'a, I, S>(streams: I, min_freq: usize, max_size: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    if min_freq == 0 {
        return Err(contract!("min_freq must be at least 1"));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for stream in streams {
        for t in stream {
            let t = t.as_ref();
            if !RESERVED.contains(&t) {
                *counts.entry(t.to_string()).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(contract!("cannot build a vocabulary from an empty corpus"));
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let room = max_size.saturating_sub(tokens.len());
    let kept: Vec<String> = top_k(
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect(),
        room,
    );
    tokens.extend(kept);
    Vocab::from_tokens(tokens)
}

// -------------------------------------------------------------- splitting

/// Splits at `split`: `tokens[..split]` and the following ten tokens.
pub fn split_at<S: Clone + Into<String>>(
    id: &str,
    tokens: &[S],
    split: usize,
) -> Option<CompletionExample> {
    if split < MIN_PREFIX_LEN || split + REFERENCE_LEN > tokens.len() {
        return None;
    }
    let conv = |s: &[S]| s.iter().cloned().map(Into::into).collect::<Vec<String>>();
    Some(CompletionExample {
        id: id.to_string(),
        prefix: conv(&tokens[..split]),
        reference: conv(&tokens[split..split + REFERENCE_LEN]),
    })
}

/// Random split with the cut drawn uniformly from `[2, len - 10]`.
/// `None` signals a sample too short to split.
pub fn split_example<S: Clone + Into<String>, R: Rng + ?Sized>(
    id: &str,
    tokens: &[S],
    rng: &mut R,
) -> Option<CompletionExample> {
    if tokens.len() < MIN_SAMPLE_TOKENS {
        return None;
    }
    let split = rng.random_range(MIN_PREFIX_LEN..=tokens.len() - REFERENCE_LEN);
    split_at(id, tokens, split)
}

/// Breaks a source file into fragments of `lines` consecutive non-blank lines.
pub fn chunk_lines(source: &str, lines: usize) -> Vec<String> {
    let lines = lines.max(1);
    let mut chunks = Vec::new();
    let mut cur = String::new();
    let mut n = 0;
    for line in source.lines() {
        if line.trim().is_empty() {
            continue;
        }
        cur.push_str(line);
        cur.push('\n');
        n += 1;
        if n == lines {
            chunks.push(core::mem::take(&mut cur));
            n = 0;
        }
    }
    if !cur.trim().is_empty() {
        chunks.push(cur);
    }
    chunks
}

// ------------------------------------------------------------------ stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub examples: usize,
    pub mean_prefix_tokens: f64,
    pub mean_reference_tokens: f64,
    pub mean_lines: f64,
    pub skipped: usize,
}

pub fn corpus_stats(examples: &[CompletionExample], skipped: usize) -> Result<StatsReport> {
    if examples.is_empty() {
        return Err(contract!("statistics of an empty dataset"));
    }
    let n = examples.len() as f64;
    let mut prefix = 0usize;
    let mut reference = 0usize;
    let mut lines = 0usize;
    for ex in examples {
        prefix += ex.prefix.len();
        reference += ex.reference.len();
        lines += ex.prefix.iter().filter(|t| *t == EOL).count() + 1;
    }
    Ok(StatsReport {
        examples: examples.len(),
        mean_prefix_tokens: prefix as f64 / n,
        mean_reference_tokens: reference as f64 / n,
        mean_lines: lines as f64 / n,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s).tokens
    }

    #[test]
    fn lexer_examples() {
        assert_eq!(toks("x = 1\n"), ["x", "=", "1", EOL]);
        assert_eq!(toks("f(\"hi\")"), ["f", "(", "\"hi\"", ")"]);
        assert_eq!(toks("a>=b"), ["a", ">=", "b"]);
    }

    #[test]
    fn two_char_operators_are_single_tokens() {
        for op in OPERATORS_2 {
            let src = format!("a{op}b");
            assert_eq!(toks(&src), ["a", op, "b"], "{op}");
        }
        assert_eq!(toks("x **= 2"), ["x", "**=", "2"]);
        assert_eq!(toks("a<b"), ["a", "<", "b"]);
    }

    #[test]
    fn numbers_strings_and_prefixes() {
        assert_eq!(toks("1e-5+0x1F"), ["1e-5", "+", "0x1F"]);
        assert_eq!(toks("x=3.25"), ["x", "=", "3.25"]);
        assert_eq!(toks("b'ab' + r\"\\d\""), ["b'ab'", "+", "r\"\\d\""]);
        assert_eq!(toks("'it\\'s'"), ["'it\\'s'"]);
    }

    #[test]
    fn unterminated_string_stops_at_line_end() {
        let l = tokenize("s = \"abc\nx");
        assert_eq!(l.tokens, ["s", "=", "\"abc", EOL, "x"]);
        assert_eq!(l.unterminated_strings, 1);
    }

    #[test]
    fn python_comments_and_docstrings() {
        let l = tokenize_with(
            "def f():  # hi\n    \"\"\"doc\n    more\"\"\"\n\n    return 1\n",
            LexOptions::for_language("python"),
        );
        assert_eq!(
            l.tokens,
            ["def", "f", "(", ")", ":", EOL, "\"\"\"doc\n    more\"\"\"", EOL, "return", "1", EOL]
        );
    }

    #[test]
    fn block_comments_are_dropped() {
        let l = tokenize_with("a /* x\ny */ b // c\n", LexOptions::for_language("java"));
        assert_eq!(l.tokens, ["a", "b", EOL]);
    }

    #[test]
    fn literal_normalization() {
        let table = LiteralTable {
            strings: vec!["utf-8".into()],
            numbers: vec!["0".into()],
        };
        let out = normalize_literals(&["\"utf-8\"", "\"zq9x\"", "31337", "0", "x"], &table);
        assert_eq!(out, ["<STR_LIT:utf-8>", STR_LIT, NUM_LIT, "<NUM_LIT:0>", "x"]);
        assert_eq!(normalize_literals(&out, &table), out);
        assert_eq!(normalize_literals(&["'utf-8'"], &table), ["<STR_LIT:utf-8>"]);
    }

    #[test]
    fn literal_table_ranks_by_frequency() {
        let a = toks("'x' 'y' 'y' 1 2 2 2");
        let t = LiteralTable::from_training([a.as_slice()], 1, 1);
        assert_eq!(t.strings, ["y"]);
        assert_eq!(t.numbers, ["2"]);
    }

    #[test]
    fn vocab_ordering_and_threshold() {
        let s = ["a", "a", "b"];
        let v = build_vocab([&s[..]], 1, DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (4, 5));
        let v2 = build_vocab([&s[..]], 2, DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(v2.id("b"), UNK_ID);
        let tie = ["z", "m"];
        let v3 = build_vocab([&tie[..]], 1, DEFAULT_VOCAB_CAP).unwrap();
        assert_eq!((v3.id("m"), v3.id("z")), (4, 5));
        assert_eq!(v3.id(PAD), PAD_ID);
        assert_eq!(v3.id(EOS), EOS_ID);
    }

    #[test]
    fn vocab_cap_and_errors() {
        let s = ["a", "b", "c", "a"];
        let v = build_vocab([&s[..]], 1, 5).unwrap();
        assert_eq!(v.tokens(), [PAD, BOS, EOS, UNK, "a"]);
        let empty: [&str; 0] = [];
        assert!(build_vocab([&empty[..]], 1, 10).is_err());
        assert!(build_vocab([&s[..]], 0, 10).is_err());
    }

    #[test]
    fn split_cases() {
        let t: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        let ex = split_at("a", &t, 10).unwrap();
        assert_eq!(ex.prefix, t[..10]);
        assert_eq!(ex.reference, t[10..20]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let twelve: Vec<String> = t[..12].to_vec();
        let ex = split_example("b", &twelve, &mut rng).unwrap();
        assert_eq!((ex.prefix.len(), ex.reference.len()), (2, 10));
        assert!(split_example("c", &t[..11], &mut rng).is_none());
    }

    #[test]
    fn stats_examples() {
        let mk = |p: usize, eols: usize| CompletionExample {
            id: String::new(),
            prefix: (0..p)
                .map(|i| if i < eols { EOL.to_string() } else { "x".to_string() })
                .collect(),
            reference: vec!["y".to_string(); REFERENCE_LEN],
        };
        let s = corpus_stats(&[mk(8, 3), mk(12, 0)], 1).unwrap();
        assert_eq!(s.mean_prefix_tokens, 10.0);
        assert_eq!(s.mean_reference_tokens, 10.0);
        assert_eq!(s.mean_lines, 2.5);
        assert_eq!(s.skipped, 1);
        assert!(corpus_stats(&[], 0).is_err());
    }

    #[test]
    fn chunking_skips_blank_lines() {
        let c = chunk_lines("a\n\nb\nc\n  \nd\n", 2);
        assert_eq!(c, ["a\nb\n", "c\nd\n"]);
    }
}
