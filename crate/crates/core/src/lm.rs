//! Count-based n-gram language models scored with stupid backoff.
//!
//! [`CharNGramModel`] is fused into the CTC beam search one character at a time;
//! [`WordNGramModel`] scores whole lines for n-best re-ranking. Both share the same
//! count table and the same binary container (see `docs/FORMATS.md`).
//!
//! Scores are log-domain and not normalised probabilities. At the empty context the
//! unigram estimate uses add-one smoothing over the model vocabulary, so every token
//! gets a finite score.

use std::hash::Hash;
use std::io::Write;
use std::path::Path;

use rustc_hash::FxHashMap;

pub const DEFAULT_CHAR_ORDER: usize = 9;
pub const DEFAULT_WORD_ORDER: usize = 3;
pub const DEFAULT_BACKOFF: f64 = 0.4;

/// Begin-of-line padding for the character model. Never part of a vocabulary.
pub const CHAR_BOS: char = '\u{2}';
pub const WORD_BOS: &str = "<s>";
pub const WORD_EOS: &str = "</s>";

const MAGIC: &[u8; 4] = b"TTLM";
pub const FORMAT_VERSION: u16 = 1;
const KIND_CHAR: u8 = 0;
const KIND_WORD: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error("backoff factor must lie in (0, 1], got {0}")]
    BadBackoff(f64),
    #[error("malformed model file at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("model file holds a {found} model, expected a {expected} model")]
    Kind {
        found: &'static str,
        expected: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct ContextCounts<T: Eq + Hash> {
    total: u64,
    next: FxHashMap<T, u64>,
}

impl<T: Eq + Hash> Default for ContextCounts<T> {
    fn default() -> Self {
        Self {
            total: 0,
            next: FxHashMap::default(),
        }
    }
}

/// Counts of `(context, next)` pairs for every context shorter than the order.
#[derive(Debug, Clone, PartialEq)]
struct NGramTable<T: Eq + Hash> {
    order: usize,
    backoff_log: f64,
    backoff: f64,
    vocab_size: u64,
    contexts: FxHashMap<Vec<T>, ContextCounts<T>>,
}

impl<T: Eq + Hash + Clone + Ord> NGramTable<T> {
    fn new(order: usize, backoff: f64) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::BadOrder);
        }
        if !(backoff > 0.0 && backoff <= 1.0) {
            return Err(LmError::BadBackoff(backoff));
        }
        Ok(Self {
            order,
            backoff_log: backoff.ln(),
            backoff,
            vocab_size: 0,
            contexts: FxHashMap::default(),
        })
    }

    fn add(&mut self, context: &[T], next: &T, count: u64) {
        let e = self.contexts.entry(context.to_vec()).or_default();
        e.total += count;
        *e.next.entry(next.clone()).or_insert(0) += count;
    }

    /// Counts every k-gram, k <= order, ending at each position of `padded` past the
    /// first `order - 1` (padding) tokens.
    fn add_sequence(&mut self, padded: &[T]) {
        let pad = self.order - 1;
        for i in pad..padded.len() {
            for k in 0..self.order {
                self.add(&padded[i - k..i], &padded[i], 1);
            }
        }
    }

    fn count(&self, context: &[T], next: &T) -> u64 {
        self.contexts
            .get(context)
            .and_then(|c| c.next.get(next))
            .copied()
            .unwrap_or(0)
    }

    fn score(&self, next: &T, context: &[T]) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        let mut penalty = 0.0;
        while !ctx.is_empty() {
            if let Some(c) = self.contexts.get(ctx) {
                if let Some(&n) = c.next.get(next) {
                    return penalty + (n as f64 / c.total as f64).ln();
                }
            }
            penalty += self.backoff_log;
            ctx = &ctx[1..];
        }
        let (n, total) = self
            .contexts
            .get(&[][..])
            .map(|c| (c.next.get(next).copied().unwrap_or(0), c.total))
            .unwrap_or((0, 0));
        penalty + ((n + 1) as f64 / (total + self.vocab_size) as f64).ln()
    }

    fn sorted_entries(&self) -> Vec<(&Vec<T>, &T, u64)> {
        let mut out: Vec<_> = self
            .contexts
            .iter()
            .flat_map(|(ctx, c)| c.next.iter().map(move |(t, &n)| (ctx, t, n)))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.1.cmp(b.1)));
        out
    }
}

trait TokenCodec: Sized {
    fn write(&self, out: &mut Vec<u8>);
    fn read(r: &mut Reader<'_>) -> Result<Self, LmError>;
}

impl TokenCodec for char {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(*self as u32).to_le_bytes());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, LmError> {
        let at = r.pos;
        let v = r.u32()?;
        char::from_u32(v).ok_or_else(|| r.error_at(at, format!("invalid code point {v:#x}")))
    }
}

impl TokenCodec for String {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(self.as_bytes());
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, LmError> {
        let len = r.u32()? as usize;
        let at = r.pos;
        let bytes = r.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| r.error_at(at, "token is not UTF-8".into()))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, reason: String) -> LmError {
        LmError::Parse { offset, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LmError> {
        if self.buf.len() - self.pos < n {
            return Err(self.error_at(
                self.pos,
                format!("unexpected end of file, wanted {n} more bytes"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, LmError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, LmError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, LmError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn kind_name(kind: u8) -> &'static str {
    match kind {
        KIND_CHAR => "character",
        KIND_WORD => "word",
        _ => "unknown",
    }
}

fn encode_table<T: Eq + Hash + Clone + Ord + TokenCodec>(table: &NGramTable<T>, kind: u8) -> Vec<u8> {
    let entries = table.sorted_entries();
    let mut out = Vec::with_capacity(32 + entries.len() * 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(table.order as u32).to_le_bytes());
    out.extend_from_slice(&table.backoff.to_le_bytes());
    out.extend_from_slice(&table.vocab_size.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (ctx, next, count) in entries {
        out.extend_from_slice(&(ctx.len() as u32).to_le_bytes());
        for t in ctx {
            t.write(&mut out);
        }
        next.write(&mut out);
        out.extend_from_slice(&count.to_le_bytes());
    }
    out
}

fn decode_table<T: Eq + Hash + Clone + Ord + TokenCodec>(
    bytes: &[u8],
    kind: u8,
) -> Result<NGramTable<T>, LmError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(r.error_at(0, "bad magic".into()));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(LmError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let found = r.u8()?;
    if found != kind {
        return Err(LmError::Kind {
            found: kind_name(found),
            expected: kind_name(kind),
        });
    }
    let order_at = r.pos;
    let order = r.u32()? as usize;
    let backoff_at = r.pos;
    let backoff = r.f64()?;
    let mut table = NGramTable::new(order, backoff).map_err(|e| {
        let at = if order == 0 { order_at } else { backoff_at };
        r.error_at(at, e.to_string())
    })?;
    table.vocab_size = r.u64()?;
    let n = r.u64()?;
    for _ in 0..n {
        let at = r.pos;
        let ctx_len = r.u32()? as usize;
        if ctx_len >= order {
            return Err(r.error_at(at, format!("context length {ctx_len} >= order {order}")));
        }
        let ctx = (0..ctx_len)
            .map(|_| T::read(&mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let next = T::read(&mut r)?;
        let count_at = r.pos;
        let count = r.u64()?;
        if count == 0 {
            return Err(r.error_at(count_at, "zero count".into()));
        }
        table.add(&ctx, &next, count);
    }
    if r.pos != bytes.len() {
        return Err(r.error_at(r.pos, "trailing bytes".into()));
    }
    Ok(table)
}

/// Character n-gram model (default order 9).
#[derive(Debug, Clone, PartialEq)]
pub struct CharNGramModel {
    table: NGramTable<char>,
}

impl CharNGramModel {
    /// Counts all k-grams (k <= `order`) of every line, padding each line start with
    /// `order - 1` [`CHAR_BOS`] symbols. The smoothing vocabulary is the set of
    /// distinct characters in the corpus.
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize) -> Result<Self, LmError> {
        Self::train_with(corpus, order, DEFAULT_BACKOFF, None)
    }

    /// Like [`train`](Self::train) but with an explicit backoff factor and an optional
    /// smoothing vocabulary size (at least the number of distinct corpus symbols).
    pub fn train_with<S: AsRef<str>>(
        corpus: &[S],
        order: usize,
        backoff: f64,
        vocab_size: Option<usize>,
    ) -> Result<Self, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut table = NGramTable::new(order, backoff)?;
        let mut seen: Vec<char> = Vec::new();
        let mut padded = Vec::new();
        for line in corpus {
            padded.clear();
            padded.extend(std::iter::repeat_n(CHAR_BOS, order - 1));
            padded.extend(line.as_ref().chars());
            seen.extend(line.as_ref().chars());
            table.add_sequence(&padded);
        }
        seen.sort_unstable();
        seen.dedup();
        table.vocab_size = vocab_size.unwrap_or(0).max(seen.len()) as u64;
        Ok(Self { table })
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn backoff_factor(&self) -> f64 {
        self.table.backoff
    }

    pub fn vocab_size(&self) -> u64 {
        self.table.vocab_size
    }

    pub fn count(&self, context: &str, next: char) -> u64 {
        let ctx: Vec<char> = context.chars().collect();
        self.table.count(&ctx, &next)
    }

    /// Stupid-backoff log score of `next` after the raw symbol context `context`.
    /// Only the last `order - 1` symbols of the context matter. Callers that score
    /// from the start of a line pass [`line_context`](Self::line_context).
    pub fn score(&self, next: char, context: &[char]) -> f64 {
        self.table.score(&next, context)
    }

    pub fn score_str(&self, next: char, context: &str) -> f64 {
        let ctx: Vec<char> = context.chars().collect();
        self.score(next, &ctx)
    }

    /// Context for scoring right after `prefix` within a line: the last
    /// `order - 1` symbols, left-padded with [`CHAR_BOS`].
    pub fn line_context(&self, prefix: &[char]) -> Vec<char> {
        let n = self.table.order - 1;
        let mut ctx = Vec::with_capacity(n);
        if prefix.len() < n {
            ctx.extend(std::iter::repeat_n(CHAR_BOS, n - prefix.len()));
            ctx.extend_from_slice(prefix);
        } else {
            ctx.extend_from_slice(&prefix[prefix.len() - n..]);
        }
        ctx
    }

    /// Sum of per-character scores of a whole line (no end-of-line term).
    pub fn line_score(&self, line: &str) -> f64 {
        let chars: Vec<char> = line.chars().collect();
        (0..chars.len())
            .map(|i| self.score(chars[i], &self.line_context(&chars[..i])))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_table(&self.table, KIND_CHAR)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        Ok(Self {
            table: decode_table(bytes, KIND_CHAR)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    #[cfg(test)]
    fn bump(&mut self, context: &str, next: char) {
        let ctx: Vec<char> = context.chars().collect();
        self.table.add(&ctx, &next, 1);
    }
}

/// Word n-gram model over whitespace tokens, with begin/end-of-line tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct WordNGramModel {
    table: NGramTable<String>,
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

impl WordNGramModel {
    pub fn train<S: AsRef<str>>(corpus: &[S], order: usize) -> Result<Self, LmError> {
        Self::train_with(corpus, order, DEFAULT_BACKOFF)
    }

    pub fn train_with<S: AsRef<str>>(
        corpus: &[S],
        order: usize,
        backoff: f64,
    ) -> Result<Self, LmError> {
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut table = NGramTable::new(order, backoff)?;
        for line in corpus {
            table.add_sequence(&Self::padded(order, line.as_ref()));
        }
        // every distinct target token, end-of-line included
        table.vocab_size = table
            .contexts
            .get(&[][..])
            .map_or(0, |c| c.next.len() as u64);
        Ok(Self { table })
    }

    fn padded(order: usize, line: &str) -> Vec<String> {
        let mut toks: Vec<String> = std::iter::repeat_n(WORD_BOS.to_string(), order - 1).collect();
        toks.extend(tokenize(line));
        toks.push(WORD_EOS.to_string());
        toks
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn backoff_factor(&self) -> f64 {
        self.table.backoff
    }

    pub fn vocab_size(&self) -> u64 {
        self.table.vocab_size
    }

    pub fn score(&self, next: &str, context: &[String]) -> f64 {
        self.table.score(&next.to_string(), context)
    }

    /// Sum of token scores over the line, closing with the end-of-line token.
    pub fn logprob(&self, line: &str) -> f64 {
        let toks = Self::padded(self.table.order, line);
        let pad = self.table.order - 1;
        (pad..toks.len())
            .map(|i| self.table.score(&toks[i], &toks[i - pad..i]))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_table(&self.table, KIND_WORD)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        Ok(Self {
            table: decode_table(bytes, KIND_WORD)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bigram_counts_and_score() {
        let m = CharNGramModel::train(&["abab"], 2).unwrap();
        // hand count: <s>a, ab, ba, ab
        assert_eq!(m.count("a", 'b'), 2);
        assert_eq!(m.count("b", 'a'), 1);
        assert_eq!(m.count("", 'a'), 2);
        assert_eq!(m.score_str('b', "a"), 0.0);
    }

    #[test]
    fn unigram_only_model() {
        let m = CharNGramModel::train(&["a"], 1).unwrap();
        assert_eq!(m.order(), 1);
        assert!((m.score_str('a', "") - (2.0f64 / 2.0).ln()).abs() < 1e-15);
        // context is ignored entirely
        assert_eq!(m.score_str('a', "aaaa"), m.score_str('a', ""));
    }

    #[test]
    fn unseen_symbol_floor() {
        let m = CharNGramModel::train_with(&["abab"], 3, DEFAULT_BACKOFF, Some(5)).unwrap();
        // N = 4 unigrams, vocabulary of 5
        assert!((m.score_str('z', "") - (1.0f64 / 9.0).ln()).abs() < 1e-15);
        assert!((m.score_str('a', "") - (3.0f64 / 9.0).ln()).abs() < 1e-15);
        // unseen after "b": one backoff then the unigram floor
        let expect = 0.4f64.ln() + (3.0f64 / 9.0).ln();
        assert!((m.score_str('b', "b") - expect).abs() < 1e-15);
    }

    #[test]
    fn markov_truncation() {
        let m = CharNGramModel::train(&["the cat sat on the mat"], 4).unwrap();
        assert_eq!(m.score_str('t', "xyz the ma"), m.score_str('t', " ma"));
        let ctx = m.line_context(&['a']);
        assert_eq!(ctx, vec![CHAR_BOS, CHAR_BOS, 'a']);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["hello world", "another line", "hello again"];
        let a = CharNGramModel::train(&corpus, 5).unwrap().to_bytes();
        let b = CharNGramModel::train(&corpus, 5).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_training_input() {
        let empty: [&str; 0] = [];
        assert!(matches!(CharNGramModel::train(&empty, 3), Err(LmError::EmptyCorpus)));
        assert!(matches!(CharNGramModel::train(&["a"], 0), Err(LmError::BadOrder)));
        assert!(matches!(WordNGramModel::train(&empty, 3), Err(LmError::EmptyCorpus)));
    }

    #[test]
    fn word_chain_rule() {
        let m = WordNGramModel::train(&["the cat sat", "the dog sat"], 3).unwrap();
        let bos = WORD_BOS.to_string();
        let s = |w: &str| w.to_string();
        let expect = m.score("the", &[bos.clone(), bos.clone()])
            + m.score("cat", &[bos.clone(), s("the")])
            + m.score(WORD_EOS, &[s("the"), s("cat")]);
        assert!((m.logprob("the cat") - expect).abs() < 1e-12);
        assert_eq!(m.logprob(""), m.score(WORD_EOS, &[bos.clone(), bos]));
    }

    #[test]
    fn word_order_preference() {
        let m = WordNGramModel::train(&["a b", "a b"], 3).unwrap();
        assert!(m.logprob("a b") > m.logprob("b a"));
    }

    #[test]
    fn whitespace_normalisation() {
        let m = WordNGramModel::train(&["one two three"], 3).unwrap();
        assert_eq!(m.logprob("  one   two\tthree "), m.logprob("one two three"));
    }

    fn sample_model() -> CharNGramModel {
        CharNGramModel::train(&["the quick brown fox", "jumps over the lazy dog", "zebra"], 4)
            .unwrap()
    }

    #[test]
    fn save_load_preserves_scores() {
        let m = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("char.lm");
        m.save(&path).unwrap();
        let back = CharNGramModel::load(&path).unwrap();
        assert_eq!(back, m);
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz ".chars().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let len = rng.random_range(0..6);
            let ctx: Vec<char> = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
            let next = alphabet[rng.random_range(0..alphabet.len())];
            assert_eq!(m.score(next, &ctx).to_bits(), back.score(next, &ctx).to_bits());
        }

        let w = WordNGramModel::train(&["a b c", "b c d"], 3).unwrap();
        let back = WordNGramModel::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back.logprob("a b c d e").to_bits(), w.logprob("a b c d e").to_bits());
    }

    #[test]
    fn malformed_files() {
        let bytes = sample_model().to_bytes();
        let truncated = &bytes[..bytes.len() - 3];
        match CharNGramModel::from_bytes(truncated) {
            Err(LmError::Parse { offset, .. }) => assert!(offset < bytes.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            CharNGramModel::from_bytes(&wrong_version),
            Err(LmError::Version { found: 9, .. })
        ));
        assert!(matches!(
            WordNGramModel::from_bytes(&bytes),
            Err(LmError::Kind { .. })
        ));
        assert!(matches!(
            CharNGramModel::from_bytes(b"NOPE"),
            Err(LmError::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn count_monotonicity_for_seen_pairs() {
        let mut m = sample_model();
        let before = m.score_str('h', "t");
        m.bump("t", 'h');
        assert!(m.score_str('h', "t") >= before);
    }

    proptest! {
        #[test]
        fn markov_property(prefix in "[a-e ]{0,12}", next in "[a-e]") {
            let corpus = ["abc abd ace", "bad cab dab", "eee aaa"];
            let m = CharNGramModel::train(&corpus, 4).unwrap();
            let ctx: Vec<char> = prefix.chars().collect();
            let keep = ctx.len().min(3);
            let c = next.chars().next().unwrap();
            prop_assert_eq!(m.score(c, &ctx), m.score(c, &ctx[ctx.len() - keep..]));
        }

        #[test]
        fn seen_count_increase_never_lowers_score(ctx in "[a-c]{1,2}", next in "[a-c]") {
            let mut m = CharNGramModel::train(&["abcabcaab", "cabbac"], 3).unwrap();
            let c = next.chars().next().unwrap();
            prop_assume!(m.count(&ctx, c) > 0);
            let before = m.score_str(c, &ctx);
            m.bump(&ctx, c);
            prop_assert!(m.score_str(c, &ctx) >= before);
        }
    }
}
