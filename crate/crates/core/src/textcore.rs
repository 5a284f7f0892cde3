//! Vocabulary, label sequences and string metrics.
//!
//! Strings are treated as sequences of Unicode scalar values; every metric here
//! works on symbols, never on bytes.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("vocabulary must contain at least one symbol")]
    EmptyVocabulary,
    #[error("duplicate symbol {0:?} in vocabulary")]
    DuplicateSymbol(char),
    #[error("vocabulary line {line} must hold exactly one symbol, got {content:?}")]
    BadVocabularyLine { line: usize, content: String },
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(char),
    #[error("label index {0} is out of range")]
    BadIndex(usize),
    #[error("reference transcript is empty; CER is undefined")]
    EmptyReference,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ordered symbol set. The CTC blank is implicit and always takes the last class
/// index, `symbols.len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<char>) -> Result<Self, TextError> {
        if symbols.is_empty() {
            return Err(TextError::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(TextError::DuplicateSymbol(c));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Collects every distinct symbol of `lines`, sorted by code point.
    pub fn from_corpus<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self, TextError> {
        let mut set: Vec<char> = lines.into_iter().flat_map(|l| l.chars()).collect();
        set.sort_unstable();
        set.dedup();
        Self::new(set)
    }

    /// Parses the on-disk format: UTF-8, one symbol per line, order defines the class
    /// index. A trailing newline is optional; a line holding a single space is the
    /// space symbol.
    pub fn parse(text: &str) -> Result<Self, TextError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut symbols = Vec::new();
        for (i, raw) in body.split('\n').enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let mut chars = line.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => symbols.push(c),
                _ => {
                    return Err(TextError::BadVocabularyLine {
                        line: i + 1,
                        content: line.to_string(),
                    })
                }
            }
        }
        Self::new(symbols)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::with_capacity(self.symbols.len() * 2);
        for c in &self.symbols {
            out.push(*c);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.symbols.len()
    }

    /// Number of output classes including the blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        self.symbols.get(index).copied()
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn encode(&self, text: &str) -> Result<LabelSeq, TextError> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(TextError::UnknownSymbol(c)))
            .collect::<Result<Vec<_>, _>>()
            .map(LabelSeq)
    }

    pub fn decode(&self, label: &LabelSeq) -> Result<String, TextError> {
        label
            .0
            .iter()
            .map(|&i| self.symbol(i).ok_or(TextError::BadIndex(i)))
            .collect()
    }

    /// SHA-256 over the serialized symbol list, truncated to 64 bits.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}

/// Character-index sequence over a [`Vocabulary`]; never contains the blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSeq(pub Vec<usize>);

impl LabelSeq {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Checks the label against a vocabulary of `num_symbols` (blank excluded).
    pub fn validate(&self, num_symbols: usize) -> Result<(), TextError> {
        match self.0.iter().find(|&&i| i >= num_symbols) {
            Some(&bad) => Err(TextError::BadIndex(bad)),
            None => Ok(()),
        }
    }
}

impl fmt::Display for LabelSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Levenshtein distance with unit costs over arbitrary symbol slices.
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
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

/// Edit distance normalised by the length of `pred`.
///
/// An empty `pred` yields 0 when `other` is empty too, 1 otherwise.
pub fn ned(pred: &str, other: &str) -> f64 {
    let p: Vec<char> = pred.chars().collect();
    let o: Vec<char> = other.chars().collect();
    if p.is_empty() {
        return if o.is_empty() { 0.0 } else { 1.0 };
    }
    levenshtein(&p, &o) as f64 / p.len() as f64
}

/// Character error rate of `hyp` against the reference transcript `reference`.
pub fn cer(hyp: &str, reference: &str) -> Result<f64, TextError> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(TextError::EmptyReference);
    }
    let h: Vec<char> = hyp.chars().collect();
    Ok(levenshtein(&h, &r) as f64 / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp<T> {
    Match(T),
    Substitute { reference: T, hypothesis: T },
    Insert(T),
    Delete(T),
}

/// One optimal alignment of `hyp` against `reference`, recovered by DP traceback.
///
/// Ties prefer match/substitution, then deletion, then insertion, so the result is
/// deterministic.
pub fn align<T: PartialEq + Copy>(reference: &[T], hyp: &[T]) -> Vec<EditOp<T>> {
    let n = reference.len();
    let m = hyp.len();
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                ops.push(if same {
                    EditOp::Match(reference[i - 1])
                } else {
                    EditOp::Substitute {
                        reference: reference[i - 1],
                        hypothesis: hyp[j - 1],
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Delete(reference[i - 1]));
            i -= 1;
        } else {
            ops.push(EditOp::Insert(hyp[j - 1]));
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Substitutions `(reference char, hypothesis char)` on the traceback alignment.
pub fn replacement_edits(reference: &str, hyp: &str) -> Vec<(char, char)> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hyp.chars().collect();
    align(&r, &h)
        .into_iter()
        .filter_map(|op| match op {
            EditOp::Substitute {
                reference,
                hypothesis,
            } => Some((reference, hypothesis)),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Recursive definition of the distance; exponential, used on tiny inputs only.
    fn naive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("abc", ""), 3);
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(naive(&k, &s), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
    }

    #[test]
    fn ned_examples() {
        assert_eq!(ned("abcd", "abed"), 0.25);
        assert_eq!(ned("abc", "abc"), 0.0);
        assert_eq!(ned("", "x"), 1.0);
        assert_eq!(ned("", ""), 0.0);
        // normalised by the prediction, so it can exceed one
        assert_eq!(ned("a", "bcd"), 3.0);
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("abc", "abcd").unwrap(), 0.25);
        assert_eq!(cer("abcd", "abcd").unwrap(), 0.0);
        assert_eq!(cer("", "ab").unwrap(), 1.0);
        assert!(matches!(cer("x", ""), Err(TextError::EmptyReference)));
    }

    #[test]
    fn symbols_not_bytes() {
        assert_eq!(edit_distance("naïve", "naive"), 1);
        assert_eq!(cer("é", "e").unwrap(), 1.0);
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::parse("a\nb\n \n.\n").unwrap();
        assert_eq!(v.symbols(), &['a', 'b', ' ', '.']);
        assert_eq!(v.blank_index(), 4);
        assert_eq!(v.num_classes(), 5);
        assert_eq!(Vocabulary::parse(&v.to_file_string()).unwrap(), v);
        assert!(matches!(
            Vocabulary::parse("a\na\n"),
            Err(TextError::DuplicateSymbol('a'))
        ));
        assert!(matches!(
            Vocabulary::parse("ab\n"),
            Err(TextError::BadVocabularyLine { line: 1, .. })
        ));
        assert!(matches!(Vocabulary::parse(""), Err(TextError::BadVocabularyLine { .. })));
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::new(vec!['h', 'i', ' ']).unwrap();
        let l = v.encode("hi hi").unwrap();
        assert_eq!(l.as_slice(), &[0, 1, 2, 0, 1]);
        assert_eq!(v.decode(&l).unwrap(), "hi hi");
        assert!(matches!(v.encode("x"), Err(TextError::UnknownSymbol('x'))));
        assert!(l.validate(3).is_ok());
        assert!(LabelSeq(vec![3]).validate(3).is_err());
    }

    #[test]
    fn hash_depends_on_order() {
        let a = Vocabulary::new(vec!['a', 'b']).unwrap();
        let b = Vocabulary::new(vec!['b', 'a']).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn alignment_substitutions() {
        assert_eq!(replacement_edits("hello", "hallo"), vec![('e', 'a')]);
        assert_eq!(replacement_edits("abc", "abc"), vec![]);
        let ops = align(&['a', 'b'], &['b']);
        assert_eq!(ops, vec![EditOp::Delete('a'), EditOp::Match('b')]);
    }

    fn short() -> impl Strategy<Value = String> {
        "[abc]{0,7}"
    }

    proptest! {
        #[test]
        fn distance_is_a_metric(a in short(), b in short(), c in short()) {
            let ab = edit_distance(&a, &b);
            prop_assert_eq!(ab, edit_distance(&b, &a));
            prop_assert_eq!(edit_distance(&a, &a), 0);
            prop_assert!(edit_distance(&a, &c) <= ab + edit_distance(&b, &c));
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            prop_assert_eq!(ab, naive(&ac, &bc));
        }

        #[test]
        fn alignment_cost_equals_distance(a in short(), b in short()) {
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            let cost = align(&ac, &bc).iter().filter(|op| !matches!(op, EditOp::Match(_))).count();
            prop_assert_eq!(cost, levenshtein(&ac, &bc));
        }

        #[test]
        fn cer_invariant_under_relabeling(h in short(), r in "[abc]{1,7}") {
            let swap = |s: &str| -> String {
                s.chars().map(|c| match c { 'a' => 'x', 'b' => 'a', 'c' => 'b', o => o }).collect()
            };
            prop_assert_eq!(cer(&h, &r).unwrap(), cer(&swap(&h), &swap(&r)).unwrap());
        }
    }
}
