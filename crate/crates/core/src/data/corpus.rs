//! Small English-like text generator for building a self-contained corpus.
//!
//! Lines are lowercase words joined by single spaces, drawn from a fixed template
//! grammar so that both the character and the word n-gram models have real
//! structure to learn.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DETERMINERS: &[&str] = &["the", "a", "my", "his", "her", "our", "this", "that", "every", "one"];

const ADJECTIVES: &[&str] = &[
    "old", "new", "small", "large", "quiet", "bright", "dark", "warm", "cold", "green", "blue",
    "red", "long", "short", "heavy", "light", "simple", "clever", "gentle", "loud", "rich",
    "poor", "empty", "full", "early", "late", "careful", "curious", "honest", "silent", "broken",
    "golden", "narrow", "wide", "modern", "ancient", "lonely", "famous", "young", "tired",
];

const NOUNS: &[&str] = &[
    "house", "river", "garden", "letter", "window", "teacher", "doctor", "farmer", "market",
    "village", "mountain", "forest", "station", "kitchen", "school", "church", "bridge", "road",
    "table", "chair", "book", "paper", "story", "song", "horse", "dog", "cat", "bird", "child",
    "woman", "man", "friend", "brother", "sister", "mother", "father", "neighbor", "soldier",
    "captain", "sailor", "island", "ocean", "valley", "city", "office", "morning", "evening",
    "winter", "summer", "journey", "lesson", "question", "answer", "picture", "music", "lamp",
    "door", "floor", "wall", "boat", "train", "car", "street", "corner", "field", "meadow",
    "orchard", "apple", "bread", "coffee", "water", "stone", "candle", "clock", "basket",
    "ribbon", "pencil", "notebook", "harbor", "lantern",
];

const VERBS: &[&str] = &[
    "found", "opened", "carried", "visited", "painted", "watched", "followed", "remembered",
    "noticed", "cleaned", "built", "bought", "sold", "wrote", "read", "heard", "saw", "loved",
    "left", "crossed", "reached", "closed", "moved", "lifted", "showed", "described", "covered",
    "passed", "counted", "answered", "called", "kept", "held", "brought", "met", "took", "gave",
    "made", "lost", "won",
];

const ADVERBS: &[&str] = &[
    "slowly", "quickly", "quietly", "again", "today", "often", "never", "always", "soon",
    "there", "here", "once", "later", "early", "together", "alone",
];

const PREPOSITIONS: &[&str] = &[
    "in", "on", "near", "under", "over", "across", "with", "from", "into", "behind", "beside",
    "after", "before", "around", "along", "through",
];

const CONNECTORS: &[&str] = &["and", "but", "so", "then", "while", "because", "when"];

const SUBJECTS: &[&str] = &["i", "we", "you", "they", "he", "she"];

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
    out.push(*DETERMINERS.choose(rng).unwrap());
    if rng.random_bool(0.5) {
        out.push(*ADJECTIVES.choose(rng).unwrap());
    }
    out.push(*NOUNS.choose(rng).unwrap());
}

fn clause(rng: &mut ChaCha8Rng, out: &mut Vec<&'static str>) {
    if rng.random_bool(0.3) {
        out.push(*SUBJECTS.choose(rng).unwrap());
    } else {
        noun_phrase(rng, out);
    }
    out.push(*VERBS.choose(rng).unwrap());
    noun_phrase(rng, out);
    if rng.random_bool(0.5) {
        out.push(*PREPOSITIONS.choose(rng).unwrap());
        noun_phrase(rng, out);
    }
    if rng.random_bool(0.25) {
        out.push(*ADVERBS.choose(rng).unwrap());
    }
}

/// Word stream of clauses joined by connectors.
fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<&'static str> {
    let mut out = Vec::with_capacity(n + 16);
    while out.len() < n {
        if !out.is_empty() {
            out.push(*CONNECTORS.choose(rng).unwrap());
        }
        clause(rng, &mut out);
    }
    out
}

/// Generates `n_lines` lines whose lengths fall within `[min_chars, max_chars]`.
/// Requires `max_chars` to exceed the longest word in the grammar.
pub fn synth_corpus(n_lines: usize, min_chars: usize, max_chars: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(n_lines);
    let mut stream = Vec::new();
    let mut pos = 0;
    while lines.len() < n_lines {
        let target = rng.random_range(min_chars..=max_chars);
        let mut line = String::new();
        loop {
            if pos >= stream.len() {
                stream = words(&mut rng, 64);
                pos = 0;
            }
            let w = stream[pos];
            let extra = if line.is_empty() { w.len() } else { w.len() + 1 };
            if !line.is_empty() && line.len() + extra > target {
                break;
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(w);
            pos += 1;
        }
        if line.len() >= min_chars {
            lines.push(line);
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_and_determinism() {
        let a = synth_corpus(200, 18, 30, 4);
        assert_eq!(a, synth_corpus(200, 18, 30, 4));
        assert_ne!(a, synth_corpus(200, 18, 30, 5));
        for l in &a {
            assert!((18..=30).contains(&l.len()), "{l:?}");
            assert!(l.chars().all(|c| c.is_ascii_lowercase() || c == ' '));
            assert!(!l.starts_with(' ') && !l.ends_with(' '));
        }
    }
}
