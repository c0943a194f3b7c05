//! Word-level vocabulary and tokenizer.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{CoreError, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const SEP: u32 = 3;
pub const NUM_SPECIALS: usize = 4;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["[PAD]", "[UNK]", "[MASK]", "[SEP]"];

/// Bijective word/id map with the four special tokens at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, freqs: Vec<u64>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Self { words, freqs, index }
    }

    /// Total size including the special tokens.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Number of corpus words, excluding the special tokens.
    pub fn word_count(&self) -> usize {
        self.words.len() - NUM_SPECIALS
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn freq(&self, id: u32) -> Option<u64> {
        self.freqs.get(id as usize).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Maps whitespace-separated words to ids; unknown words become UNK.
    pub fn encode(&self, doc: &str) -> Vec<u32> {
        doc.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// TSV rendering: `word<TAB>id<TAB>freq`, one line per id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (w, f)) in self.words.iter().zip(&self.freqs).enumerate() {
            writeln!(out, "{w}\t{i}\t{f}").unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut freqs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = |reason: &str| CoreError::VocabFormat {
                line: n + 1,
                reason: reason.to_string(),
            };
            let mut cols = line.split('\t');
            let (Some(w), Some(id), Some(f), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected three tab-separated columns"));
            };
            let id: usize = id.parse().map_err(|_| bad("invalid id"))?;
            if id != n {
                return Err(bad("ids must be dense and sorted"));
            }
            if n < NUM_SPECIALS && w != SPECIAL_TOKENS[n] {
                return Err(bad("special tokens must come first"));
            }
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(bad("word contains whitespace"));
            }
            words.push(w.to_string());
            freqs.push(f.parse().map_err(|_| bad("invalid frequency"))?);
        }
        if words.len() < NUM_SPECIALS {
            return Err(CoreError::VocabFormat {
                line: words.len() + 1,
                reason: "missing special tokens".into(),
            });
        }
        let vocab = Self::from_parts(words, freqs);
        if vocab.index.len() != vocab.words.len() {
            return Err(CoreError::VocabFormat {
                line: 0,
                reason: "duplicate words".into(),
            });
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from document texts. Words are ordered by
/// descending frequency with lexicographic tie-breaks; words rarer than
/// `min_freq` are left out.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for w in doc.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut special_freqs = [0u64; NUM_SPECIALS];
    for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
        special_freqs[i] = counts.remove(s).unwrap_or(0);
    }
    let mut entries: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_freq.max(1))
        .collect();
    entries.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut words: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut freqs = special_freqs.to_vec();
    for (w, c) in entries {
        words.push(w.to_string());
        freqs.push(c);
    }
    Ok(Vocabulary::from_parts(words, freqs))
}

/// Integer-id form of one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub player_id: String,
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(player_id: impl Into<String>, ids: Vec<u32>) -> Self {
        Self {
            player_id: player_id.into(),
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn tokenize(doc: &str, vocab: &Vocabulary) -> TokenSequence {
    TokenSequence::new(String::new(), vocab.encode(doc))
}

/// Joins words with single spaces; special ids render as their bracketed
/// names.
pub fn detokenize(t: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (i, &id) in t.ids.iter().enumerate() {
        let w = vocab.word(id).ok_or(CoreError::TokenOutOfRange {
            id,
            size: vocab.len(),
        })?;
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    Ok(out)
}

/// Token file rendering: `player_id<TAB>id id ...` per line.
pub fn write_token_file(seqs: &[TokenSequence]) -> String {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&s.player_id);
        out.push('\t');
        for (i, id) in s.ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{id}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_token_file(text: &str) -> Result<Vec<TokenSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (player, ids) = line.split_once('\t').ok_or(CoreError::Malformed {
                line: n + 1,
                reason: "expected `player_id<TAB>ids`".into(),
            })?;
            let ids = ids
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CoreError::Malformed {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            Ok(TokenSequence::new(player, ids))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = build_vocab(&["a b a"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.word_count(), 2);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        assert_eq!(v.id("a"), Some(4));
    }

    #[test]
    fn min_freq_cutoff() {
        let v = build_vocab(&["a b a"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert!(v.id("a").is_some() && v.id("b").is_none());
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = build_vocab(&["zeta alpha mid", "mid"], 1).unwrap();
        let order: Vec<&str> = (4..7).map(|i| v.word(i).unwrap()).collect();
        assert_eq!(order, ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(build_vocab(&empty, 1), Err(CoreError::EmptyCorpus)));
    }

    #[test]
    fn specials_are_reserved() {
        let v = build_vocab(&["x [SEP] y [SEP] x"], 1).unwrap();
        assert_eq!(v.id("[SEP]"), Some(SEP));
        assert_eq!(v.freq(SEP), Some(2));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn tokenize_and_back() {
        let v = build_vocab(&["game_end result=win"], 1).unwrap();
        let t = tokenize("game_end result=win", &v);
        assert_eq!(t.ids, [v.id("game_end").unwrap(), v.id("result=win").unwrap()]);
        assert!(tokenize("", &v).is_empty());
        assert_eq!(tokenize("nope", &v).ids, [UNK]);
        assert_eq!(detokenize(&TokenSequence::new("", vec![MASK]), &v).unwrap(), "[MASK]");
        assert_eq!(detokenize(&TokenSequence::default(), &v).unwrap(), "");
        assert!(matches!(
            detokenize(&TokenSequence::new("", vec![99]), &v),
            Err(CoreError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn tsv_is_a_fixed_point() {
        let v = build_vocab(&["b a c a [SEP] c c"], 1).unwrap();
        let text = v.to_tsv();
        assert!(text.starts_with("[PAD]\t0\t0\n[UNK]\t1\t0\n[MASK]\t2\t0\n[SEP]\t3\t1\n"));
        let back = Vocabulary::from_tsv(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_tsv(), text);
    }

    #[test]
    fn tsv_rejects_gaps() {
        assert!(Vocabulary::from_tsv("[PAD]\t0\t0\n[UNK]\t2\t0\n").is_err());
        assert!(Vocabulary::from_tsv("a\t0\t0\n").is_err());
    }

    #[test]
    fn token_file_roundtrip() {
        let seqs = vec![TokenSequence::new("p1", vec![4, 5, 3, 6]), TokenSequence::new("p2", vec![])];
        let text = write_token_file(&seqs);
        assert_eq!(read_token_file(&text).unwrap(), seqs);
    }
}
