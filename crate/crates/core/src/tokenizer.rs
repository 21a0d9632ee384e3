//! Character and subword tokenizers for CTC targets.
//!
//! Subword units are learned with greedy frequency merges over word-internal
//! symbol pairs (ties broken lexicographically), with a `</w>` marker on
//! word-final symbols so decoding restores spaces. The character tokenizer is
//! the zero-merge special case. Token id 0 is reserved for the CTC blank and
//! is never produced by `encode`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK_ID: u32 = 0;
const END_OF_WORD: &str = "</w>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizerKind {
    Char,
    Subword,
}

impl TokenizerKind {
    pub fn name(self) -> &'static str {
        match self {
            TokenizerKind::Char => "char",
            TokenizerKind::Subword => "subword",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub kind: TokenizerKind,
    /// Tokens in id order; ids start at 1 (0 is the blank).
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn corpus_words(corpus: &[String]) -> BTreeMap<String, usize> {
    let mut words = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *words.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    words
}

impl Tokenizer {
    fn from_parts(kind: TokenizerKind, tokens: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Tokenizer {
            kind,
            tokens,
            token_to_id,
            merges,
        }
    }

    /// Character tokenizer: the corpus alphabet with no merges.
    pub fn train_char(corpus: &[String]) -> Result<Self> {
        let words = corpus_words(corpus);
        if words.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut alphabet: Vec<String> = Vec::new();
        for word in words.keys() {
            for sym in word_symbols(word) {
                if !alphabet.contains(&sym) {
                    alphabet.push(sym);
                }
            }
        }
        alphabet.sort();
        Ok(Self::from_parts(TokenizerKind::Char, alphabet, Vec::new()))
    }

    /// Subword tokenizer: greedy frequency merges until the vocabulary
    /// reaches `vocab_size` tokens (blank excluded) or no pair repeats.
    pub fn train_subword(corpus: &[String], vocab_size: usize) -> Result<Self> {
        let word_counts = corpus_words(corpus);
        if word_counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words: Vec<(Vec<String>, usize)> = word_counts
            .iter()
            .map(|(w, &n)| (word_symbols(w), n))
            .collect();
        let mut vocab: Vec<String> = Vec::new();
        for (syms, _) in &words {
            for s in syms {
                if !vocab.contains(s) {
                    vocab.push(s.clone());
                }
            }
        }
        vocab.sort();
        if vocab_size < vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {vocab_size} is below the corpus alphabet size {}",
                vocab.len()
            )));
        }
        let mut merges = Vec::new();
        while vocab.len() < vocab_size {
            // Count adjacent pairs weighted by word frequency.
            let mut pair_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
            for (syms, n) in &words {
                for pair in syms.windows(2) {
                    *pair_counts
                        .entry((pair[0].clone(), pair[1].clone()))
                        .or_insert(0) += n;
                }
            }
            // Most frequent pair; BTreeMap order makes ties lexicographic.
            let Some((best_pair, best_count)) = pair_counts
                .into_iter()
                .fold(None::<((String, String), usize)>, |acc, (pair, count)| {
                    match &acc {
                        Some((_, c)) if *c >= count => acc,
                        _ => Some((pair, count)),
                    }
                })
            else {
                break;
            };
            if best_count < 2 {
                break; // merging singletons gains nothing
            }
            let merged = format!("{}{}", best_pair.0, best_pair.1);
            for (syms, _) in &mut words {
                apply_merge(syms, &best_pair, &merged);
            }
            vocab.push(merged);
            merges.push(best_pair);
        }
        vocab.sort();
        Ok(Self::from_parts(TokenizerKind::Subword, vocab, merges))
    }

    /// Non-blank vocabulary size. CTC logits need `vocab_size() + 1` slots.
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id == BLANK_ID {
            return None;
        }
        self.tokens.get(id as usize - 1).map(|s| s.as_str())
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let mut syms = word_symbols(word);
            for (pair, merged) in self
                .merges
                .iter()
                .map(|p| (p, format!("{}{}", p.0, p.1)))
            {
                apply_merge(&mut syms, pair, &merged);
            }
            for sym in syms {
                let id = self.token_to_id.get(&sym).ok_or_else(|| {
                    Error::Format(format!("token {sym:?} not in tokenizer vocabulary"))
                })?;
                ids.push(*id);
            }
        }
        Ok(ids)
    }

    /// Inverse of `encode`: blanks are skipped, `</w>` markers become spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if let Some(tok) = self.token(id) {
                out.push_str(tok);
            }
        }
        out.replace(END_OF_WORD, " ").trim_end().to_string()
    }

    /// Text format: kind, vocabulary in id order, then one merge per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("kind {}\n", self.kind.name()));
        out.push_str(&format!("vocab {}\n", self.tokens.len()));
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str(&format!("merges {}\n", self.merges.len()));
        for (a, b) in &self.merges {
            out.push_str(&format!("{a} {b}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let fail = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
        let mut lines = text.lines();
        let kind = match lines.next() {
            Some("kind char") => TokenizerKind::Char,
            Some("kind subword") => TokenizerKind::Subword,
            _ => return Err(fail("missing kind header")),
        };
        let vocab_n: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("vocab "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail("missing vocab header"))?;
        let mut tokens = Vec::with_capacity(vocab_n);
        for _ in 0..vocab_n {
            tokens.push(
                lines
                    .next()
                    .ok_or_else(|| fail("truncated vocab section"))?
                    .to_string(),
            );
        }
        let merges_n: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("merges "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| fail("missing merges header"))?;
        let mut merges = Vec::with_capacity(merges_n);
        for _ in 0..merges_n {
            let line = lines.next().ok_or_else(|| fail("truncated merges section"))?;
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| fail("bad merge line"))?;
            merges.push((a.to_string(), b.to_string()));
        }
        Ok(Self::from_parts(kind, tokens, merges))
    }
}

fn apply_merge(syms: &mut Vec<String>, pair: &(String, String), merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == pair.0 && syms[i + 1] == pair.1 {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(texts: &[&str]) -> Vec<String> {
        texts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn first_merge_on_repeat_heavy_corpus_is_aa() {
        // Alphabet: {"a", "a</w>"}. One extra slot forces exactly one merge,
        // and ("a","a") is the most frequent pair.
        let tok = Tokenizer::train_subword(&lines(&["aaaa aaaa"]), 3).unwrap();
        assert_eq!(tok.merges().len(), 1);
        assert_eq!(tok.merges()[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn vocab_size_equal_to_alphabet_behaves_like_chars() {
        let corpus = lines(&["the cat", "the hat"]);
        let char_tok = Tokenizer::train_char(&corpus).unwrap();
        let sub_tok = Tokenizer::train_subword(&corpus, char_tok.vocab_size()).unwrap();
        assert!(sub_tok.merges().is_empty());
        for text in ["the cat", "hat the", "the the"] {
            assert_eq!(char_tok.encode(text).unwrap(), sub_tok.encode(text).unwrap());
        }
    }

    #[test]
    fn round_trip_on_corpus_text() {
        let corpus = lines(&[
            "able brush candle",
            "drape elbow able",
            "brush brush drape",
        ]);
        let tok = Tokenizer::train_subword(&corpus, 60).unwrap();
        let mut rng = crate::rng::Rng::seed_from(5);
        let words = ["able", "brush", "candle", "drape", "elbow"];
        for _ in 0..100 {
            let n = 1 + rng.below(6);
            let text = (0..n)
                .map(|_| words[rng.below(words.len())])
                .collect::<Vec<_>>()
                .join(" ");
            let ids = tok.encode(&text).unwrap();
            assert!(ids.iter().all(|&id| id != BLANK_ID));
            assert_eq!(tok.decode(&ids), text);
        }
    }

    #[test]
    fn subword_targets_are_shorter_than_char_targets() {
        let corpus = lines(&["able brush candle drape elbow"]);
        let char_tok = Tokenizer::train_char(&corpus).unwrap();
        let sub_tok = Tokenizer::train_subword(&corpus, 64).unwrap();
        let text = "candle elbow brush";
        assert!(sub_tok.encode(text).unwrap().len() < char_tok.encode(text).unwrap().len());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            Tokenizer::train_subword(&lines(&["", "  "]), 10),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(Tokenizer::train_char(&[]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn deterministic_merges() {
        let corpus = lines(&["banana bandana", "cabana banana"]);
        let a = Tokenizer::train_subword(&corpus, 30).unwrap();
        let b = Tokenizer::train_subword(&corpus, 30).unwrap();
        assert_eq!(a.merges(), b.merges());
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tok.txt");
        let corpus = lines(&["able brush candle drape"]);
        let tok = Tokenizer::train_subword(&corpus, 40).unwrap();
        tok.save(&path).unwrap();
        let back = Tokenizer::load(&path).unwrap();
        assert_eq!(back.kind, TokenizerKind::Subword);
        assert_eq!(back.tokens, tok.tokens);
        assert_eq!(back.merges, tok.merges);
        assert_eq!(
            back.encode("brush candle").unwrap(),
            tok.encode("brush candle").unwrap()
        );
    }

    #[test]
    fn unknown_symbol_is_an_error() {
        let tok = Tokenizer::train_char(&lines(&["abc"])).unwrap();
        assert!(tok.encode("xyz").is_err());
    }
}
