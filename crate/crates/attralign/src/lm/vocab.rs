//! Word-level vocabulary with reserved special tokens.
//!
//! Reserved ids are fixed: `<pad>`=0, `<bos>`=1, `<eos>`=2, `<unk>`=3,
//! followed by a block of domain special tokens in sorted order, followed by
//! corpus words ordered by descending frequency (ties by token, ascending).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Split text into word-level tokens. Runs of alphanumerics (plus `_`, `-`,
/// `'`) form words, any other non-space character is its own token, and a
/// whitespace-free `<...>` span is kept whole so special tokens like
/// `<dom:movie_review>` survive tokenization. No case folding.
pub fn split_tokens(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let is_word_char = |c: char| c.is_alphanumeric() || c == '_' || c == '-' || c == '\'';
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '<' {
            let mut j = i + 1;
            while j < chars.len() && !chars[j].is_whitespace() && chars[j] != '>' {
                j += 1;
            }
            if j < chars.len() && chars[j] == '>' {
                tokens.push(chars[i..=j].iter().collect());
                i = j + 1;
            } else {
                tokens.push("<".to_string());
                i += 1;
            }
        } else if is_word_char(c) {
            let mut j = i + 1;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            tokens.push(chars[i..j].iter().collect());
            i = j;
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    tokens
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    n_domains: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from corpus texts plus the domain special tokens.
    pub fn build<'a>(texts: impl Iterator<Item = &'a str>, domains: &[String]) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in split_tokens(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut domain_tokens: Vec<String> = domains.to_vec();
        domain_tokens.sort();
        domain_tokens.dedup();
        for d in &domain_tokens {
            if !(d.starts_with('<') && d.ends_with('>')) {
                return Err(Error::Vocab(format!(
                    "domain tag {d:?} must be a <...> special token"
                )));
            }
            counts.remove(d);
        }
        for r in RESERVED {
            counts.remove(r);
        }
        let mut words: Vec<(String, u64)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(domain_tokens.iter().cloned());
        tokens.extend(words.into_iter().map(|(w, _)| w));
        let n_domains = domain_tokens.len();
        Ok(Self::from_tokens(tokens, n_domains))
    }

    /// Reconstruct from a serialized token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>, n_domains: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            n_domains,
            index,
        }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    /// Ids below this bound are special (reserved + domain block).
    pub fn first_word_id(&self) -> u32 {
        (RESERVED.len() + self.n_domains) as u32
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenize text to ids; out-of-vocabulary tokens map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_tokens(text)
            .iter()
            .map(|t| self.id_of(t).unwrap_or(UNK))
            .collect()
    }

    /// Join tokens with single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_vocab() -> Vocabulary {
        Vocabulary::build(
            ["good movie", "bad movie", "good plot twist"].into_iter(),
            &["<dom:movie_review>".to_string()],
        )
        .unwrap()
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = sample_vocab();
        assert_eq!(v.id_of("<pad>"), Some(PAD));
        assert_eq!(v.id_of("<bos>"), Some(BOS));
        assert_eq!(v.id_of("<eos>"), Some(EOS));
        assert_eq!(v.id_of("<unk>"), Some(UNK));
        assert_eq!(v.id_of("<dom:movie_review>"), Some(4));
        assert_eq!(v.first_word_id(), 5);
    }

    #[test]
    fn empty_round_trip() {
        let v = sample_vocab();
        let ids = v.encode("");
        assert!(ids.is_empty());
        assert_eq!(v.decode(&ids), "");
    }

    #[test]
    fn in_vocab_round_trip() {
        let v = sample_vocab();
        let ids = v.encode("good movie");
        assert_eq!(ids.len(), 2);
        assert_eq!(v.decode(&ids), "good movie");
    }

    #[test]
    fn oov_maps_to_unk() {
        let v = sample_vocab();
        let ids = v.encode("glorious movie");
        assert_eq!(ids[0], UNK);
        assert_ne!(ids[1], UNK);
    }

    #[test]
    fn frequency_orders_words() {
        let v = sample_vocab();
        // "movie" (2) and "good" (2) tie -> alphabetical; then the rest.
        assert_eq!(v.token(v.first_word_id()), Some("good"));
        assert_eq!(v.token(v.first_word_id() + 1), Some("movie"));
    }

    #[test]
    fn special_span_tokenizes_whole() {
        let toks = split_tokens("text <dom:news> more");
        assert_eq!(toks, vec!["text", "<dom:news>", "more"]);
    }

    #[test]
    fn punctuation_splits() {
        let toks = split_tokens("The year is 1910.");
        assert_eq!(toks, vec!["The", "year", "is", "1910", "."]);
    }

    #[test]
    fn lone_angle_bracket_is_punctuation() {
        let toks = split_tokens("a < b");
        assert_eq!(toks, vec!["a", "<", "b"]);
    }
}
