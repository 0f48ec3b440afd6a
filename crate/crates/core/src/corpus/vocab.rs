use std::collections::HashMap;

use super::tokenize;
use crate::error::{Error, Result};
use crate::model::{Sentence, SpecialTokens};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;

const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<pad>"];

/// Token/index maps with four reserved entries at indices 0..3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Tokens seen at least `min_count` times, ordered by count (descending)
/// then token text.
pub fn build_vocab<S: AsRef<str>>(sentences: &[S], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        for tok in tokenize(s.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(
        RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect(),
    )
    .expect("reserved prefix present")
}

impl Vocabulary {
    /// Restores a vocabulary from its full token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::InvalidArgument(
                "vocabulary must start with <bos> <eos> <unk> <pad>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    /// Index of `token`, or [`UNK`].
    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn special_tokens(&self) -> SpecialTokens {
        SpecialTokens { bos: BOS, eos: EOS }
    }

    pub fn encode(&self, text: &str) -> Sentence {
        Sentence::new(tokenize(text).iter().map(|t| self.index(t)).collect())
    }

    pub fn decode(&self, sentence: &Sentence) -> String {
        sentence
            .tokens()
            .iter()
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_then_lexicographic_order() {
        let v = build_vocab(&["a b", "a"], 1);
        assert_eq!(v.index("a"), 4);
        assert_eq!(v.index("b"), 5);
        let v = build_vocab(&["z y", "y z", "x"], 1);
        assert_eq!(&v.tokens()[4..], &["y", "z", "x"]);
    }

    #[test]
    fn min_count_maps_rare_tokens_to_unknown() {
        let v = build_vocab(&["a b"], 2);
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode("a b").tokens(), &[UNK, UNK]);
    }

    #[test]
    fn reserved_indices_fixed() {
        let v = build_vocab(&["hello"], 1);
        assert_eq!(v.token(BOS), Some("<bos>"));
        assert_eq!(v.token(EOS), Some("<eos>"));
        assert_eq!(v.token(UNK), Some("<unk>"));
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.decode(&v.encode("Hello there")), "hello <unk>");
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }

    #[test]
    fn restore_round_trip() {
        let v = build_vocab(&["b a c a"], 1);
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
    }
}
