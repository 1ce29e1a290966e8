//! Whitespace-tokenised vocabulary with reserved special tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{EafError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const SEP: usize = 3;
pub const PLACEHOLDER: usize = 4;

pub const PLACEHOLDER_TOKEN: &str = "[SIGN_FEATURES]";
const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", PLACEHOLDER_TOKEN];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Specials first, then `words` in first-seen order.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::from(SPECIALS.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    /// Vocabulary over every whitespace token of `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(texts.into_iter().flat_map(str::split_whitespace))
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| EafError::UnknownToken(w.to_string()))
            })
            .collect()
    }

    /// Token ids for a target sentence, terminated by `<eos>`.
    pub fn encode_target(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self.encode(text)?;
        ids.push(EOS);
        Ok(ids)
    }

    /// Joins non-special tokens with single spaces; stops at the first `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| !Self::is_special(i))
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_round_trip() {
        let v = Vocabulary::from_texts(["guten tag", "tag morgen"]);
        assert_eq!(v.len(), 5 + 3);
        assert_eq!(v.id(PLACEHOLDER_TOKEN), Some(PLACEHOLDER));
        let ids = v.encode_target("guten tag").unwrap();
        assert_eq!(ids.last(), Some(&EOS));
        assert_eq!(v.decode(&ids), "guten tag");
        assert!(matches!(v.encode("hallo"), Err(EafError::UnknownToken(_))));
    }

    #[test]
    fn serde_keeps_ids() {
        let v = Vocabulary::from_texts(["a b c"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("c"), Some(7));
    }
}
