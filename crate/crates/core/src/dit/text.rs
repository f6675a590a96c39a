//! Word-level tokenizer over the procedural prompt grammar.

use std::collections::HashMap;

use crate::tasks::scene::GRAMMAR_WORDS;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const DEPTH_TOKEN: &str = "[depth]";

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Special tokens `PAD`, `UNK`, `[depth]` followed by `words`.
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in ["<pad>", "<unk>", DEPTH_TOKEN].into_iter().chain(words) {
            if !v.index.contains_key(w) {
                v.index.insert(w.to_string(), v.words.len());
                v.words.push(w.to_string());
            }
        }
        v
    }

    /// Vocabulary of the scene prompt grammar.
    pub fn standard() -> Self {
        Self::new(GRAMMAR_WORDS.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Whitespace-split lookup. Empty text yields a single `PAD`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = text.split_whitespace().map(|w| self.id(w)).collect();
        if ids.is_empty() {
            vec![PAD]
        } else {
            ids
        }
    }
}

/// Tokenizes `text` and right-pads with `PAD` to `max_len`. Longer inputs are
/// returned unpadded; layout construction reports the overflow.
pub fn tokenize_prompt(text: &str, vocab: &Vocab, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.tokenize(text);
    if ids.len() < max_len {
        ids.resize(max_len, PAD);
    }
    ids
}
