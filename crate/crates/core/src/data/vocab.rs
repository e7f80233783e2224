use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::metrics::tokenize;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token ↔ id bijection with four reserved ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    min_count: usize,
    tokens: Vec<String>,
}

impl From<VocabRecord> for Vocabulary {
    fn from(r: VocabRecord) -> Self {
        Vocabulary::from_tokens(r.tokens, r.min_count)
    }
}

impl From<Vocabulary> for VocabRecord {
    fn from(v: Vocabulary) -> Self {
        VocabRecord {
            min_count: v.min_count,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// `tokens` must start with the reserved entries; missing ones are
    /// inserted.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().filter(|t| !RESERVED.contains(&t.as_str())));
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens: all,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    /// Word ids of a sentence, without BOS/EOS.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        tokenize(sentence).iter().map(|t| self.id(t)).collect()
    }

    /// Joins word ids, stopping at EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decoder input `[BOS, w1..wn]` and target `[w1..wn, EOS]`.
    pub fn teacher_pair(&self, sentence: &str) -> (Vec<usize>, Vec<usize>) {
        let words = self.encode(sentence);
        let mut input = Vec::with_capacity(words.len() + 1);
        input.push(BOS);
        input.extend_from_slice(&words);
        let mut target = words;
        target.push(EOS);
        (input, target)
    }
}

/// Keeps tokens occurring at least `min_count` times; ids are assigned by
/// descending count, ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(captions: &[S], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in captions {
        for t in tokenize(c.as_ref()) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_count.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_count)
}
