//! Caption scorers: corpus BLEU and CIDEr-D.

mod bleu;
mod cider;

pub use bleu::{bleu, clipped_counts, sentence_bleu, BLEU_SMOOTH_EPS};
pub use cider::{cider_d, CiderD, CIDER_SIGMA};

use std::collections::BTreeMap;

/// Lowercases, drops ASCII punctuation and splits on whitespace.
pub fn tokenize(s: &str) -> Vec<String> {
    s.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(String::from)
        .collect()
}

pub type NGram = Vec<String>;

/// Counts of every n-gram of order `n`, in a deterministic order.
pub fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<NGram, usize> {
    let mut out = BTreeMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}
