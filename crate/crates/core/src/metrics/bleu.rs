use std::collections::HashMap;

use super::{ngram_counts, tokenize, NGram};
use crate::error::{Error, Result};

/// Numerator floor for zero n-gram matches in [`sentence_bleu`].
pub const BLEU_SMOOTH_EPS: f64 = 0.1;

/// `(clipped matches, candidate n-grams)` of order `n`.
pub fn clipped_counts(candidate: &[String], references: &[Vec<String>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<&NGram, usize> = HashMap::new();
    let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    for rc in &ref_counts {
        for (g, &c) in rc {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    let total = candidate.len().saturating_sub(n - 1);
    (matched, total)
}

/// Reference length closest to `c`, shorter on ties.
fn closest_ref_len(c: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

struct Tallies {
    matched: [usize; 4],
    total: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

fn tally(pairs: impl Iterator<Item = (Vec<String>, Vec<Vec<String>>)>, n: usize) -> Tallies {
    let mut t = Tallies {
        matched: [0; 4],
        total: [0; 4],
        cand_len: 0,
        ref_len: 0,
    };
    for (cand, refs) in pairs {
        t.cand_len += cand.len();
        t.ref_len += closest_ref_len(cand.len(), &refs);
        for k in 1..=n {
            let (m, tot) = clipped_counts(&cand, &refs, k);
            t.matched[k - 1] += m;
            t.total[k - 1] += tot;
        }
    }
    t
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn check_inputs(n_cand: usize, n_ref: usize, n: usize) -> Result<()> {
    if !(1..=4).contains(&n) {
        return Err(Error::Config(format!("BLEU order must be 1..=4, got {n}")));
    }
    if n_cand == 0 || n_cand != n_ref {
        return Err(Error::Contract(format!(
            "BLEU needs matching nonempty corpora, got {n_cand} candidates and {n_ref} reference sets"
        )));
    }
    Ok(())
}

/// Corpus BLEU-n: clipped n-gram precisions summed over the corpus, brevity
/// penalty against the closest reference length, unsmoothed geometric mean.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[Vec<T>], n: usize) -> Result<f64> {
    check_inputs(candidates.len(), references.len(), n)?;
    let pairs = candidates.iter().zip(references).map(|(c, rs)| {
        (
            tokenize(c.as_ref()),
            rs.iter().map(|r| tokenize(r.as_ref())).collect::<Vec<_>>(),
        )
    });
    let t = tally(pairs, n);
    let mut log_sum = 0.0;
    for k in 0..n {
        if t.matched[k] == 0 || t.total[k] == 0 {
            return Ok(0.0);
        }
        log_sum += (t.matched[k] as f64 / t.total[k] as f64).ln();
    }
    Ok(brevity_penalty(t.cand_len, t.ref_len) * (log_sum / n as f64).exp())
}

/// Single-sentence BLEU-n where zero matches count as [`BLEU_SMOOTH_EPS`].
pub fn sentence_bleu<T: AsRef<str>>(candidate: &str, references: &[T], n: usize) -> Result<f64> {
    check_inputs(1, 1, n)?;
    let cand = tokenize(candidate);
    let refs: Vec<_> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    let t = tally(std::iter::once((cand, refs)), n);
    let mut log_sum = 0.0;
    for k in 0..n {
        if t.total[k] == 0 {
            return Ok(0.0);
        }
        let m = (t.matched[k] as f64).max(BLEU_SMOOTH_EPS);
        log_sum += (m / t.total[k] as f64).ln();
    }
    Ok(brevity_penalty(t.cand_len, t.ref_len) * (log_sum / n as f64).exp())
}
