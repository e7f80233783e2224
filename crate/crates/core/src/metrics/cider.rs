use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ngram_counts, tokenize, NGram};
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
const MAX_N: usize = 4;

/// Per-order tf-idf vector of a sentence plus its norms and length.
struct Weighted {
    vecs: Vec<BTreeMap<NGram, f64>>,
    norms: [f64; MAX_N],
    len: usize,
}

/// CIDEr-D scorer with document frequencies frozen at construction.
#[derive(Clone, Debug)]
pub struct CiderD {
    df: HashMap<NGram, f64>,
    log_ref_sets: f64,
}

impl CiderD {
    /// `reference_sets[i]` are all references of image `i`; an n-gram's
    /// document frequency is the number of sets containing it.
    pub fn new<T: AsRef<str>>(reference_sets: &[Vec<T>]) -> Result<Self> {
        if reference_sets.is_empty() {
            return Err(Error::Contract("CIDEr-D needs a nonempty reference corpus".into()));
        }
        let mut df: HashMap<NGram, f64> = HashMap::new();
        for refs in reference_sets {
            let mut seen: HashSet<NGram> = HashSet::new();
            for r in refs {
                let toks = tokenize(r.as_ref());
                for n in 1..=MAX_N {
                    seen.extend(ngram_counts(&toks, n).into_keys());
                }
            }
            for g in seen {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
        Ok(CiderD {
            df,
            log_ref_sets: (reference_sets.len() as f64).ln(),
        })
    }

    fn weigh(&self, tokens: &[String]) -> Weighted {
        let mut vecs = Vec::with_capacity(MAX_N);
        let mut norms = [0.0; MAX_N];
        for n in 1..=MAX_N {
            let mut v = BTreeMap::new();
            for (g, tf) in ngram_counts(tokens, n) {
                let df = self.df.get(&g).copied().unwrap_or(0.0).max(1.0);
                let w = tf as f64 * (self.log_ref_sets - df.ln());
                norms[n - 1] += w * w;
                v.insert(g, w);
            }
            vecs.push(v);
        }
        for x in &mut norms {
            *x = x.sqrt();
        }
        Weighted {
            vecs,
            norms,
            len: tokens.len(),
        }
    }

    fn sim(h: &Weighted, r: &Weighted) -> [f64; MAX_N] {
        let delta = h.len as f64 - r.len as f64;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut out = [0.0; MAX_N];
        for n in 0..MAX_N {
            let mut val = 0.0;
            for (g, &hv) in &h.vecs[n] {
                if let Some(&rv) = r.vecs[n].get(g) {
                    val += hv.min(rv) * rv;
                }
            }
            if h.norms[n] != 0.0 && r.norms[n] != 0.0 {
                val /= h.norms[n] * r.norms[n];
            }
            out[n] = val * penalty;
        }
        out
    }

    /// Score of one candidate against its references.
    pub fn score<T: AsRef<str>>(&self, candidate: &str, references: &[T]) -> Result<f64> {
        if references.is_empty() {
            return Err(Error::Contract("CIDEr-D: empty reference set".into()));
        }
        let h = self.weigh(&tokenize(candidate));
        let mut acc = [0.0; MAX_N];
        for r in references {
            let s = Self::sim(&h, &self.weigh(&tokenize(r.as_ref())));
            for n in 0..MAX_N {
                acc[n] += s[n];
            }
        }
        let mean_n = acc.iter().sum::<f64>() / MAX_N as f64;
        Ok(mean_n / references.len() as f64 * 10.0)
    }

    /// Mean score and per-candidate scores.
    pub fn corpus_score<S: AsRef<str>, T: AsRef<str>>(
        &self,
        candidates: &[S],
        references: &[Vec<T>],
    ) -> Result<(f64, Vec<f64>)> {
        if candidates.is_empty() || candidates.len() != references.len() {
            return Err(Error::Contract(format!(
                "CIDEr-D needs matching nonempty corpora, got {} candidates and {} reference sets",
                candidates.len(),
                references.len()
            )));
        }
        let scores = candidates
            .iter()
            .zip(references)
            .map(|(c, r)| self.score(c.as_ref(), r))
            .collect::<Result<Vec<_>>>()?;
        Ok((scores.iter().sum::<f64>() / scores.len() as f64, scores))
    }
}

/// CIDEr-D with document frequencies taken from `references` itself.
pub fn cider_d<S: AsRef<str>, T: AsRef<str>>(candidates: &[S], references: &[Vec<T>]) -> Result<f64> {
    CiderD::new(references)?.corpus_score(candidates, references).map(|(m, _)| m)
}
