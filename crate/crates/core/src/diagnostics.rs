//! Spread of decoder contexts, encoder attention mass per relation branch,
//! and a sweep over the number of active sub-transformers.

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::decoder::{decoder_output_covariance_trace, greedy_traced, prepare_memory};
use crate::encoder::BranchMass;
use crate::error::{Error, Result};
use crate::metrics::{bleu, CiderD};
use crate::model::CaptionModel;
use crate::numerics::{Graph, Tensor};
use crate::training::Item;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMass {
    pub layer: usize,
    pub parent: Option<f64>,
    pub neighbor: Option<f64>,
    pub child: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sub_transformers: Vec<usize>,
    pub samples: usize,
    pub covariance_trace: f64,
    pub cider: f64,
    pub bleu4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub scenes: usize,
    pub samples: usize,
    pub covariance_trace: f64,
    pub branch_mass: Vec<LayerMass>,
    pub m_ablation: Vec<AblationRow>,
}

struct Sweep {
    contexts: Vec<Vec<f64>>,
    captions: Vec<String>,
    scenes: usize,
}

fn sweep(model: &CaptionModel, vocab: &Vocabulary, items: &[Item], keep: &[usize], samples: usize) -> Result<Sweep> {
    let mut out = Sweep {
        contexts: Vec::new(),
        captions: Vec::new(),
        scenes: 0,
    };
    for it in items {
        if out.contexts.len() >= samples {
            break;
        }
        let g = Graph::new();
        let p = model.store.bind(&g);
        let a = model.encode(&g, &p, &it.regions, None)?;
        let mem = prepare_memory(&g, &p, &model.decoder, a)?.restrict(keep)?;
        let hyp = greedy_traced(&g, &p, &model.decoder, &mem, model.config.max_len, Some(&mut out.contexts))?;
        out.captions.push(vocab.decode(&hyp.tokens));
        out.scenes += 1;
    }
    out.contexts.truncate(samples);
    Ok(out)
}

fn trace_of(rows: &[Vec<f64>]) -> Result<f64> {
    decoder_output_covariance_trace(&Tensor::from_rows(rows)?)
}

fn score(captions: &[String], items: &[Item]) -> Result<(f64, f64)> {
    let refs: Vec<Vec<String>> = items[..captions.len()].iter().map(|it| it.refs.clone()).collect();
    let (cider, _) = CiderD::new(&refs)?.corpus_score(captions, &refs)?;
    Ok((cider, bleu(captions, &refs, 4)?))
}

/// Decodes scenes greedily until `samples` context vectors are collected.
pub fn diagnose(model: &CaptionModel, vocab: &Vocabulary, items: &[Item], samples: usize) -> Result<DiagnosticsReport> {
    if items.is_empty() || samples < 2 {
        return Err(Error::Config("diagnostics need scenes and at least two samples".into()));
    }
    let m = model.decoder.subs.len();
    let all: Vec<usize> = (0..m).collect();
    let full = sweep(model, vocab, items, &all, samples)?;
    if full.contexts.len() < 2 {
        return Err(Error::Contract("fewer than two decoder steps were produced".into()));
    }

    let n_layers = model.encoder.layers.len();
    let mut sums = vec![[0.0; 3]; n_layers];
    let mut counts = vec![[0usize; 3]; n_layers];
    for it in &items[..full.scenes] {
        let g = Graph::new();
        let p = model.store.bind(&g);
        let mut trace: Vec<BranchMass> = Vec::new();
        model.encode(&g, &p, &it.regions, Some(&mut trace))?;
        for (l, mass) in trace.iter().enumerate() {
            for b in 0..3 {
                if mass[b].is_finite() {
                    sums[l][b] += mass[b];
                    counts[l][b] += 1;
                }
            }
        }
    }
    let avg = |l: usize, b: usize| (counts[l][b] > 0).then(|| sums[l][b] / counts[l][b] as f64);
    let branch_mass = (0..n_layers)
        .map(|l| LayerMass {
            layer: l,
            parent: avg(l, 0),
            neighbor: avg(l, 1),
            child: avg(l, 2),
        })
        .collect();

    let mut m_ablation = Vec::with_capacity(m);
    for k in 1..=m {
        let keep: Vec<usize> = (0..k).collect();
        let s = if k == m { None } else { Some(sweep(model, vocab, items, &keep, samples)?) };
        let s = s.as_ref().unwrap_or(&full);
        let (cider, bleu4) = score(&s.captions, items)?;
        m_ablation.push(AblationRow {
            sub_transformers: keep,
            samples: s.contexts.len(),
            covariance_trace: trace_of(&s.contexts)?,
            cider,
            bleu4,
        });
    }

    Ok(DiagnosticsReport {
        scenes: full.scenes,
        samples: full.contexts.len(),
        covariance_trace: trace_of(&full.contexts)?,
        branch_mass,
        m_ablation,
    })
}
