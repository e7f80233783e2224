use rand::Rng;

use super::loss::generation_log_softmax;
use super::trainer::Item;
use crate::data::{Vocabulary, BOS, EOS};
use crate::decoder::{self, decoder_step, DecoderMemory, DecoderParams, DecoderState, Hypothesis};
use crate::error::Result;
use crate::metrics::CiderD;
use crate::model::CaptionModel;
use crate::numerics::{Bound, Graph, Var};

/// Multinomial sample at temperature 1, EOS-terminated and capped at
/// `max_len`. Also returns the summed log-probability as a graph scalar.
pub fn sample_in_graph<R: Rng + ?Sized>(
    g: &Graph,
    p: &Bound,
    params: &DecoderParams,
    mem: &DecoderMemory,
    max_len: usize,
    rng: &mut R,
) -> Result<(Hypothesis, Option<Var>)> {
    let mut state = DecoderState::zeros(g, 1, params.d_lstm);
    let mut token = BOS;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    };
    let mut terms = Vec::new();
    for _ in 0..max_len {
        let (logits, next) = decoder_step(g, p, params, mem, &[token], &state)?;
        let lsm = generation_log_softmax(g, logits);
        let lp = g.value(lsm);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        token = decoder::argmax(lp.data());
        for (i, &l) in lp.data().iter().enumerate() {
            acc += l.exp();
            if u < acc {
                token = i;
                break;
            }
        }
        terms.push(g.pick(lsm, &[(0, token)])?);
        hyp.log_prob += lp.data()[token];
        hyp.length += 1;
        if token == EOS {
            hyp.ended = true;
            break;
        }
        hyp.tokens.push(token);
        state = next;
    }
    let total = if terms.is_empty() {
        None
    } else {
        Some(g.sum(g.sum_all(&terms)?))
    };
    Ok((hyp, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScstRecord {
    pub scene_id: String,
    pub sample: Hypothesis,
    pub greedy: Hypothesis,
    pub reward_sample: f64,
    pub reward_greedy: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug)]
pub struct ScstBatch {
    /// `None` when every advantage is zero or every sample was empty.
    pub grads: Option<Vec<Vec<f64>>>,
    pub records: Vec<ScstRecord>,
    pub skipped_empty: usize,
    /// Batch mean of `−advantage · log p(sample)`.
    pub surrogate: f64,
}

/// Self-critical gradient for one batch: `−(r(sample) − r(greedy)) ·
/// ∇ log p(sample)`, averaged over the batch. `rng_for(i)` supplies the
/// sampling stream of the `i`-th scene.
pub fn scst_batch<F, R>(
    model: &CaptionModel,
    vocab: &Vocabulary,
    batch: &[&Item],
    scorer: &CiderD,
    mut rng_for: F,
) -> Result<ScstBatch>
where
    F: FnMut(usize) -> R,
    R: Rng,
{
    let g = Graph::new();
    let p = model.store.bind(&g);
    let mut records = Vec::with_capacity(batch.len());
    let mut terms = Vec::new();
    let mut skipped_empty = 0;
    for (i, item) in batch.iter().enumerate() {
        let mem = model.memory(&g, &p, &item.regions)?;
        let greedy = decoder::greedy(&g, &p, &model.decoder, &mem, model.config.max_len)?;
        let mut rng = rng_for(i);
        let (sample, log_p) = sample_in_graph(&g, &p, &model.decoder, &mem, model.config.max_len, &mut rng)?;
        if sample.tokens.is_empty() {
            skipped_empty += 1;
            log::warn!("empty SCST sample for scene {}", item.regions.scene_id);
            continue;
        }
        let reward_sample = scorer.score(&vocab.decode(&sample.tokens), &item.refs)?;
        let reward_greedy = scorer.score(&vocab.decode(&greedy.tokens), &item.refs)?;
        let advantage = reward_sample - reward_greedy;
        if advantage != 0.0 {
            if let Some(lp) = log_p {
                terms.push(g.scale(lp, -advantage));
            }
        }
        records.push(ScstRecord {
            scene_id: item.regions.scene_id.clone(),
            sample,
            greedy,
            reward_sample,
            reward_greedy,
            advantage,
        });
    }
    if terms.is_empty() {
        return Ok(ScstBatch {
            grads: None,
            records,
            skipped_empty,
            surrogate: 0.0,
        });
    }
    let loss = g.scale(g.sum(g.sum_all(&terms)?), 1.0 / batch.len() as f64);
    let grads = g.backward(loss)?;
    Ok(ScstBatch {
        grads: Some(model.store.collect_grads(&p, &grads)),
        records,
        skipped_empty,
        surrogate: g.value(loss).item(),
    })
}
