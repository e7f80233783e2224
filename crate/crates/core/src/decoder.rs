//! LSTM decoder with `M` parallel attention sub-transformers over the
//! encoded regions, fused with the LSTM output through a GLU.
//!
//! All step functions operate on `B` rows at once: every row is an
//! independent hypothesis over the same scene.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BOS, EOS, PAD};
use crate::encoder::split_heads;
use crate::error::{Error, Result};
use crate::numerics::layers::xavier;
use crate::numerics::{glu_fuse, lstm_cell, Bound, GluParams, Graph, Linear, LstmParams, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_lstm: usize,
    /// Number of sub-transformers.
    pub m: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_embed: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_lstm: 1024,
            m: 3,
            n_heads: 8,
            d_model: 512,
            d_embed: 512,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("decoder needs at least one sub-transformer".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "decoder d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_lstm == 0 || self.d_embed == 0 {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        Ok(())
    }

    /// Whether the region mean is projected before joining the LSTM input.
    pub fn projects_mean(&self) -> bool {
        self.d_lstm != self.d_model
    }
}

#[derive(Clone, Debug)]
pub struct SubTransformerParams {
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

#[derive(Clone, Debug)]
pub struct DecoderParams {
    pub vocab_size: usize,
    pub n_heads: usize,
    pub d_lstm: usize,
    pub w_e: ParamId,
    /// `d_model × d_lstm`, present when the widths differ.
    pub mean_proj: Option<ParamId>,
    pub lstm: LstmParams,
    pub w_q: ParamId,
    pub subs: Vec<SubTransformerParams>,
    pub glu: GluParams,
    pub out: Linear,
}

impl DecoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, vocab_size: usize, cfg: &DecoderConfig, rng: &mut R) -> Self {
        let (dl, dm) = (cfg.d_lstm, cfg.d_model);
        let w_e = store.add("dec.w_e", Tensor::randn(&[vocab_size, cfg.d_embed], 0.1, rng));
        let mean_proj = cfg
            .projects_mean()
            .then(|| store.add("dec.mean_proj", xavier(dm, dl, rng)));
        let lstm = LstmParams::new(store, "dec.lstm", cfg.d_embed + dl, dl, rng);
        let w_q = store.add("dec.w_q", xavier(dl, dm, rng));
        let subs = (0..cfg.m)
            .map(|i| SubTransformerParams {
                w_k: store.add(format!("dec.sub{i}.w_k"), xavier(dm, dm, rng)),
                w_v: store.add(format!("dec.sub{i}.w_v"), xavier(dm, dm, rng)),
                w_o: store.add(format!("dec.sub{i}.w_o"), xavier(dm, dm, rng)),
            })
            .collect();
        let glu = GluParams::new(store, "dec.glu", dl, dm, dl, rng);
        let out = Linear::new(store, "dec.out", dl, vocab_size, true, rng);
        DecoderParams {
            vocab_size,
            n_heads: cfg.n_heads,
            d_lstm: dl,
            w_e,
            mean_proj,
            lstm,
            w_q,
            subs,
            glu,
            out,
        }
    }
}

/// Per-scene quantities that do not change across steps.
#[derive(Clone, Debug)]
pub struct DecoderMemory {
    pub n_regions: usize,
    /// Region mean at LSTM width, `1 × d_lstm`.
    pub mean: Var,
    /// `(sub-transformer index, per-head keys, per-head values)`.
    pub subs: Vec<(usize, Vec<Var>, Vec<Var>)>,
}

impl DecoderMemory {
    /// Keeps only the listed sub-transformers.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let subs: Vec<_> = self.subs.iter().filter(|s| keep.contains(&s.0)).cloned().collect();
        if subs.is_empty() {
            return Err(Error::Config(format!("no sub-transformer left after restricting to {keep:?}")));
        }
        Ok(DecoderMemory { subs, ..self.clone() })
    }
}

pub fn prepare_memory(g: &Graph, p: &Bound, params: &DecoderParams, a_enc: Var) -> Result<DecoderMemory> {
    let shape = g.shape(a_enc);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("decoder memory needs N×d regions, got {shape:?}")));
    }
    let mean = g.mean_rows(a_enc);
    let mean = match params.mean_proj {
        Some(w) => g.matmul(mean, p[w])?,
        None => mean,
    };
    let subs = params
        .subs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = split_heads(g, g.matmul(a_enc, p[s.w_k])?, params.n_heads)?;
            let v = split_heads(g, g.matmul(a_enc, p[s.w_v])?, params.n_heads)?;
            Ok((i, k, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecoderMemory {
        n_regions: shape[0],
        mean,
        subs,
    })
}

/// LSTM hidden and cell state plus the previous context, each `B × d_lstm`.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub m: Var,
    pub c: Var,
}

impl DecoderState {
    pub fn zeros(g: &Graph, rows: usize, d_lstm: usize) -> Self {
        let z = g.constant(&Tensor::zeros(&[rows, d_lstm]));
        DecoderState { h: z, m: z, c: z }
    }

    /// Gathers rows, e.g. to reorder beams.
    pub fn select(&self, g: &Graph, rows: &[usize]) -> Result<Self> {
        Ok(DecoderState {
            h: g.select_rows(self.h, rows)?,
            m: g.select_rows(self.m, rows)?,
            c: g.select_rows(self.c, rows)?,
        })
    }
}

fn check_tokens(tokens: &[usize], vocab_size: usize, offset: usize) -> Result<()> {
    match tokens.iter().position(|&t| t >= vocab_size) {
        Some(i) => Err(Error::TokenOutOfRange {
            position: offset + i,
            token: tokens[i],
            vocab_size,
        }),
        None => Ok(()),
    }
}

/// One decoding step for `tokens.len()` rows. Returns `B × |V|` logits and
/// the next state (whose `c` is the new context vector).
pub fn decoder_step(
    g: &Graph,
    p: &Bound,
    params: &DecoderParams,
    mem: &DecoderMemory,
    tokens: &[usize],
    state: &DecoderState,
) -> Result<(Var, DecoderState)> {
    check_tokens(tokens, params.vocab_size, 0)?;
    let embedded = g.select_rows(p[params.w_e], tokens)?;
    let visual = g.add_row(state.c, mem.mean)?;
    let x = g.concat_cols(&[embedded, visual])?;
    let (h, m) = lstm_cell(g, p, &params.lstm, x, state.h, state.m)?;

    let q_heads = split_heads(g, g.matmul(h, p[params.w_q])?, params.n_heads)?;
    let mut attended = Vec::with_capacity(mem.subs.len());
    for (i, k_heads, v_heads) in &mem.subs {
        let heads = q_heads
            .iter()
            .zip(k_heads)
            .zip(v_heads)
            .map(|((&q, &k), &v)| {
                let d_k = g.value(q).cols() as f64;
                let w = g.softmax_rows(g.scale(g.matmul_t(q, k)?, 1.0 / d_k.sqrt()));
                g.matmul(w, v)
            })
            .collect::<Result<Vec<_>>>()?;
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        attended.push(g.matmul(joined, p[params.subs[*i].w_o])?);
    }
    let mean = g.scale(g.sum_all(&attended)?, 1.0 / attended.len() as f64);
    let c = glu_fuse(g, p, &params.glu, h, mean)?;
    let logits = params.out.forward(g, p, c)?;
    Ok((logits, DecoderState { h, m, c }))
}

/// Logits for every position of a ground-truth prefix starting with BOS;
/// `T × |V|`.
pub fn teacher_forced_logits(
    g: &Graph,
    p: &Bound,
    params: &DecoderParams,
    mem: &DecoderMemory,
    caption: &[usize],
) -> Result<Var> {
    if caption.first() != Some(&BOS) {
        return Err(Error::Contract("teacher forcing input must begin with BOS".into()));
    }
    check_tokens(caption, params.vocab_size, 0)?;
    let mut state = DecoderState::zeros(g, 1, params.d_lstm);
    let mut rows = Vec::with_capacity(caption.len());
    for &t in caption {
        let (logits, next) = decoder_step(g, p, params, mem, &[t], &state)?;
        rows.push(logits);
        state = next;
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        g.concat_rows(&rows)
    }
}

/// Log-probabilities of each row of `logits`, with PAD and BOS removed from
/// the support (set to −∞).
pub fn generation_log_probs(logits: &Tensor) -> Vec<Vec<f64>> {
    logits
        .to_rows()
        .into_iter()
        .map(|mut row| {
            row[PAD] = f64::NEG_INFINITY;
            row[BOS] = f64::NEG_INFINITY;
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            row.iter().map(|x| x - lse).collect()
        })
        .collect()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// A finished decode: words without EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Summed log-probability, including EOS when emitted.
    pub log_prob: f64,
    /// Number of scored tokens (words plus EOS when emitted).
    pub length: usize,
    pub ended: bool,
}

impl Hypothesis {
    pub fn mean_log_prob(&self) -> f64 {
        self.log_prob / self.length.max(1) as f64
    }
}

/// Argmax decoding until EOS or `max_len` tokens.
pub fn greedy(g: &Graph, p: &Bound, params: &DecoderParams, mem: &DecoderMemory, max_len: usize) -> Result<Hypothesis> {
    greedy_traced(g, p, params, mem, max_len, None)
}

/// [`greedy`], optionally recording the context vector of every step.
pub fn greedy_traced(
    g: &Graph,
    p: &Bound,
    params: &DecoderParams,
    mem: &DecoderMemory,
    max_len: usize,
    mut contexts: Option<&mut Vec<Vec<f64>>>,
) -> Result<Hypothesis> {
    let mut state = DecoderState::zeros(g, 1, params.d_lstm);
    let mut token = BOS;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    };
    for _ in 0..max_len {
        let (logits, next) = decoder_step(g, p, params, mem, &[token], &state)?;
        if let Some(c) = contexts.as_deref_mut() {
            c.push(g.value(next.c).into_vec());
        }
        let lp = &generation_log_probs(&g.value(logits))[0];
        token = argmax(lp);
        hyp.log_prob += lp[token];
        hyp.length += 1;
        if token == EOS {
            hyp.ended = true;
            break;
        }
        hyp.tokens.push(token);
        state = next;
    }
    Ok(hyp)
}

/// Higher mean log-probability first, then the lexicographically lower
/// token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.mean_log_prob()
        .total_cmp(&a.mean_log_prob())
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.ended.cmp(&b.ended).reverse())
}

/// Beam search over summed log-probabilities. Candidates ending in EOS
/// leave the beam; when the beam empties or `max_len` is reached, the
/// finished hypothesis with the best mean log-probability wins.
pub fn beam_search(
    g: &Graph,
    p: &Bound,
    params: &DecoderParams,
    mem: &DecoderMemory,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    }];
    let mut state = DecoderState::zeros(g, 1, params.d_lstm);
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 0..max_len {
        let inputs: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
        let (logits, next) = decoder_step(g, p, params, mem, &inputs, &state)?;
        let lps = generation_log_probs(&g.value(logits));
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (b, lp) in lps.iter().enumerate() {
            for (w, &l) in lp.iter().enumerate() {
                if l.is_finite() {
                    cands.push((live[b].log_prob + l, b, w));
                }
            }
        }
        let seq = |&(_, b, w): &(f64, usize, usize)| {
            let mut s = live[b].tokens.clone();
            s.push(w);
            s
        };
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| seq(x).cmp(&seq(y))));
        cands.truncate(beam);

        let mut next_live = Vec::new();
        let mut rows = Vec::new();
        for &(score, b, w) in &cands {
            let mut h = Hypothesis {
                tokens: live[b].tokens.clone(),
                log_prob: score,
                length: live[b].length + 1,
                ended: w == EOS,
            };
            if w == EOS {
                finished.push(h);
            } else {
                h.tokens.push(w);
                if step + 1 == max_len {
                    finished.push(h);
                } else {
                    next_live.push(h);
                    rows.push(b);
                }
            }
        }
        if next_live.is_empty() {
            break;
        }
        state = next.select(g, &rows)?;
        live = next_live;
    }
    finished.sort_by(rank);
    Ok(finished.into_iter().next().unwrap_or(Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    }))
}

/// Trace of the unbiased sample covariance of the rows of `contexts`.
pub fn decoder_output_covariance_trace(contexts: &Tensor) -> Result<f64> {
    let (s, d) = contexts.dims2();
    if contexts.shape().len() != 2 || s < 2 {
        return Err(Error::Contract(format!(
            "covariance trace needs at least two rows, got shape {:?}",
            contexts.shape()
        )));
    }
    let data = contexts.data();
    let mut trace = 0.0;
    for j in 0..d {
        let mean = (0..s).map(|i| data[i * d + j]).sum::<f64>() / s as f64;
        let ss: f64 = (0..s).map(|i| (data[i * d + j] - mean).powi(2)).sum();
        trace += ss / (s - 1) as f64;
    }
    Ok(trace)
}
