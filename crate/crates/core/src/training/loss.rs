use crate::data::{BOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// `−Σ_t log softmax(logits)[t, target_t]` over positions whose target is
/// not PAD. Returns a scalar.
pub fn xe_loss(g: &Graph, logits: Var, target: &[usize]) -> Result<Var> {
    let (t, v) = g.value(logits).dims2();
    if t != target.len() {
        return Err(Error::Shape {
            op: "xe_loss",
            lhs: g.shape(logits),
            rhs: vec![target.len()],
        });
    }
    if let Some((i, &tok)) = target.iter().enumerate().find(|&(_, &tok)| tok >= v) {
        return Err(Error::TokenOutOfRange {
            position: i,
            token: tok,
            vocab_size: v,
        });
    }
    let picks: Vec<(usize, usize)> = target
        .iter()
        .enumerate()
        .filter(|&(_, &tok)| tok != PAD)
        .map(|(i, &tok)| (i, tok))
        .collect();
    if picks.is_empty() {
        return Err(Error::Contract("cross-entropy over an all-pad target".into()));
    }
    let lp = g.pick(g.log_softmax_rows(logits), &picks)?;
    Ok(g.scale(g.sum(lp), -1.0))
}

/// Mean of per-caption losses.
pub fn mean_loss(g: &Graph, losses: &[Var]) -> Result<Var> {
    if losses.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    Ok(g.scale(g.sum_all(losses)?, 1.0 / losses.len() as f64))
}

/// Log-probabilities over the generation support (PAD and BOS excluded),
/// as graph nodes.
pub fn generation_log_softmax(g: &Graph, logits: Var) -> Var {
    let (_, v) = g.value(logits).dims2();
    let mut row = vec![0.0; v];
    row[PAD] = -1e9;
    row[BOS] = -1e9;
    let mask = g.constant(&Tensor::vector(row));
    let shifted = g.add_row(logits, mask).expect("mask row matches vocabulary");
    g.log_softmax_rows(shifted)
}
