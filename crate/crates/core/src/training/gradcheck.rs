use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::xe_loss;
use crate::data::{RegionSet, BOS, EOS};
use crate::decoder::{prepare_memory, teacher_forced_logits, DecoderConfig};
use crate::encoder::{EncoderConfig, EncoderVariant};
use crate::error::Result;
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::gradcheck::{check_store, primitive_suite, CheckOptions, CheckResult};
use crate::numerics::Tensor;
use crate::spatial_graph::{BoundingBox, DEFAULT_EPSILON};

/// Small enough for exhaustive finite differences; `d_lstm ≠ d_model` so the
/// mean projection is exercised.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d_in: 5,
        vocab_size: 7,
        epsilon: DEFAULT_EPSILON,
        max_len: 4,
        encoder: EncoderConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ff: 6,
            variant: EncoderVariant::Spatial,
            spatial_layer_mask: Vec::new(),
        },
        decoder: DecoderConfig {
            d_lstm: 6,
            m: 2,
            n_heads: 2,
            d_model: 4,
            d_embed: 3,
        },
    }
}

/// Three regions, one nested inside another.
pub fn tiny_scene(seed: u64) -> RegionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = vec![
        BoundingBox::new(0.1, 0.1, 0.6, 0.6),
        BoundingBox::new(0.2, 0.2, 0.4, 0.4),
        BoundingBox::new(0.7, 0.5, 0.95, 0.9),
    ];
    RegionSet::new("tiny", boxes, Tensor::uniform(&[3, 5], 1.0, &mut rng)).expect("valid tiny scene")
}

/// Finite-difference check of the cross-entropy loss of one caption with
/// respect to every encoder and decoder parameter.
pub fn end_to_end_check(seed: u64, opts: CheckOptions) -> Result<CheckResult> {
    let model = CaptionModel::new(tiny_model_config(), seed)?;
    let scene = tiny_scene(seed);
    let input = [BOS, 4, 5, 6];
    let target = [4, 5, 6, EOS];
    check_store("end_to_end_xe", &model.store, opts, |g, p| {
        let a = model.encode(g, p, &scene, None)?;
        let mem = prepare_memory(g, p, &model.decoder, a)?;
        let logits = teacher_forced_logits(g, p, &model.decoder, &mem, &input)?;
        xe_loss(g, logits, &target)
    })
}

/// Every primitive plus the end-to-end step.
pub fn full_suite(seed: u64, opts: CheckOptions) -> Result<Vec<CheckResult>> {
    let mut out = primitive_suite(seed, opts)?;
    out.push(end_to_end_check(seed, opts)?);
    Ok(out)
}
