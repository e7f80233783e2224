//! Cross-entropy and self-critical training, Adam, checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;
mod scst;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Progress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{end_to_end_check, full_suite, tiny_model_config, tiny_scene};
pub use loss::{generation_log_softmax, mean_loss, xe_loss};
pub use optim::{clip_global_norm, global_norm, Adam, AdamConfig};
pub use scst::{sample_in_graph, scst_batch, ScstBatch, ScstRecord};
pub use trainer::{evaluate, mean_xe_per_token, EvalReport, Item, MetricRecord, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Xe,
    Rl,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Xe => "xe",
            Phase::Rl => "rl",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Phase::Xe => 1,
            Phase::Rl => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub xe_epochs: usize,
    pub rl_epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global-norm clip in the SCST phase.
    pub rl_clip_norm: Option<f64>,
    /// Global-norm clip in the cross-entropy phase.
    pub xe_clip_norm: Option<f64>,
    /// SCST learning rate; defaults to the last cross-entropy rate.
    pub rl_lr: Option<f64>,
    /// Beam width for validation decoding.
    pub eval_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-3,
            decay: 0.8,
            decay_every: 3,
            batch_size: 10,
            xe_epochs: 10,
            rl_epochs: 5,
            seed: 0,
            adam: AdamConfig::default(),
            rl_clip_norm: Some(5.0),
            xe_clip_norm: None,
            rl_lr: None,
            eval_beam: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if self.decay_every == 0 || self.batch_size == 0 || self.eval_beam == 0 {
            return Err(Error::Config("decay_every, batch_size and eval_beam must be ≥ 1".into()));
        }
        if let Some(lr) = self.rl_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("rl_lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    /// `lr0 · decay^⌊epoch / decay_every⌋`, epochs counted from zero.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for one (phase, epoch, batch, scene) slot, so any
/// epoch can be replayed without the history before it.
pub fn derive_rng(seed: u64, phase: Phase, epoch: usize, batch: usize, scene: usize) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for x in [phase.tag(), epoch as u64, batch as u64, scene as u64] {
        h = splitmix(h ^ x);
    }
    ChaCha8Rng::seed_from_u64(h)
}
