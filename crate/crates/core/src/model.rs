//! Encoder and decoder bundled with their parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::RegionSet;
use crate::decoder::{self, prepare_memory, DecoderConfig, DecoderMemory, DecoderParams, Hypothesis};
use crate::encoder::{encode_graph, BranchMass, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamStore, Var};
use crate::spatial_graph::{build_spatial_graph, DEFAULT_EPSILON};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub vocab_size: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_max_len() -> usize {
    16
}

impl ModelConfig {
    /// A small configuration sized for the synthetic corpus.
    pub fn small(d_in: usize, vocab_size: usize, d_model: usize) -> Self {
        ModelConfig {
            d_in,
            vocab_size,
            epsilon: DEFAULT_EPSILON,
            max_len: default_max_len(),
            encoder: EncoderConfig {
                n_layers: 2,
                n_heads: 4,
                d_model,
                d_ff: 2 * d_model,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                d_lstm: d_model,
                m: 3,
                n_heads: 4,
                d_model,
                d_embed: d_model,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.encoder.d_model != self.decoder.d_model {
            return Err(Error::Config(format!(
                "encoder d_model {} differs from decoder d_model {}",
                self.encoder.d_model, self.decoder.d_model
            )));
        }
        if self.d_in == 0 || self.vocab_size <= 4 {
            return Err(Error::Config(format!(
                "need d_in > 0 and vocab_size > 4, got {} and {}",
                self.d_in, self.vocab_size
            )));
        }
        if self.max_len == 0 || !self.epsilon.is_finite() {
            return Err(Error::Config("max_len must be ≥ 1 and epsilon finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CaptionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl CaptionModel {
    /// Fresh parameters, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(&mut store, config.d_in, &config.encoder, &mut rng);
        let decoder = DecoderParams::new(&mut store, config.vocab_size, &config.decoder, &mut rng);
        Ok(CaptionModel {
            config,
            store,
            encoder,
            decoder,
        })
    }

    pub fn check_regions(&self, regions: &RegionSet) -> Result<()> {
        let w = regions.feature_width();
        if w != self.config.d_in {
            return Err(Error::Config(format!(
                "scene {} has feature width {w} but the model expects {}",
                regions.scene_id, self.config.d_in
            )));
        }
        Ok(())
    }

    /// Encoder output for one scene, `N × d_model`.
    pub fn encode(&self, g: &Graph, p: &Bound, regions: &RegionSet, trace: Option<&mut Vec<BranchMass>>) -> Result<Var> {
        self.check_regions(regions)?;
        let sg = build_spatial_graph(&regions.boxes, self.config.epsilon).map_err(|e| match e {
            Error::InvalidBox { index, reason, .. } => Error::InvalidBox {
                scene: regions.scene_id.clone(),
                index,
                reason,
            },
            e => e,
        })?;
        let features = g.constant(&regions.features);
        encode_graph(g, p, &self.encoder, &self.config.encoder, features, &sg, trace)
    }

    pub fn memory(&self, g: &Graph, p: &Bound, regions: &RegionSet) -> Result<DecoderMemory> {
        let a = self.encode(g, p, regions, None)?;
        prepare_memory(g, p, &self.decoder, a)
    }

    pub fn greedy(&self, regions: &RegionSet) -> Result<Hypothesis> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let mem = self.memory(&g, &p, regions)?;
        decoder::greedy(&g, &p, &self.decoder, &mem, self.config.max_len)
    }

    pub fn beam_search(&self, regions: &RegionSet, beam: usize) -> Result<Hypothesis> {
        let g = Graph::new();
        let p = self.store.bind(&g);
        let mem = self.memory(&g, &p, regions)?;
        decoder::beam_search(&g, &p, &self.decoder, &mem, beam, self.config.max_len)
    }

    /// Beam search with width 1 delegates to greedy decoding.
    pub fn decode(&self, regions: &RegionSet, beam: usize) -> Result<Hypothesis> {
        if beam == 1 {
            self.greedy(regions)
        } else {
            self.beam_search(regions, beam)
        }
    }
}
