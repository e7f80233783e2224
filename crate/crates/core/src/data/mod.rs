//! Vocabulary, region files, caption files and the synthetic corpus.
//!
//! A dataset directory holds `manifest.json`, `regions.jsonl` and
//! `captions.jsonl` (`{id, captions: [..]}` per line).

mod regions;
mod toy;
mod vocab;

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use regions::{
    load_regions, read_regions, region_record_json, write_regions, Rejection, RegionLoad, RegionSet, MAX_REGIONS,
};
pub use toy::{
    caption_for, category_names, generate_toy_corpus, toy_vocabulary_words, SyntheticScene, ToyConfig,
    FUNCTION_WORDS, GRAMMAR_VERSION, NOUNS,
};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub n_scenes: usize,
    pub vocab: Vocabulary,
    /// Trailing scenes held out for validation.
    #[serde(default)]
    pub n_val: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar: Option<String>,
}

/// One line of a caption file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub id: String,
    pub captions: Vec<String>,
}

/// One line of a candidate file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub caption: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub regions: RegionSet,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Synthetic corpus of `cfg.n_scenes + n_val` scenes; the last `n_val`
    /// are validation.
    pub fn toy(cfg: &ToyConfig, n_val: usize) -> Result<Self> {
        let total = ToyConfig {
            n_scenes: cfg.n_scenes + n_val,
            ..*cfg
        };
        let scenes = generate_toy_corpus(&total)?;
        let vocab = Vocabulary::from_tokens(toy_vocabulary_words(cfg), 1);
        Ok(Dataset {
            manifest: Manifest {
                version: DATASET_VERSION,
                seed: cfg.seed,
                n_scenes: scenes.len(),
                vocab,
                n_val,
                grammar: Some(GRAMMAR_VERSION.to_string()),
            },
            examples: scenes
                .into_iter()
                .map(|s| Example {
                    regions: s.regions,
                    captions: s.captions,
                })
                .collect(),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.manifest.vocab
    }

    pub fn feature_width(&self) -> usize {
        self.examples.first().map_or(0, |e| e.regions.feature_width())
    }

    pub fn train(&self) -> &[Example] {
        &self.examples[..self.examples.len() - self.manifest.n_val]
    }

    /// Validation split; falls back to the training split when none is held out.
    pub fn val(&self) -> &[Example] {
        if self.manifest.n_val == 0 {
            &self.examples
        } else {
            &self.examples[self.examples.len() - self.manifest.n_val..]
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        let regions: Vec<RegionSet> = self.examples.iter().map(|e| e.regions.clone()).collect();
        write_regions(&dir.join("regions.jsonl"), &regions)?;
        let caps: Vec<CaptionRecord> = self
            .examples
            .iter()
            .map(|e| CaptionRecord {
                id: e.regions.scene_id.clone(),
                captions: e.captions.clone(),
            })
            .collect();
        write_jsonl(&dir.join("captions.jsonl"), &caps)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath)?).map_err(|e| Error::Schema {
            path: mpath.display().to_string(),
            line: e.line(),
            field: "<manifest>".into(),
            message: e.to_string(),
        })?;
        let regions = load_regions(&dir.join("regions.jsonl"))?;
        let caps: Vec<CaptionRecord> = read_jsonl(&dir.join("captions.jsonl"))?;
        let mut by_id: HashMap<String, Vec<String>> = caps.into_iter().map(|c| (c.id, c.captions)).collect();
        let mut examples = Vec::with_capacity(regions.len());
        for r in regions {
            let captions = by_id.remove(&r.scene_id).unwrap_or_default();
            examples.push(Example { regions: r, captions });
        }
        let ds = Dataset { manifest, examples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::Contract("dataset has no scenes".into()));
        }
        if self.manifest.n_val >= self.examples.len() {
            return Err(Error::Config(format!(
                "n_val {} leaves no training scenes out of {}",
                self.manifest.n_val,
                self.examples.len()
            )));
        }
        let d = self.feature_width();
        for e in &self.examples {
            if e.regions.feature_width() != d {
                return Err(Error::Contract(format!(
                    "scene {} has feature width {}, expected {d}",
                    e.regions.scene_id,
                    e.regions.feature_width()
                )));
            }
            if e.captions.is_empty() {
                return Err(Error::Contract(format!("scene {} has no captions", e.regions.scene_id)));
            }
        }
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads line-delimited JSON, reporting the failing line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            line: i + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
