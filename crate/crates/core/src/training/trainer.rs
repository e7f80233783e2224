use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, Progress};
use super::loss::{mean_loss, xe_loss};
use super::optim::{clip_global_norm, Adam};
use super::scst::scst_batch;
use super::{derive_rng, Phase, TrainConfig};
use crate::data::{Example, RegionSet, Vocabulary};
use crate::decoder::teacher_forced_logits;
use crate::error::{Error, Result};
use crate::metrics::{bleu, CiderD};
use crate::model::CaptionModel;
use crate::numerics::Graph;

/// A scene with its captions already mapped to ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub regions: RegionSet,
    /// `(decoder input, target)` per reference caption.
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub refs: Vec<String>,
}

impl Item {
    pub fn new(example: &Example, vocab: &Vocabulary) -> Self {
        Item {
            regions: example.regions.clone(),
            pairs: example.captions.iter().map(|c| vocab.teacher_pair(c)).collect(),
            refs: example.captions.clone(),
        }
    }

    pub fn from_examples(examples: &[Example], vocab: &Vocabulary) -> Vec<Self> {
        examples.iter().map(|e| Item::new(e, vocab)).collect()
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub phase: String,
    pub loss: f64,
    pub cider: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub cider: f64,
    pub bleu1: f64,
    pub bleu4: f64,
    pub captions: Vec<String>,
}

/// Decodes every item and scores against its references; document
/// frequencies come from the evaluated references.
pub fn evaluate(model: &CaptionModel, vocab: &Vocabulary, items: &[Item], beam: usize) -> Result<EvalReport> {
    let captions = items
        .iter()
        .map(|it| Ok(vocab.decode(&model.decode(&it.regions, beam)?.tokens)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = items.iter().map(|it| it.refs.clone()).collect();
    let (cider, _) = CiderD::new(&refs)?.corpus_score(&captions, &refs)?;
    Ok(EvalReport {
        cider,
        bleu1: bleu(&captions, &refs, 1)?,
        bleu4: bleu(&captions, &refs, 4)?,
        captions,
    })
}

/// Teacher-forced cross-entropy per target token over all items.
pub fn mean_xe_per_token(model: &CaptionModel, items: &[Item]) -> Result<f64> {
    let (mut total, mut tokens) = (0.0, 0usize);
    for it in items {
        let g = Graph::new();
        let p = model.store.bind(&g);
        let mem = model.memory(&g, &p, &it.regions)?;
        for (input, target) in &it.pairs {
            let logits = teacher_forced_logits(&g, &p, &model.decoder, &mem, input)?;
            total += g.value(xe_loss(&g, logits, target)?).item();
            tokens += target.len();
        }
    }
    Ok(total / tokens.max(1) as f64)
}

pub struct Trainer {
    pub model: CaptionModel,
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub adam: Adam,
    pub progress: Progress,
    pub log: Vec<MetricRecord>,
    out_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(model: CaptionModel, config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.len() != model.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.config.vocab_size
            )));
        }
        let adam = Adam::new(config.adam, &model.store);
        Ok(Trainer {
            model,
            config,
            vocab,
            adam,
            progress: Progress::default(),
            log: Vec::new(),
            out_dir: None,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Self {
        Trainer {
            model: ckpt.model,
            config: ckpt.train,
            vocab: ckpt.vocab,
            adam: ckpt.adam,
            progress: ckpt.progress,
            log: Vec::new(),
            out_dir: None,
        }
    }

    /// Checkpoints and the metric log go to `dir`.
    pub fn with_output(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            vocab: self.vocab.clone(),
            adam: self.adam.clone(),
            progress: self.progress.clone(),
        }
    }

    fn dump_nonfinite(&self, phase: Phase, epoch: usize, batch: usize, loss: f64, items: &[&Item]) -> Error {
        let dump = self.out_dir.as_ref().and_then(|dir| {
            let path = dir.join(format!("nonfinite-{}-e{epoch}-b{batch}.json", phase.name()));
            let body = serde_json::json!({
                "phase": phase.name(),
                "epoch": epoch,
                "batch": batch,
                "loss": loss.to_string(),
                "scenes": items.iter().map(|it| &it.regions.scene_id).collect::<Vec<_>>(),
                "captions": items.iter().map(|it| &it.refs).collect::<Vec<_>>(),
            });
            fs::write(&path, serde_json::to_string_pretty(&body).ok()?).ok()?;
            Some(path)
        });
        Error::NonFinite {
            phase: phase.name().to_string(),
            epoch,
            batch,
            loss,
            dump,
        }
    }

    /// One cross-entropy update on `batch`; returns the batch loss.
    pub fn xe_step(&mut self, batch: &[&Item], lr: f64, epoch: usize, index: usize) -> Result<f64> {
        let g = Graph::new();
        let p = self.model.store.bind(&g);
        let mut losses = Vec::new();
        for it in batch {
            let mem = self.model.memory(&g, &p, &it.regions)?;
            for (input, target) in &it.pairs {
                let logits = teacher_forced_logits(&g, &p, &self.model.decoder, &mem, input)?;
                losses.push(xe_loss(&g, logits, target)?);
            }
        }
        let loss = mean_loss(&g, &losses)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(self.dump_nonfinite(Phase::Xe, epoch, index, value, batch));
        }
        let grads = g.backward(loss)?;
        let mut grads = self.model.store.collect_grads(&p, &grads);
        if let Some(c) = self.config.xe_clip_norm {
            clip_global_norm(&mut grads, c);
        }
        self.adam.step(&mut self.model.store, &grads, lr);
        self.progress.steps += 1;
        Ok(value)
    }

    fn batches<'a>(&self, items: &'a [Item], phase: Phase, epoch: usize) -> Vec<Vec<&'a Item>> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut derive_rng(self.config.seed, phase, epoch, 0, 0));
        order
            .chunks(self.config.batch_size)
            .map(|c| c.iter().map(|&i| &items[i]).collect())
            .collect()
    }

    fn validate_items(&self, items: &[Item]) -> Result<()> {
        if items.is_empty() {
            return Err(Error::Contract("no training scenes".into()));
        }
        for it in items {
            self.model.check_regions(&it.regions)?;
        }
        Ok(())
    }

    pub fn xe_epoch(&mut self, train: &[Item], val: &[Item]) -> Result<MetricRecord> {
        let epoch = self.progress.xe_epochs_done;
        let lr = self.config.learning_rate(epoch);
        let batches = self.batches(train, Phase::Xe, epoch);
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            total += self.xe_step(batch, lr, epoch, b)?;
        }
        self.progress.xe_epochs_done += 1;
        self.progress.last_xe_lr = Some(lr);
        let cider = evaluate(&self.model, &self.vocab, val, self.config.eval_beam)?.cider;
        self.finish_epoch(MetricRecord {
            epoch,
            phase: Phase::Xe.name().into(),
            loss: total / batches.len() as f64,
            cider,
            lr,
        })
    }

    /// Learning rate of the self-critical phase.
    pub fn rl_learning_rate(&self) -> f64 {
        self.config
            .rl_lr
            .or(self.progress.last_xe_lr)
            .unwrap_or_else(|| self.config.learning_rate(self.config.xe_epochs.saturating_sub(1)))
    }

    pub fn rl_epoch(&mut self, train: &[Item], val: &[Item], scorer: &CiderD) -> Result<MetricRecord> {
        let epoch = self.progress.rl_epochs_done;
        let lr = self.rl_learning_rate();
        let batches = self.batches(train, Phase::Rl, epoch);
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let seed = self.config.seed;
            let out = scst_batch(&self.model, &self.vocab, batch, scorer, |i| {
                derive_rng(seed, Phase::Rl, epoch, b, i + 1)
            })?;
            self.progress.skipped_empty += out.skipped_empty as u64;
            if !out.surrogate.is_finite() {
                return Err(self.dump_nonfinite(Phase::Rl, epoch, b, out.surrogate, batch));
            }
            total += out.surrogate;
            if let Some(mut grads) = out.grads {
                if let Some(c) = self.config.rl_clip_norm {
                    clip_global_norm(&mut grads, c);
                }
                self.adam.step(&mut self.model.store, &grads, lr);
                self.progress.steps += 1;
            }
        }
        self.progress.rl_epochs_done += 1;
        let cider = evaluate(&self.model, &self.vocab, val, self.config.eval_beam)?.cider;
        self.finish_epoch(MetricRecord {
            epoch,
            phase: Phase::Rl.name().into(),
            loss: total / batches.len() as f64,
            cider,
            lr,
        })
    }

    fn finish_epoch(&mut self, rec: MetricRecord) -> Result<MetricRecord> {
        log::info!(
            "{} epoch {}: loss {:.4} cider {:.4} lr {:.3e}",
            rec.phase,
            rec.epoch,
            rec.loss,
            rec.cider,
            rec.lr
        );
        if let Some(dir) = &self.out_dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join("metrics.jsonl"))?;
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
            save_checkpoint(&dir.join("last.ckpt"), &self.checkpoint())?;
        }
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Runs the remaining cross-entropy epochs (if `xe`) and then the
    /// remaining self-critical epochs (if `rl`).
    pub fn run(&mut self, train: &[Item], val: &[Item], xe: bool, rl: bool) -> Result<()> {
        self.validate_items(train)?;
        self.validate_items(val)?;
        if xe {
            while self.progress.xe_epochs_done < self.config.xe_epochs {
                self.xe_epoch(train, val)?;
            }
            if let Some(dir) = &self.out_dir {
                save_checkpoint(&dir.join("xe.ckpt"), &self.checkpoint())?;
            }
        }
        if rl && self.config.rl_epochs > 0 {
            let refs: Vec<Vec<String>> = train.iter().map(|it| it.refs.clone()).collect();
            let scorer = CiderD::new(&refs)?;
            while self.progress.rl_epochs_done < self.config.rl_epochs {
                self.rl_epoch(train, val, &scorer)?;
            }
            if let Some(dir) = &self.out_dir {
                save_checkpoint(&dir.join("rl.ckpt"), &self.checkpoint())?;
            }
            if self.progress.skipped_empty > 0 {
                log::warn!("{} empty SCST samples skipped", self.progress.skipped_empty);
            }
        }
        Ok(())
    }
}
