//! Command-line front end shared by the `imtx` binary and the tests.
//!
//! Configuration precedence is flag, then config file, then built-in
//! default. Exit codes: 0 ok, 1 validation or usage, 2 numerical abort.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_regions, read_jsonl, write_jsonl, CandidateRecord, CaptionRecord, Dataset, ToyConfig};
use crate::diagnostics::diagnose;
use crate::encoder::EncoderVariant;
use crate::error::{Error, Result};
use crate::metrics::{bleu, cider_d};
use crate::model::{CaptionModel, ModelConfig};
use crate::numerics::gradcheck::{primitive_suite, CheckOptions, REL_TOLERANCE};
use crate::spatial_graph::{build_spatial_graph, Relation, DEFAULT_EPSILON};
use crate::training::{end_to_end_check, load_checkpoint, Item, TrainConfig, Trainer};

#[derive(Debug, Parser)]
#[command(name = "imtx", version, about = "Spatial-graph image transformer for captioning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cross-entropy and/or self-critical training.
    Train(TrainArgs),
    /// Caption every scene of a region file.
    Caption(CaptionArgs),
    /// Score candidate captions against references.
    Eval(EvalArgs),
    /// Dump the parent/neighbor/child matrices of every scene.
    Adjacency(AdjacencyArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
    /// Context covariance trace, branch attention mass and sub-transformer sweep.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic corpus to a directory.
    Toy(ToyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseArg {
    Xe,
    Rl,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Spatial,
    Original,
    MeanNoSpatial,
}

impl From<VariantArg> for EncoderVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Spatial => EncoderVariant::Spatial,
            VariantArg::Original => EncoderVariant::Original,
            VariantArg::MeanNoSpatial => EncoderVariant::MeanNoSpatial,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (manifest.json, regions.jsonl, captions.jsonl).
    #[arg(long, conflicts_with = "toy")]
    pub data: Option<PathBuf>,
    /// Generate the synthetic corpus with this seed instead.
    #[arg(long)]
    pub toy: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    pub phase: PhaseArg,
    /// Checkpoint to resume from; required for `--phase rl`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub xe_epochs: Option<usize>,
    #[arg(long)]
    pub rl_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rl_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n_scenes: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub beam: usize,
    /// Candidate file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Lines of `{id, caption}`.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Lines of `{id, captions: [...]}`.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdjacencyArgs {
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one analytic gradient entry per check.
    #[arg(long)]
    pub inject_fault: bool,
    /// Skip the end-to-end cross-entropy check.
    #[arg(long)]
    pub primitives_only: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, conflicts_with = "toy")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub toy: Option<u64>,
    #[arg(long, default_value_t = 500)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 100)]
    pub n_val: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub n_scenes: usize,
    #[arg(long, default_value_t = 100)]
    pub n_val: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    pub max_regions: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Architecture knobs; widths not listed follow `ModelConfig::small`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub m: usize,
    pub variant: EncoderVariant,
    pub max_len: usize,
    pub epsilon: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            m: 3,
            variant: EncoderVariant::Spatial,
            max_len: 16,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ModelSpec {
    pub fn build(&self, d_in: usize, vocab_size: usize) -> ModelConfig {
        let mut c = ModelConfig::small(d_in, vocab_size, self.d_model);
        c.encoder.n_layers = self.n_layers;
        c.encoder.n_heads = self.n_heads;
        c.encoder.variant = self.variant;
        c.decoder.n_heads = self.n_heads;
        c.decoder.m = self.m;
        c.max_len = self.max_len;
        c.epsilon = self.epsilon;
        c
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub toy: ToyConfig,
    pub n_val: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelSpec::default(),
            toy: ToyConfig::default(),
            n_val: 100,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            line: e.line(),
            field: "<config>".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Serialize)]
struct Resolved<'a> {
    run: &'a RunConfig,
    model: &'a ModelConfig,
    data: String,
    phase: PhaseArg,
    init: Option<&'a Path>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    if a.phase == PhaseArg::Rl && a.init.is_none() {
        return Err(Error::Usage("--phase rl needs a checkpoint via --init".into()));
    }
    if a.data.is_none() && a.toy.is_none() {
        return Err(Error::Usage("one of --data or --toy is required".into()));
    }
    let ckpt = a.init.as_deref().map(load_checkpoint).transpose()?;
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let mut r = RunConfig::default();
            if let Some(c) = &ckpt {
                r.train = c.train.clone();
            }
            r
        }
    };
    let t = &mut run.train;
    if let Some(v) = a.xe_epochs {
        t.xe_epochs = v;
    }
    if let Some(v) = a.rl_epochs {
        t.rl_epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.lr {
        t.lr0 = v;
    }
    if a.rl_lr.is_some() {
        t.rl_lr = a.rl_lr;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.d_model {
        run.model.d_model = v;
    }
    if let Some(v) = a.variant {
        run.model.variant = v.into();
    }
    if let Some(v) = a.m {
        run.model.m = v;
    }
    if let Some(v) = a.n_scenes {
        run.toy.n_scenes = v;
    }
    if let Some(v) = a.n_val {
        run.n_val = v;
    }
    if let Some(s) = a.toy {
        run.toy.seed = s;
    }
    run.train.validate()?;

    let (data, source) = match &a.data {
        Some(dir) => (Dataset::load(dir)?, dir.display().to_string()),
        None => {
            run.toy.validate()?;
            (Dataset::toy(&run.toy, run.n_val)?, format!("toy:{}", run.toy.seed))
        }
    };
    data.validate()?;
    let vocab = data.vocab().clone();

    let mut trainer = match ckpt {
        Some(c) => {
            if c.vocab != vocab {
                return Err(Error::Config("checkpoint vocabulary differs from the dataset".into()));
            }
            let mut tr = Trainer::from_checkpoint(c);
            tr.config = run.train.clone();
            tr
        }
        None => {
            let cfg = run.model.build(data.feature_width(), vocab.len());
            cfg.validate()?;
            Trainer::new(CaptionModel::new(cfg, run.train.seed)?, run.train.clone(), vocab.clone())?
        }
    };
    let train = Item::from_examples(data.train(), &vocab);
    let val = Item::from_examples(data.val(), &vocab);
    for it in train.iter().chain(&val) {
        trainer.model.check_regions(&it.regions)?;
    }

    trainer = trainer.with_output(&a.out)?;
    let resolved = Resolved {
        run: &run,
        model: &trainer.model.config,
        data: source,
        phase: a.phase,
        init: a.init.as_deref(),
    };
    fs::write(a.out.join("resolved_config.json"), serde_json::to_string_pretty(&resolved)?)?;
    trainer.run(&train, &val, a.phase != PhaseArg::Rl, a.phase != PhaseArg::Xe)?;
    if let Some(last) = trainer.log.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(())
}

fn caption(a: &CaptionArgs) -> Result<()> {
    if a.beam == 0 {
        return Err(Error::Usage("--beam must be ≥ 1".into()));
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let scenes = load_regions(&a.regions)?;
    for s in &scenes {
        ckpt.model.check_regions(s)?;
    }
    let records = scenes
        .iter()
        .map(|s| {
            Ok(CandidateRecord {
                id: s.scene_id.clone(),
                caption: ckpt.vocab.decode(&ckpt.model.decode(s, a.beam)?.tokens),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    match &a.out {
        Some(p) => write_jsonl(p, &records),
        None => {
            for r in &records {
                println!("{}", serde_json::to_string(r)?);
            }
            Ok(())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub n: usize,
    pub bleu: [f64; 4],
    pub cider_d: f64,
}

pub fn eval_files(candidates: &Path, references: &Path) -> Result<EvalOutput> {
    let cands: Vec<CandidateRecord> = read_jsonl(candidates)?;
    let refs: Vec<CaptionRecord> = read_jsonl(references)?;
    let mut by_id: BTreeMap<&str, &str> = BTreeMap::new();
    for c in &cands {
        if by_id.insert(&c.id, &c.caption).is_some() {
            return Err(Error::Contract(format!("duplicate candidate id {}", c.id)));
        }
    }
    let mut cs = Vec::with_capacity(refs.len());
    for r in &refs {
        let c = by_id
            .remove(r.id.as_str())
            .ok_or_else(|| Error::Contract(format!("no candidate for id {}", r.id)))?;
        cs.push(c);
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Contract(format!("candidate {extra} has no references")));
    }
    let rs: Vec<Vec<String>> = refs.into_iter().map(|r| r.captions).collect();
    let mut b = [0.0; 4];
    for (n, slot) in b.iter_mut().enumerate() {
        *slot = bleu(&cs, &rs, n + 1)?;
    }
    Ok(EvalOutput {
        n: cs.len(),
        bleu: b,
        cider_d: cider_d(&cs, &rs)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SceneAdjacency {
    pub scene_id: String,
    pub n: usize,
    pub omega_p: Vec<Vec<u8>>,
    pub omega_n: Vec<Vec<u8>>,
    pub omega_c: Vec<Vec<u8>>,
    pub parent_pairs: usize,
    pub neighbor_pairs: usize,
    pub child_pairs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdjacencyReport {
    pub epsilon: f64,
    pub scenes: Vec<SceneAdjacency>,
    pub parent_pairs: usize,
    pub neighbor_pairs: usize,
    pub child_pairs: usize,
}

pub fn adjacency_report(regions: &Path, epsilon: f64) -> Result<AdjacencyReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let scenes = load_regions(regions)?;
    let mut report = AdjacencyReport {
        epsilon,
        scenes: Vec::with_capacity(scenes.len()),
        parent_pairs: 0,
        neighbor_pairs: 0,
        child_pairs: 0,
    };
    for s in &scenes {
        let sg = build_spatial_graph(&s.boxes, epsilon)?;
        let rows = |r: Relation| sg.matrix(r).chunks(sg.n.max(1)).map(<[u8]>::to_vec).collect();
        let e = SceneAdjacency {
            scene_id: s.scene_id.clone(),
            n: sg.n,
            omega_p: rows(Relation::Parent),
            omega_n: rows(Relation::Neighbor),
            omega_c: rows(Relation::Child),
            parent_pairs: sg.count(Relation::Parent),
            neighbor_pairs: sg.count(Relation::Neighbor),
            child_pairs: sg.count(Relation::Child),
        };
        report.parent_pairs += e.parent_pairs;
        report.neighbor_pairs += e.neighbor_pairs;
        report.child_pairs += e.child_pairs;
        report.scenes.push(e);
    }
    Ok(report)
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let opts = CheckOptions {
        corrupt: a.inject_fault,
        ..CheckOptions::default()
    };
    let mut results = primitive_suite(a.seed, opts)?;
    if !a.primitives_only {
        results.push(end_to_end_check(a.seed, opts)?);
    }
    for r in &results {
        eprintln!(
            "{:<24} {:>6} entries  max rel err {:.3e}  {}",
            r.name,
            r.entries,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    let report = serde_json::json!({
        "seed": a.seed,
        "tolerance": REL_TOLERANCE,
        "passed": failed.is_empty(),
        "results": results,
    });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::GradCheck { failed })
    }
}

fn diagnose_cmd(a: &DiagnoseArgs) -> Result<()> {
    if a.samples < 2 {
        return Err(Error::Usage("--samples must be ≥ 2".into()));
    }
    let data = match (&a.data, a.toy) {
        (Some(dir), _) => Dataset::load(dir)?,
        (None, Some(seed)) => {
            let toy = ToyConfig {
                seed,
                n_scenes: a.n_scenes,
                ..ToyConfig::default()
            };
            toy.validate()?;
            Dataset::toy(&toy, a.n_val)?
        }
        (None, None) => return Err(Error::Usage("one of --data or --toy is required".into())),
    };
    let ckpt = load_checkpoint(&a.ckpt)?;
    if &ckpt.vocab != data.vocab() {
        return Err(Error::Config("checkpoint vocabulary differs from the dataset".into()));
    }
    let items = Item::from_examples(data.val(), &ckpt.vocab);
    for it in &items {
        ckpt.model.check_regions(&it.regions)?;
    }
    let report = diagnose(&ckpt.model, &ckpt.vocab, &items, a.samples)?;
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn toy(a: &ToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        seed: a.seed,
        n_scenes: a.n_scenes,
        vocab_size: a.vocab_size,
        max_regions: a.max_regions,
    };
    cfg.validate()?;
    let data = Dataset::toy(&cfg, a.n_val)?;
    data.validate()?;
    data.save(&a.out)?;
    println!("{} scenes ({} validation) written to {}", data.examples.len(), a.n_val, a.out.display());
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Caption(a) => caption(a),
        Command::Eval(a) => {
            let out = eval_files(&a.candidates, &a.references)?;
            emit(a.out.as_deref(), &serde_json::to_string_pretty(&out)?)
        }
        Command::Adjacency(a) => {
            let report = adjacency_report(&a.regions, a.epsilon)?;
            eprintln!(
                "{} scenes: {} parent, {} neighbor, {} child pairs",
                report.scenes.len(),
                report.parent_pairs,
                report.neighbor_pairs,
                report.child_pairs
            );
            emit(a.out.as_deref(), &serde_json::to_string(&report)?)
        }
        Command::Gradcheck(a) => gradcheck(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Toy(a) => toy(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Log verbosity follows `RUST_LOG`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
