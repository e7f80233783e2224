//! Trains on the synthetic corpus and reports validation scores per epoch.
//!
//! `cargo run --release --example train_toy -- [n_scenes] [xe_epochs] [rl_epochs] [variant] [d_model] [seed]`

use image_transformer::data::{Dataset, ToyConfig};
use image_transformer::encoder::EncoderVariant;
use image_transformer::model::{CaptionModel, ModelConfig};
use image_transformer::training::{evaluate, Item, TrainConfig, Trainer};

fn main() -> image_transformer::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let variant = match args.get(4).map(String::as_str) {
        Some("mean") => EncoderVariant::MeanNoSpatial,
        Some("original") => EncoderVariant::Original,
        _ => EncoderVariant::Spatial,
    };
    let seed = arg(6, 1) as u64;
    let toy = ToyConfig {
        n_scenes: arg(1, 500),
        seed: 6 + seed,
        ..ToyConfig::default()
    };
    let data = Dataset::toy(&toy, 100)?;
    let mut config = ModelConfig::small(toy.d_in(), data.vocab().len(), arg(5, 128));
    config.encoder.variant = variant;
    let train = Item::from_examples(data.train(), data.vocab());
    let val = Item::from_examples(data.val(), data.vocab());
    let tc = TrainConfig {
        xe_epochs: arg(2, 20),
        rl_epochs: arg(3, 0),
        seed,
        ..TrainConfig::default()
    };
    let model = CaptionModel::new(config, tc.seed)?;
    let mut trainer = Trainer::new(model, tc, data.vocab().clone())?;
    if let Ok(dir) = std::env::var("TOY_OUT") {
        trainer = trainer.with_output(std::path::Path::new(&dir))?;
    }
    trainer.run(&train, &val, true, true)?;
    let report = evaluate(&trainer.model, &trainer.vocab, &val, 3)?;
    println!("val CIDEr-D {:.4}  BLEU-1 {:.4}  BLEU-4 {:.4}", report.cider, report.bleu1, report.bleu4);
    for (c, it) in report.captions.iter().zip(&val).take(5) {
        println!("{:<40} | {}", c, it.refs[0]);
    }
    Ok(())
}
