//! Briefly trains on the toy corpus, then compares greedy and beam
//! decoding on held-out scenes.
//!
//! `cargo run --release --example caption_beam -- [beam]`

use image_transformer::data::{Dataset, ToyConfig};
use image_transformer::training::{Item, TrainConfig, Trainer};
use image_transformer::{CaptionModel, ModelConfig};

fn main() -> image_transformer::Result<()> {
    let beam: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let data = Dataset::toy(
        &ToyConfig {
            n_scenes: 200,
            ..ToyConfig::default()
        },
        8,
    )?;
    let train = Item::from_examples(data.train(), data.vocab());
    let val = Item::from_examples(data.val(), data.vocab());
    let tc = TrainConfig {
        xe_epochs: 4,
        rl_epochs: 0,
        eval_beam: 1,
        ..TrainConfig::default()
    };
    let model = CaptionModel::new(ModelConfig::small(data.feature_width(), data.vocab().len(), 64), 0)?;
    let mut trainer = Trainer::new(model, tc, data.vocab().clone())?;
    trainer.run(&train, &val, true, false)?;

    let vocab = &trainer.vocab;
    for it in &val {
        let g = trainer.model.greedy(&it.regions)?;
        let b = trainer.model.beam_search(&it.regions, beam)?;
        println!("{}", it.regions.scene_id);
        println!("  reference  {}", it.refs[0]);
        println!("  greedy     {} (mean log p {:.3})", vocab.decode(&g.tokens), g.mean_log_prob());
        println!("  beam {beam}     {} (mean log p {:.3})", vocab.decode(&b.tokens), b.mean_log_prob());
    }
    Ok(())
}
