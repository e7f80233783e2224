//! Decoder context covariance trace, branch attention mass and the
//! sub-transformer sweep for a briefly trained model.

use image_transformer::data::{Dataset, ToyConfig};
use image_transformer::diagnostics::diagnose;
use image_transformer::training::{Item, TrainConfig, Trainer};
use image_transformer::{CaptionModel, ModelConfig};

fn main() -> image_transformer::Result<()> {
    let data = Dataset::toy(
        &ToyConfig {
            n_scenes: 150,
            ..ToyConfig::default()
        },
        30,
    )?;
    let train = Item::from_examples(data.train(), data.vocab());
    let val = Item::from_examples(data.val(), data.vocab());
    let tc = TrainConfig {
        xe_epochs: 3,
        rl_epochs: 0,
        eval_beam: 1,
        ..TrainConfig::default()
    };
    let model = CaptionModel::new(ModelConfig::small(data.feature_width(), data.vocab().len(), 32), 0)?;
    let mut trainer = Trainer::new(model, tc, data.vocab().clone())?;
    trainer.run(&train, &val, true, false)?;

    let report = diagnose(&trainer.model, &trainer.vocab, &val, 200)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
