//! Saves a checkpoint mid-run, reloads it and shows that the resumed run
//! continues with the same losses as an uninterrupted one.

use image_transformer::data::{Dataset, ToyConfig};
use image_transformer::training::{load_checkpoint, Item, TrainConfig, Trainer};
use image_transformer::{CaptionModel, ModelConfig};

fn main() -> image_transformer::Result<()> {
    let data = Dataset::toy(
        &ToyConfig {
            n_scenes: 60,
            ..ToyConfig::default()
        },
        10,
    )?;
    let train = Item::from_examples(data.train(), data.vocab());
    let val = Item::from_examples(data.val(), data.vocab());
    let make = |epochs: usize| -> image_transformer::Result<Trainer> {
        let tc = TrainConfig {
            xe_epochs: epochs,
            rl_epochs: 0,
            eval_beam: 1,
            ..TrainConfig::default()
        };
        let model = CaptionModel::new(ModelConfig::small(data.feature_width(), data.vocab().len(), 32), 0)?;
        Trainer::new(model, tc, data.vocab().clone())
    };

    let mut straight = make(3)?;
    straight.run(&train, &val, true, false)?;

    let dir = std::env::temp_dir().join("imtx-checkpoint-example");
    let _ = std::fs::remove_dir_all(&dir);
    let mut first = make(1)?.with_output(&dir)?;
    first.run(&train, &val, true, false)?;
    let mut ckpt = load_checkpoint(&dir.join("last.ckpt"))?;
    ckpt.train.xe_epochs = 3;
    let mut resumed = Trainer::from_checkpoint(ckpt);
    resumed.run(&train, &val, true, false)?;

    for (a, b) in straight.log.iter().zip(first.log.iter().chain(&resumed.log)) {
        println!(
            "epoch {}  straight {:.12}  resumed {:.12}  identical {}",
            a.epoch,
            a.loss,
            b.loss,
            a.loss.to_bits() == b.loss.to_bits()
        );
    }
    Ok(())
}
