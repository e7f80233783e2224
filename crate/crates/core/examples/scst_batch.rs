//! One self-critical batch after a short cross-entropy warm-up: sampled and
//! greedy captions, their CIDEr-D rewards and the resulting advantages.

use image_transformer::data::{Dataset, ToyConfig};
use image_transformer::metrics::CiderD;
use image_transformer::training::{derive_rng, global_norm, scst_batch, Item, Phase, TrainConfig, Trainer};
use image_transformer::{CaptionModel, ModelConfig};

fn main() -> image_transformer::Result<()> {
    let data = Dataset::toy(
        &ToyConfig {
            n_scenes: 120,
            ..ToyConfig::default()
        },
        0,
    )?;
    let train = Item::from_examples(data.train(), data.vocab());
    let tc = TrainConfig {
        xe_epochs: 2,
        rl_epochs: 0,
        eval_beam: 1,
        ..TrainConfig::default()
    };
    let model = CaptionModel::new(ModelConfig::small(data.feature_width(), data.vocab().len(), 32), 0)?;
    let mut trainer = Trainer::new(model, tc, data.vocab().clone())?;
    trainer.run(&train, &train[..10], true, false)?;

    let refs: Vec<Vec<String>> = train.iter().map(|it| it.refs.clone()).collect();
    let scorer = CiderD::new(&refs)?;
    let batch: Vec<&Item> = train.iter().take(5).collect();
    let out = scst_batch(&trainer.model, &trainer.vocab, &batch, &scorer, |i| {
        derive_rng(0, Phase::Rl, 0, 0, i + 1)
    })?;
    for r in &out.records {
        println!("{}", r.scene_id);
        println!("  sample {:<40} reward {:.3}", trainer.vocab.decode(&r.sample.tokens), r.reward_sample);
        println!("  greedy {:<40} reward {:.3}", trainer.vocab.decode(&r.greedy.tokens), r.reward_greedy);
        println!("  advantage {:+.3}", r.advantage);
    }
    match &out.grads {
        Some(g) => println!("surrogate {:.4}, gradient norm {:.4}", out.surrogate, global_norm(g)),
        None => println!("all advantages zero, no update"),
    }
    Ok(())
}
