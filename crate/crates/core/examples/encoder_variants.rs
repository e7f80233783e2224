//! Runs one scene through the spatial, original and mean-no-spatial
//! encoders and prints per-layer attention mass on each relation branch.

use image_transformer::data::{generate_toy_corpus, ToyConfig};
use image_transformer::encoder::{encode_graph, EncoderConfig, EncoderParams, EncoderVariant};
use image_transformer::numerics::{Graph, ParamStore};
use image_transformer::spatial_graph::{build_spatial_graph, Relation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> image_transformer::Result<()> {
    let toy = ToyConfig {
        n_scenes: 20,
        ..ToyConfig::default()
    };
    let corpus = generate_toy_corpus(&toy)?;
    let scene = corpus
        .iter()
        .find(|s| s.regions.len() >= 3 && s.captions[0].contains("inside"))
        .unwrap_or(&corpus[0]);
    println!("{}: {}", scene.regions.scene_id, scene.captions[0]);
    let sg = build_spatial_graph(&scene.regions.boxes, 0.9)?;
    println!("containments {:?}", sg.containments());

    for variant in [EncoderVariant::Spatial, EncoderVariant::Original, EncoderVariant::MeanNoSpatial] {
        let cfg = EncoderConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 64,
            variant,
            spatial_layer_mask: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let params = EncoderParams::new(&mut store, toy.d_in(), &cfg, &mut rng);
        let g = Graph::new();
        let p = store.bind(&g);
        let mut mass = Vec::new();
        let out = encode_graph(&g, &p, &params, &cfg, g.constant(&scene.regions.features), &sg, Some(&mut mass))?;
        println!("{variant:?}: output {:?}", g.value(out).shape());
        for (l, m) in mass.iter().enumerate() {
            let parts: Vec<String> = Relation::ALL
                .iter()
                .map(|r| match m[r.index()] {
                    v if v.is_nan() => format!("{} -", r.name()),
                    v => format!("{} {v:.3}", r.name()),
                })
                .collect();
            println!("  layer {l}: {}", parts.join(", "));
        }
    }
    Ok(())
}
