//! Prints a few synthetic scenes with their relations and captions, and
//! optionally writes the whole dataset to a directory.
//!
//! `cargo run --example toy_corpus -- [seed] [out_dir]`

use image_transformer::data::{category_names, Dataset, ToyConfig};
use image_transformer::spatial_graph::build_spatial_graph;

fn main() -> image_transformer::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let cfg = ToyConfig {
        seed: args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7),
        n_scenes: 40,
        ..ToyConfig::default()
    };
    let data = Dataset::toy(&cfg, 10)?;
    let names = category_names(cfg.n_categories());
    println!("{} categories, vocabulary {}, feature width {}", names.len(), data.vocab().len(), cfg.d_in());
    for e in data.examples.iter().take(6) {
        let sg = build_spatial_graph(&e.regions.boxes, 0.9)?;
        println!("{}  regions {}  containments {:?}", e.regions.scene_id, e.regions.len(), sg.containments());
        for b in &e.regions.boxes {
            let [x1, y1, x2, y2] = b.to_array();
            println!("    [{x1:.2}, {y1:.2}, {x2:.2}, {y2:.2}]");
        }
        println!("  \"{}\"", e.captions[0]);
    }
    if let Some(dir) = args.get(2) {
        data.save(std::path::Path::new(dir))?;
        println!("written to {dir}");
    }
    Ok(())
}
