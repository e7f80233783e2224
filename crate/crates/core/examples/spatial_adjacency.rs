//! Parent, neighbor and child matrices for a hand-made scene.
//!
//! `cargo run --example spatial_adjacency -- [epsilon]`

use image_transformer::spatial_graph::{build_spatial_graph, BoundingBox, Relation};

fn main() -> image_transformer::Result<()> {
    let epsilon: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let boxes = [
        ("table", BoundingBox::new(0.05, 0.40, 0.95, 0.95)),
        ("plate", BoundingBox::new(0.30, 0.55, 0.55, 0.75)),
        ("cup", BoundingBox::new(0.65, 0.50, 0.80, 0.70)),
        ("lamp", BoundingBox::new(0.70, 0.02, 0.90, 0.45)),
    ];
    let only: Vec<BoundingBox> = boxes.iter().map(|(_, b)| *b).collect();
    let g = build_spatial_graph(&only, epsilon)?;

    for rel in Relation::ALL {
        println!("{} ({} pairs)", rel.name(), g.count(rel));
        for l in 0..g.n {
            let row: Vec<String> = (0..g.n).map(|m| g.get(rel, l, m).to_string()).collect();
            println!("  {:<6} {}", boxes[l].0, row.join(" "));
        }
    }
    for (child, parent) in g.containments() {
        println!("{} lies inside {}", boxes[child].0, boxes[parent].0);
    }
    Ok(())
}
