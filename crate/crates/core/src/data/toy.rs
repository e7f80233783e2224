//! Synthetic scenes whose captions are a deterministic function of region
//! categories and their containment structure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::regions::RegionSet;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::spatial_graph::{build_spatial_graph, BoundingBox, SpatialGraph, DEFAULT_EPSILON};

pub const GRAMMAR_VERSION: &str = "toy-grammar-v1";

/// Words the grammar uses besides category nouns.
pub const FUNCTION_WORDS: [&str; 4] = ["a", "inside", "beside", "and"];

/// Category nouns, in canonical (caption) order.
pub const NOUNS: [&str; 64] = [
    "apple", "bag", "ball", "banana", "bear", "bed", "bench", "bike", "bird", "boat", "book",
    "bottle", "bowl", "box", "bus", "cake", "car", "cat", "chair", "clock", "cow", "cup", "desk",
    "dog", "door", "duck", "egg", "fish", "fork", "frog", "goat", "hat", "horse", "jar", "kite", "lamp",
    "leaf", "lion", "mug", "owl", "pear", "pen", "pig", "plant", "plate", "rock", "rug", "sheep",
    "shoe", "sign", "sink", "sofa", "spoon", "star", "table", "toy", "tree", "truck", "vase",
    "wheel", "window", "wolf", "yak", "zebra",
];

const FEATURE_NOISE: f64 = 0.05;
const CONTAIN_PROB: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Total vocabulary size including the four reserved ids.
    pub vocab_size: usize,
    pub max_regions: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            n_scenes: 500,
            vocab_size: 50,
            max_regions: 4,
        }
    }
}

impl ToyConfig {
    /// Number of object categories: vocabulary minus reserved and function words.
    pub fn n_categories(&self) -> usize {
        self.vocab_size.saturating_sub(4 + FUNCTION_WORDS.len())
    }

    /// Feature width: category one-hot plus the four box coordinates.
    pub fn d_in(&self) -> usize {
        self.n_categories() + 4
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_categories();
        if self.n_scenes == 0 {
            return Err(Error::Config("toy corpus needs n_scenes >= 1".into()));
        }
        if !(2..=NOUNS.len()).contains(&c) {
            return Err(Error::Config(format!(
                "toy vocab_size {} gives {c} categories; need 2..={}",
                self.vocab_size,
                NOUNS.len()
            )));
        }
        if self.max_regions < 2 || self.max_regions > c {
            return Err(Error::Config(format!(
                "toy max_regions {} must lie in 2..={c}",
                self.max_regions
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub regions: RegionSet,
    pub categories: Vec<usize>,
    pub captions: Vec<String>,
}

fn noun(c: usize) -> &'static str {
    NOUNS[c]
}

/// Category names in id order (alphabetical).
pub fn category_names(n_categories: usize) -> Vec<&'static str> {
    (0..n_categories).map(noun).collect()
}

/// The caption grammar. With a containment `(child, parent)`:
/// `a <child> inside a <parent> [beside a <o1> [and a <o2> ..]]`; otherwise
/// `a <c1> beside a <c2> [and a <c3> ..]`. Nouns outside the containment
/// pair appear in category order.
pub fn caption_for(categories: &[usize], graph: &SpatialGraph) -> String {
    let by_cat = |mut idx: Vec<usize>| {
        idx.sort_by_key(|&i| categories[i]);
        idx
    };
    let mut words: Vec<String> = Vec::new();
    let push_list = |words: &mut Vec<String>, lead: &str, items: &[usize]| {
        for (k, &i) in items.iter().enumerate() {
            words.push(if k == 0 { lead } else { "and" }.to_string());
            words.push("a".into());
            words.push(noun(categories[i]).into());
        }
    };
    match graph.containments().first() {
        Some(&(child, parent)) => {
            words.extend(["a", noun(categories[child]), "inside", "a", noun(categories[parent])].map(String::from));
            let others = by_cat((0..categories.len()).filter(|&i| i != child && i != parent).collect());
            push_list(&mut words, "beside", &others);
        }
        None => {
            let all = by_cat((0..categories.len()).collect());
            words.push("a".into());
            words.push(noun(categories[all[0]]).into());
            push_list(&mut words, "beside", &all[1..]);
        }
    }
    words.join(" ")
}

fn random_box<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> BoundingBox {
    let w = rng.gen_range(lo..hi);
    let h = rng.gen_range(lo..hi);
    let x = rng.gen_range(0.0..1.0 - w);
    let y = rng.gen_range(0.0..1.0 - h);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Overlap small enough on both sides that no pair can become a containment.
fn loosely_placed(b: &BoundingBox, placed: &[BoundingBox]) -> bool {
    placed.iter().all(|p| {
        let inter = b.intersection_area(p);
        inter / b.area() < 0.5 && inter / p.area() < 0.5
    })
}

fn scene_boxes<R: Rng>(rng: &mut R, n: usize, contain: bool) -> Option<Vec<BoundingBox>> {
    let mut boxes = Vec::with_capacity(n);
    if contain {
        let outer = random_box(rng, 0.3, 0.55);
        let (ow, oh) = (outer.x2 - outer.x1, outer.y2 - outer.y1);
        let w = ow * rng.gen_range(0.35..0.7);
        let h = oh * rng.gen_range(0.35..0.7);
        let x = outer.x1 + rng.gen_range(0.0..ow - w);
        let y = outer.y1 + rng.gen_range(0.0..oh - h);
        boxes.push(BoundingBox::new(x, y, x + w, y + h));
        boxes.push(outer);
    }
    while boxes.len() < n {
        let mut ok = false;
        for _ in 0..200 {
            let b = random_box(rng, 0.12, 0.35);
            if loosely_placed(&b, &boxes) {
                boxes.push(b);
                ok = true;
                break;
            }
        }
        if !ok {
            return None;
        }
    }
    Some(boxes)
}

fn features<R: Rng>(rng: &mut R, categories: &[usize], boxes: &[BoundingBox], c: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = categories
        .iter()
        .zip(boxes)
        .map(|(&cat, b)| {
            let mut row: Vec<f64> = (0..c)
                .map(|k| f64::from(u8::from(k == cat)) + rng.gen_range(-FEATURE_NOISE..FEATURE_NOISE))
                .collect();
            row.extend_from_slice(&b.to_array());
            row
        })
        .collect();
    Tensor::from_rows(&rows).expect("uniform feature rows")
}

fn generate_scene<R: Rng>(rng: &mut R, cfg: &ToyConfig, index: usize) -> Result<SyntheticScene> {
    let c = cfg.n_categories();
    loop {
        let n = rng.gen_range(2..=cfg.max_regions);
        let contain = rng.gen_bool(CONTAIN_PROB);
        let Some(mut boxes) = scene_boxes(rng, n, contain) else {
            continue;
        };
        let mut categories: Vec<usize> = rand::seq::index::sample(rng, c, n).into_vec();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        boxes = order.iter().map(|&i| boxes[i]).collect();
        categories = order.iter().map(|&i| categories[i]).collect();

        let graph = build_spatial_graph(&boxes, DEFAULT_EPSILON)?;
        let caption = caption_for(&categories, &graph);
        let feats = features(rng, &categories, &boxes, c);
        let regions = RegionSet::new(format!("toy-{index:05}"), boxes, feats)?;
        return Ok(SyntheticScene {
            regions,
            categories,
            captions: vec![caption],
        });
    }
}

/// Deterministic in `cfg`.
pub fn generate_toy_corpus(cfg: &ToyConfig) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.n_scenes).map(|i| generate_scene(&mut rng, cfg, i)).collect()
}

/// Every word the grammar can emit for this configuration.
pub fn toy_vocabulary_words(cfg: &ToyConfig) -> Vec<String> {
    FUNCTION_WORDS
        .iter()
        .copied()
        .chain(category_names(cfg.n_categories()))
        .map(String::from)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial_graph::validate_partition;

    fn small() -> ToyConfig {
        ToyConfig {
            seed: 3,
            n_scenes: 60,
            vocab_size: 20,
            max_regions: 4,
        }
    }

    #[test]
    fn nouns_are_sorted_and_distinct() {
        assert!(NOUNS.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_toy_corpus(&small()).unwrap(), generate_toy_corpus(&small()).unwrap());
    }

    #[test]
    fn scenes_are_valid_partitions_with_grammar_captions() {
        let cfg = small();
        let scenes = generate_toy_corpus(&cfg).unwrap();
        let mut contained = 0;
        for s in &scenes {
            let g = build_spatial_graph(&s.regions.boxes, DEFAULT_EPSILON).unwrap();
            assert!(validate_partition(&g));
            assert!(g.containments().len() <= 1);
            let inside = s.captions[0].contains("inside");
            assert_eq!(inside, !g.containments().is_empty());
            contained += usize::from(inside);
            assert_eq!(s.regions.feature_width(), cfg.d_in());
        }
        assert!(contained > 10 && contained < 50, "{contained}");
    }

    #[test]
    fn caption_templates() {
        let outer = BoundingBox::new(0.0, 0.0, 0.6, 0.6);
        let inner = BoundingBox::new(0.1, 0.1, 0.3, 0.3);
        let far = BoundingBox::new(0.7, 0.7, 0.9, 0.9);
        let g = build_spatial_graph(&[far, outer, inner], DEFAULT_EPSILON).unwrap();
        let names = category_names(10);
        let s = caption_for(&[0, 2, 1], &g);
        assert_eq!(s, format!("a {} inside a {} beside a {}", names[1], names[2], names[0]));
        let flat = SpatialGraph::all_neighbors(3);
        let s = caption_for(&[2, 0, 1], &flat);
        assert_eq!(s, format!("a {} beside a {} and a {}", names[0], names[1], names[2]));
    }
}
