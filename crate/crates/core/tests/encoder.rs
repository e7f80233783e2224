mod common;

use common::*;
use image_transformer::encoder::{
    encode, encode_graph, input_embed, masked_attention, no_spatial_layer_forward, original_layer_forward,
    spatial_layer_forward, EncoderConfig, EncoderParams, EncoderVariant, RelationMasks,
};
use image_transformer::numerics::{Graph, ParamStore, Tensor};
use image_transformer::spatial_graph::{build_spatial_graph, BoundingBox, Relation, SpatialGraph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(n_layers: usize, d: usize, heads: usize, variant: EncoderVariant, mask: Vec<bool>) -> EncoderConfig {
    EncoderConfig {
        n_layers,
        n_heads: heads,
        d_model: d,
        d_ff: 2 * d,
        variant,
        spatial_layer_mask: mask,
    }
}

/// Parameters with every tensor, norms included, drawn at random.
fn params(cfg: &EncoderConfig, d_in: usize, seed: u64) -> (ParamStore, EncoderParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let p = EncoderParams::new(&mut store, d_in, cfg, &mut rng);
    for t in store.tensors_mut() {
        *t = Tensor::uniform(t.shape(), 0.8, &mut rng);
    }
    (store, p)
}

fn masks_of(sg: &SpatialGraph) -> [Mat; 3] {
    Relation::ALL.map(|r| sg.mask(r).to_rows())
}

fn contained_scene(d_in: usize, seed: u64) -> image_transformer::data::RegionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = vec![
        BoundingBox::new(0.1, 0.1, 0.7, 0.7),
        BoundingBox::new(0.75, 0.2, 0.95, 0.5),
        BoundingBox::new(0.2, 0.25, 0.45, 0.5),
    ];
    scene("three", boxes, d_in, &mut rng)
}

#[test]
fn three_layer_kinds_match_scalar_oracle() {
    let d_in = 5;
    let regions = contained_scene(d_in, 1);
    let sg = build_spatial_graph(&regions.boxes, 0.9).unwrap();
    assert_eq!(sg.count(Relation::Parent), 1);
    let masks = masks_of(&sg);
    let cases = [
        (EncoderVariant::Spatial, vec![true, false], [LayerKind::Spatial, LayerKind::Original]),
        (EncoderVariant::MeanNoSpatial, vec![], [LayerKind::Mean, LayerKind::Mean]),
        (EncoderVariant::Original, vec![], [LayerKind::Original, LayerKind::Original]),
    ];
    for (variant, mask, kinds) in cases {
        let cfg = config(2, 6, 2, variant, mask);
        let (store, p) = params(&cfg, d_in, 7);
        let got = encode(&regions, &cfg, 0.9, &store, &p).unwrap().to_rows();
        let mut a = input_embed_oracle(&store, &regions.features.to_rows());
        for (i, kind) in kinds.iter().enumerate() {
            a = encoder_layer(&store, i, *kind, &a, &masks, 2);
        }
        assert!(max_abs_diff(&got, &a) < 1e-10, "{variant:?}");
    }
}

fn input_embed_oracle(store: &ParamStore, f: &Mat) -> Mat {
    common::input_embed(store, f)
}

#[test]
fn input_embed_examples() {
    let cfg = config(1, 4, 2, EncoderVariant::Spatial, vec![]);
    let (mut store, p) = params(&cfg, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = Tensor::uniform(&[3, 4], 1.0, &mut rng);
    let g = Graph::new();
    let b = store.bind(&g);
    let got = g.value(input_embed(&g, &b, &p, g.constant(&f)).unwrap()).to_rows();
    assert!(max_abs_diff(&got, &input_embed_oracle(&store, &f.to_rows())) < 1e-12);
    assert!(input_embed(&g, &b, &p, g.constant(&Tensor::zeros(&[3, 5]))).is_err());

    *store.get_mut(p.embed.w) = Tensor::identity(4);
    *store.get_mut(p.embed.b.unwrap()) = Tensor::zeros(&[4]);
    let g = Graph::new();
    let b = store.bind(&g);
    assert_eq!(g.value(input_embed(&g, &b, &p, g.constant(&f)).unwrap()), f);
    *store.get_mut(p.embed.w) = Tensor::zeros(&[4, 4]);
    let g = Graph::new();
    let b = store.bind(&g);
    assert!(g.value(input_embed(&g, &b, &p, g.constant(&f)).unwrap()).data().iter().all(|&x| x == 0.0));
}

#[test]
fn regions_without_parent_get_exact_zero_from_parent_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let regions = contained_scene(4, 5);
    let sg = build_spatial_graph(&regions.boxes, 0.9).unwrap();
    let g = Graph::new();
    let masks = RelationMasks::new(&g, &sg);
    let q = g.constant(&Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let k = g.constant(&Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let v = g.constant(&Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let out = g.value(masked_attention(&g, q, k, v, Some(masks.get(Relation::Parent))).unwrap());
    for l in 0..3 {
        let has_parent = (0..3).any(|m| sg.get(Relation::Parent, l, m) == 1);
        assert_eq!(out.row(l).iter().all(|&x| x == 0.0), !has_parent);
    }
    let w = image_transformer::encoder::attention_weights(&g, q, k, Some(masks.get(Relation::Neighbor))).unwrap();
    for row in g.value(w).to_rows() {
        assert!(row.iter().sum::<f64>() <= 1.0 + 1e-9);
    }
}

#[test]
fn single_region_reduces_to_original_layer() {
    let cfg = config(1, 4, 2, EncoderVariant::Spatial, vec![]);
    let (store, p) = params(&cfg, 4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = Graph::new();
    let b = store.bind(&g);
    let a = g.constant(&Tensor::uniform(&[1, 4], 1.0, &mut rng));
    let sg = SpatialGraph::all_neighbors(1);
    let masks = RelationMasks::new(&g, &sg);
    let s = g.value(spatial_layer_forward(&g, &b, &p.layers[0], a, &sg, &masks, None).unwrap());
    let o = g.value(original_layer_forward(&g, &b, &p.layers[0], a, None).unwrap());
    assert!(s.max_abs_diff(&o) < 1e-12);
}

#[test]
fn mean_variant_with_shared_branch_weights_is_original() {
    let cfg = config(1, 6, 3, EncoderVariant::MeanNoSpatial, vec![]);
    let (mut store, p) = params(&cfg, 6, 8);
    let l = &p.layers[0];
    for ids in [l.w_k, l.w_v, l.w_o] {
        let shared = store.get(ids[1]).clone();
        *store.get_mut(ids[0]) = shared.clone();
        *store.get_mut(ids[2]) = shared;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Graph::new();
    let b = store.bind(&g);
    let a = g.constant(&Tensor::uniform(&[4, 6], 1.0, &mut rng));
    let mean = g.value(no_spatial_layer_forward(&g, &b, l, a, None).unwrap());
    let orig = g.value(original_layer_forward(&g, &b, l, a, None).unwrap());
    assert!(mean.max_abs_diff(&orig) < 1e-12);

    // zero attention weights leave Norm(A) as the residual input
    for ids in [l.w_o] {
        for id in ids {
            *store.get_mut(id) = Tensor::zeros(&[6, 6]);
        }
    }
    let g = Graph::new();
    let b = store.bind(&g);
    let a_t = Tensor::uniform(&[4, 6], 1.0, &mut rng);
    let out = g.value(no_spatial_layer_forward(&g, &b, l, g.constant(&a_t), None).unwrap()).to_rows();
    let masks = [vec![vec![1.0; 4]; 4], vec![vec![1.0; 4]; 4], vec![vec![1.0; 4]; 4]];
    assert!(max_abs_diff(&out, &encoder_layer(&store, 0, LayerKind::Mean, &a_t.to_rows(), &masks, 3)) < 1e-12);
}

#[test]
fn branch_mass_trace_per_layer() {
    let cfg = config(2, 4, 2, EncoderVariant::Spatial, vec![true, false]);
    let (store, p) = params(&cfg, 5, 9);
    let regions = contained_scene(5, 9);
    let sg = build_spatial_graph(&regions.boxes, 0.9).unwrap();
    let g = Graph::new();
    let b = store.bind(&g);
    let mut trace = Vec::new();
    encode_graph(&g, &b, &p, &cfg, g.constant(&regions.features), &sg, Some(&mut trace)).unwrap();
    assert_eq!(trace.len(), 2);
    assert!(trace[0].iter().all(|m| (0.0..=1.0 + 1e-9).contains(m)));
    assert!(trace[1][0].is_nan() && trace[1][2].is_nan());
    assert!((trace[1][1] - 1.0).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_containment_spatial_equals_original(seed in any::<u64>(), n in 1usize..12) {
        let cfg = config(1, 8, 2, EncoderVariant::Spatial, vec![]);
        let (store, p) = params(&cfg, 8, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let boxes = disjoint_boxes(n, &mut rng);
        let sg = build_spatial_graph(&boxes, 0.9).unwrap();
        prop_assert_eq!(sg.count(Relation::Parent), 0);
        let g = Graph::new();
        let b = store.bind(&g);
        let masks = RelationMasks::new(&g, &sg);
        let a = g.constant(&Tensor::uniform(&[n, 8], 1.0, &mut rng));
        let s = g.value(spatial_layer_forward(&g, &b, &p.layers[0], a, &sg, &masks, None).unwrap());
        let o = g.value(original_layer_forward(&g, &b, &p.layers[0], a, None).unwrap());
        prop_assert!(s.max_abs_diff(&o) < 1e-6);
    }

    #[test]
    fn encoder_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..10, variant in 0usize..3) {
        let v = [EncoderVariant::Spatial, EncoderVariant::Original, EncoderVariant::MeanNoSpatial][variant];
        let cfg = config(2, 8, 4, v, vec![]);
        let (store, p) = params(&cfg, 5, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let regions = scene("s", nested_scene(n, &mut rng), 5, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let a = encode(&regions, &cfg, 0.9, &store, &p).unwrap();
        let b = encode(&regions.permuted(&perm), &cfg, 0.9, &store, &p).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                prop_assert!((b.at(i, j) - a.at(src, j)).abs() < 1e-9);
            }
        }
        prop_assert!(a.is_finite());
    }
}
