//! Straight-line scalar re-implementations used as oracles, plus scene
//! generators shared by the integration tests.

#![allow(dead_code)]

use image_transformer::data::RegionSet;
use image_transformer::numerics::{ParamStore, Tensor};
use image_transformer::spatial_graph::BoundingBox;
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn param(store: &ParamStore, name: &str) -> Mat {
    let t = store.get(store.find(name).unwrap_or_else(|| panic!("no parameter {name}")));
    if t.shape().len() == 1 {
        vec![t.data().to_vec()]
    } else {
        t.to_rows()
    }
}

pub fn vector(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(store.find(name).unwrap()).data().to_vec()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn vm(v: &[f64], b: &Mat) -> Vec<f64> {
    mm(&vec![v.to_vec()], b).remove(0)
}

pub fn add_vec(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn layer_norm(row: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d;
    row.iter()
        .enumerate()
        .map(|(j, x)| (x - mean) / (var + 1e-5).sqrt() * gain[j] + bias[j])
        .collect()
}

/// One head-split attention: per head `softmax(q kᵀ/√d) ⊙ mask · v`,
/// concatenated, then times `w_o`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: Option<&Mat>, n_heads: usize, w_o: &Mat) -> Mat {
    let n_q = q.len();
    let n_k = k.len();
    let d = q[0].len();
    let w = d / n_heads;
    let mut joined = vec![vec![0.0; d]; n_q];
    for h in 0..n_heads {
        for l in 0..n_q {
            let scores: Vec<f64> = (0..n_k)
                .map(|m| (0..w).map(|t| q[l][h * w + t] * k[m][h * w + t]).sum::<f64>() / (w as f64).sqrt())
                .collect();
            let mut a = softmax(&scores);
            if let Some(mask) = mask {
                for m in 0..n_k {
                    a[m] *= mask[l][m];
                }
            }
            for t in 0..w {
                joined[l][h * w + t] = (0..n_k).map(|m| a[m] * v[m][h * w + t]).sum();
            }
        }
    }
    mm(&joined, w_o)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayerKind {
    Spatial,
    Original,
    Mean,
}

/// Scalar encoder layer `i` read from parameter names.
pub fn encoder_layer(store: &ParamStore, i: usize, kind: LayerKind, a: &Mat, masks: &[Mat; 3], n_heads: usize) -> Mat {
    let pre = format!("enc.layer{i}");
    let q = mm(a, &param(store, &format!("{pre}.w_q")));
    let names = ["parent", "neighbor", "child"];
    let d = a[0].len();
    let mut attended = vec![vec![0.0; d]; a.len()];
    for (b, name) in names.iter().enumerate() {
        if kind == LayerKind::Original && b != 1 {
            continue;
        }
        let k = mm(a, &param(store, &format!("{pre}.{name}.w_k")));
        let v = mm(a, &param(store, &format!("{pre}.{name}.w_v")));
        let w_o = param(store, &format!("{pre}.{name}.w_o"));
        let mask = (kind == LayerKind::Spatial).then_some(&masks[b]);
        let out = attention(&q, &k, &v, mask, n_heads, &w_o);
        let s = if kind == LayerKind::Mean { 1.0 / 3.0 } else { 1.0 };
        for l in 0..a.len() {
            for j in 0..d {
                attended[l][j] += s * out[l][j];
            }
        }
    }
    let (g1, b1) = (vector(store, &format!("{pre}.norm1.gain")), vector(store, &format!("{pre}.norm1.bias")));
    let (g2, b2) = (vector(store, &format!("{pre}.norm2.gain")), vector(store, &format!("{pre}.norm2.bias")));
    let w_in = param(store, &format!("{pre}.ff_in.w"));
    let b_in = vector(store, &format!("{pre}.ff_in.b"));
    let w_out = param(store, &format!("{pre}.ff_out.w"));
    let b_out = vector(store, &format!("{pre}.ff_out.b"));
    a.iter()
        .zip(&attended)
        .map(|(row, att)| {
            let a_m = layer_norm(&add_vec(row, att), &g1, &b1);
            let hidden: Vec<f64> = add_vec(&vm(&a_m, &w_in), &b_in).into_iter().map(gelu).collect();
            let ff = add_vec(&vm(&hidden, &w_out), &b_out);
            layer_norm(&add_vec(&a_m, &ff), &g2, &b2)
        })
        .collect()
}

pub fn input_embed(store: &ParamStore, features: &Mat) -> Mat {
    let b = vector(store, "enc.embed.b");
    mm(features, &param(store, "enc.embed.w"))
        .into_iter()
        .map(|r| add_vec(&r, &b))
        .collect()
}

/// Eq-style direct classification of one ordered pair from raw coordinates.
pub fn naive_parent(a: [f64; 4], b: [f64; 4], eps: f64) -> bool {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    inter / area_a >= eps && inter / area_a > inter / area_b
}

/// Naive relation matrices `[parent, neighbor, child]`.
pub fn naive_masks(boxes: &[BoundingBox], eps: f64) -> [Mat; 3] {
    let n = boxes.len();
    let raw: Vec<[f64; 4]> = boxes.iter().map(|b| b.to_array()).collect();
    let mut p = vec![vec![0.0; n]; n];
    let mut c = vec![vec![0.0; n]; n];
    let mut nb = vec![vec![0.0; n]; n];
    for l in 0..n {
        for m in 0..n {
            let lm = l != m && naive_parent(raw[l], raw[m], eps);
            let ml = l != m && naive_parent(raw[m], raw[l], eps);
            p[l][m] = f64::from(u8::from(lm));
            c[l][m] = f64::from(u8::from(ml));
            nb[l][m] = f64::from(u8::from(!lm && !ml));
        }
    }
    [p, nb, c]
}

pub fn random_box<R: Rng>(rng: &mut R) -> BoundingBox {
    let w = rng.gen_range(0.02..0.9);
    let h = rng.gen_range(0.02..0.9);
    let x = rng.gen_range(0.0..1.0 - w);
    let y = rng.gen_range(0.0..1.0 - h);
    BoundingBox::new(x, y, x + w, y + h)
}

/// Random boxes where roughly a third sit inside an earlier box.
pub fn nested_scene<R: Rng>(n: usize, rng: &mut R) -> Vec<BoundingBox> {
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
    for _ in 0..n {
        if !boxes.is_empty() && rng.gen_bool(0.35) {
            let outer = boxes[rng.gen_range(0..boxes.len())].to_array();
            let (w, h) = (outer[2] - outer[0], outer[3] - outer[1]);
            let fw = rng.gen_range(0.2..0.95);
            let fh = rng.gen_range(0.2..0.95);
            let x = outer[0] + rng.gen_range(0.0..1.0 - fw) * w;
            let y = outer[1] + rng.gen_range(0.0..1.0 - fh) * h;
            boxes.push(BoundingBox::new(x, y, (x + fw * w).min(outer[2]), (y + fh * h).min(outer[3])));
        } else {
            boxes.push(random_box(rng));
        }
    }
    boxes
}

/// Boxes in disjoint horizontal strips, so no pair overlaps.
pub fn disjoint_boxes<R: Rng>(n: usize, rng: &mut R) -> Vec<BoundingBox> {
    let strip = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let x1 = i as f64 * strip + rng.gen_range(0.0..0.2) * strip;
            let x2 = (i + 1) as f64 * strip - rng.gen_range(0.0..0.2) * strip;
            let y1 = rng.gen_range(0.0..0.4);
            let y2 = rng.gen_range(0.6..1.0);
            BoundingBox::new(x1, y1, x2, y2)
        })
        .collect()
}

pub fn scene<R: Rng>(id: &str, boxes: Vec<BoundingBox>, d_in: usize, rng: &mut R) -> RegionSet {
    let n = boxes.len();
    RegionSet::new(id, boxes, Tensor::uniform(&[n, d_in], 1.0, rng)).unwrap()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
