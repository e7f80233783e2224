//! Central finite-difference verification of reverse-mode gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::layers::{glu_fuse, lstm_cell, GluParams, LstmParams};
use super::params::{Bound, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Negative control: perturbs one analytic entry before comparing.
    pub corrupt: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: FD_STEP,
            tolerance: REL_TOLERANCE,
            corrupt: false,
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` over the
/// parameters of `store` against central differences, entry by entry.
pub fn check_store<F>(name: &str, store: &ParamStore, opts: CheckOptions, f: F) -> Result<CheckResult>
where
    F: Fn(&Graph, &Bound) -> Result<Var>,
{
    let g = Graph::new();
    let bound = store.bind(&g);
    let loss = f(&g, &bound)?;
    let grads = g.backward(loss)?;
    let mut analytic = store.collect_grads(&bound, &grads);
    if opts.corrupt {
        if let Some(first) = analytic.iter_mut().find(|a| !a.is_empty()) {
            first[0] += 1.0 + first[0].abs();
        }
    }

    let eval = |s: &ParamStore| -> Result<f64> {
        let g = Graph::new();
        let bound = s.bind(&g);
        Ok(g.value(f(&g, &bound)?).item())
    };

    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for id in store.ids() {
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            work.get_mut(id).data_mut()[k] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[id.index()][k], numeric));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        entries,
        max_rel_error: worst,
        passed: worst < opts.tolerance,
    })
}

/// Every input of `f` is treated as a parameter.
pub fn check_fn<F>(name: &str, inputs: &[Tensor], opts: CheckOptions, f: F) -> Result<CheckResult>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t.clone()))
        .collect();
    check_store(name, &store, opts, |g, b| {
        let vars: Vec<Var> = ids.iter().map(|&id| b[id]).collect();
        f(g, &vars)
    })
}

/// Reduces an arbitrary output to a scalar through fixed random weights so
/// that no gradient entry is trivially constant.
fn probe(g: &Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(out);
    let w = g.constant(&Tensor::uniform(&shape, 1.0, &mut rng));
    Ok(g.sum(g.mul(out, w)?))
}

/// Finite-difference checks of every graph primitive and composite block.
pub fn primitive_suite(seed: u64, opts: CheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| Tensor::uniform(shape, 1.0, &mut rng);
    let a34 = r(&[3, 4]);
    let b45 = r(&[4, 5]);
    let b54 = r(&[5, 4]);
    let a34b = r(&[3, 4]);
    let v4 = r(&[4]);
    let c32 = r(&[3, 2]);
    let pos = a34.map(|x| x.abs() + 0.5);
    let mut out = Vec::new();

    macro_rules! check {
        ($name:expr, [$($t:expr),*], |$g:ident, $v:ident| $body:expr) => {{
            let s = seed.wrapping_add(out.len() as u64 + 1);
            out.push(check_fn($name, &[$($t.clone()),*], opts, |$g, $v| {
                let y = $body;
                probe($g, y, s)
            })?);
        }};
    }

    check!("matmul", [a34, b45], |g, v| g.matmul(v[0], v[1])?);
    check!("matmul_t", [a34, b54], |g, v| g.matmul_t(v[0], v[1])?);
    check!("add", [a34, a34b], |g, v| g.add(v[0], v[1])?);
    check!("sub", [a34, a34b], |g, v| g.sub(v[0], v[1])?);
    check!("mul", [a34, a34b], |g, v| g.mul(v[0], v[1])?);
    check!("add_row", [a34, v4], |g, v| g.add_row(v[0], v[1])?);
    check!("scale", [a34], |g, v| g.scale(v[0], -1.7));
    check!("softmax_rows", [a34], |g, v| g.softmax_rows(v[0]));
    check!("log_softmax_rows", [a34], |g, v| g.log_softmax_rows(v[0]));
    check!("layer_norm", [a34, v4, v4.map(|x| x * 0.3)], |g, v| g
        .layer_norm(v[0], v[1], v[2])?);
    check!("sigmoid", [a34], |g, v| g.sigmoid(v[0]));
    check!("tanh", [a34], |g, v| g.tanh(v[0]));
    check!("gelu", [a34], |g, v| g.gelu(v[0]));
    check!("ln", [pos], |g, v| g.ln(v[0]));
    check!("concat_cols", [a34, c32], |g, v| g.concat_cols(&[v[0], v[1]])?);
    check!("concat_rows", [a34, a34b], |g, v| g.concat_rows(&[v[0], v[1]])?);
    check!("slice_cols", [a34], |g, v| g.slice_cols(v[0], 1, 2)?);
    check!("select_rows", [a34], |g, v| g.select_rows(v[0], &[2, 0, 2])?);
    check!("mean_rows", [a34], |g, v| g.mean_rows(v[0]));
    check!("pick", [a34], |g, v| g.pick(v[0], &[(0, 1), (2, 3), (0, 1)])?);

    let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut store = ParamStore::new();
    let lstm = LstmParams::new(&mut store, "lstm", 3, 4, &mut prng);
    let x = store.add("x", Tensor::uniform(&[1, 3], 1.0, &mut prng));
    let h = store.add("h", Tensor::uniform(&[1, 4], 1.0, &mut prng));
    let m = store.add("m", Tensor::uniform(&[1, 4], 1.0, &mut prng));
    out.push(check_store("lstm_cell", &store, opts, |g, b| {
        let (h1, m1) = lstm_cell(g, b, &lstm, b[x], b[h], b[m])?;
        let joint = g.concat_cols(&[h1, m1])?;
        probe(g, joint, seed ^ 1)
    })?);

    let mut store = ParamStore::new();
    let glu = GluParams::new(&mut store, "glu", 4, 4, 4, &mut prng);
    let q = store.add("q", Tensor::uniform(&[1, 4], 1.0, &mut prng));
    let val = store.add("v", Tensor::uniform(&[1, 4], 1.0, &mut prng));
    out.push(check_store("glu_fuse", &store, opts, |g, b| {
        let y = glu_fuse(g, b, &glu, b[q], b[val])?;
        probe(g, y, seed ^ 2)
    })?);

    Ok(out)
}
