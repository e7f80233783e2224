//! Region encoder: a stack of widened transformer layers whose three
//! attention branches (parent, neighbor, child) share one query and are
//! hard-masked by the spatial graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::RegionSet;
use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, Linear, ParamId, ParamStore, Tensor, Var};
use crate::spatial_graph::{build_spatial_graph, Relation, SpatialGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Masked branches, summed.
    Spatial,
    /// Single unmasked branch (the neighbor branch's weights).
    Original,
    /// Unmasked branches, averaged.
    MeanNoSpatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub variant: EncoderVariant,
    /// Layers that use `variant`; the rest are original layers. Empty means
    /// every layer.
    #[serde(default)]
    pub spatial_layer_mask: Vec<bool>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 3,
            n_heads: 8,
            d_model: 512,
            d_ff: 2048,
            variant: EncoderVariant::Spatial,
            spatial_layer_mask: Vec::new(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model < 2 || self.d_ff == 0 {
            return Err(Error::Config("d_model must be ≥ 2 and d_ff ≥ 1".into()));
        }
        if !self.spatial_layer_mask.is_empty() && self.spatial_layer_mask.len() != self.n_layers {
            return Err(Error::Config(format!(
                "spatial_layer_mask has {} entries for {} layers",
                self.spatial_layer_mask.len(),
                self.n_layers
            )));
        }
        Ok(())
    }

    /// The effective variant of layer `i`.
    pub fn layer_variant(&self, i: usize) -> EncoderVariant {
        let enabled = self.spatial_layer_mask.get(i).copied().unwrap_or(true);
        if enabled {
            self.variant
        } else {
            EncoderVariant::Original
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub n_heads: usize,
    pub d_model: usize,
    pub w_q: ParamId,
    /// Indexed by [`Relation::index`].
    pub w_k: [ParamId; 3],
    pub w_v: [ParamId; 3],
    pub w_o: [ParamId; 3],
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm1: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embed: Linear,
    pub layers: Vec<EncoderLayerParams>,
}

fn bare<R: Rng + ?Sized>(store: &mut ParamStore, name: String, d: usize, rng: &mut R) -> ParamId {
    store.add(name, crate::numerics::layers::xavier(d, d, rng))
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_in: usize,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        let embed = Linear::new(store, "enc.embed", d_in, d, true, rng);
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let pre = format!("enc.layer{i}");
                let w_q = bare(store, format!("{pre}.w_q"), d, rng);
                let mut branch = |what: &str| {
                    Relation::ALL.map(|r| bare(store, format!("{pre}.{}.{what}", r.name()), d, rng))
                };
                let w_k = branch("w_k");
                let w_v = branch("w_v");
                let w_o = branch("w_o");
                let ff_in = Linear::new(store, &format!("{pre}.ff_in"), d, cfg.d_ff, true, rng);
                let ff_out = Linear::new(store, &format!("{pre}.ff_out"), cfg.d_ff, d, true, rng);
                let mut norm = |k: u8| {
                    (
                        store.add(format!("{pre}.norm{k}.gain"), Tensor::ones(&[d])),
                        store.add(format!("{pre}.norm{k}.bias"), Tensor::zeros(&[d])),
                    )
                };
                let norm1 = norm(1);
                let norm2 = norm(2);
                EncoderLayerParams {
                    n_heads: cfg.n_heads,
                    d_model: d,
                    w_q,
                    w_k,
                    w_v,
                    w_o,
                    ff_in,
                    ff_out,
                    norm1,
                    norm2,
                }
            })
            .collect();
        EncoderParams { embed, layers }
    }
}

/// `Softmax(Q Kᵀ / √d_k)`, optionally Hadamard-masked, times `V`. The
/// masked weights are not renormalised, so a row may carry less than unit
/// mass and an all-zero mask row yields an exact zero output row.
pub fn masked_attention(g: &Graph, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
    let weights = attention_weights(g, q, k, mask)?;
    g.matmul(weights, v)
}

pub fn attention_weights(g: &Graph, q: Var, k: Var, mask: Option<Var>) -> Result<Var> {
    let d_k = g.value(q).cols();
    let scores = g.scale(g.matmul_t(q, k)?, 1.0 / (d_k as f64).sqrt());
    let weights = g.softmax_rows(scores);
    match mask {
        Some(m) => g.mul(weights, m),
        None => Ok(weights),
    }
}

/// Splits the columns of `x` into `n_heads` equal blocks.
pub fn split_heads(g: &Graph, x: Var, n_heads: usize) -> Result<Vec<Var>> {
    let d = g.value(x).cols();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("width {d} does not split into {n_heads} heads")));
    }
    let w = d / n_heads;
    (0..n_heads).map(|h| g.slice_cols(x, h * w, w)).collect()
}

/// `Concat(head_1..head_h) · W_O` over pre-split projections.
pub fn multi_head(
    g: &Graph,
    q_heads: &[Var],
    k_heads: &[Var],
    v_heads: &[Var],
    mask: Option<Var>,
    w_o: Var,
) -> Result<Var> {
    let heads = q_heads
        .iter()
        .zip(k_heads)
        .zip(v_heads)
        .map(|((&q, &k), &v)| masked_attention(g, q, k, v, mask))
        .collect::<Result<Vec<_>>>()?;
    let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    g.matmul(joined, w_o)
}

/// Mean attention mass per relation branch, averaged over heads and rows.
pub type BranchMass = [f64; 3];

/// The three relation masks of a scene as graph constants.
pub struct RelationMasks([Var; 3]);

impl RelationMasks {
    pub fn new(g: &Graph, sg: &SpatialGraph) -> Self {
        RelationMasks(Relation::ALL.map(|r| g.constant(&sg.mask(r))))
    }

    pub fn get(&self, r: Relation) -> Var {
        self.0[r.index()]
    }
}

/// Maps raw region features to model width.
pub fn input_embed(g: &Graph, p: &Bound, params: &EncoderParams, features: Var) -> Result<Var> {
    let (d_in, got) = (params.embed.d_in, g.value(features).cols());
    if d_in != got {
        return Err(Error::Shape {
            op: "input_embed",
            lhs: g.shape(features),
            rhs: vec![d_in],
        });
    }
    params.embed.forward(g, p, features)
}

fn branch_output(
    g: &Graph,
    p: &Bound,
    layer: &EncoderLayerParams,
    a: Var,
    q_heads: &[Var],
    rel: Relation,
    mask: Option<Var>,
    mass: Option<&mut f64>,
) -> Result<Var> {
    let i = rel.index();
    let k_heads = split_heads(g, g.matmul(a, p[layer.w_k[i]])?, layer.n_heads)?;
    let v_heads = split_heads(g, g.matmul(a, p[layer.w_v[i]])?, layer.n_heads)?;
    if let Some(mass) = mass {
        let mut total = 0.0;
        for (&q, &k) in q_heads.iter().zip(&k_heads) {
            let w = g.value(attention_weights(g, q, k, mask)?);
            total += w.data().iter().sum::<f64>() / w.rows() as f64;
        }
        *mass = total / q_heads.len() as f64;
    }
    multi_head(g, q_heads, &k_heads, &v_heads, mask, p[layer.w_o[i]])
}

/// `Norm(A_m + φ(A_m))` with a two-layer GELU feed-forward φ.
fn feed_forward_block(g: &Graph, p: &Bound, layer: &EncoderLayerParams, a_m: Var) -> Result<Var> {
    let hidden = g.gelu(layer.ff_in.forward(g, p, a_m)?);
    let ff = layer.ff_out.forward(g, p, hidden)?;
    g.layer_norm(g.add(a_m, ff)?, p[layer.norm2.0], p[layer.norm2.1])
}

fn check_width(g: &Graph, a: Var, layer: &EncoderLayerParams) -> Result<usize> {
    let (n, d) = g.value(a).dims2();
    if d != layer.d_model {
        return Err(Error::Shape {
            op: "encoder layer",
            lhs: g.shape(a),
            rhs: vec![layer.d_model],
        });
    }
    Ok(n)
}

/// Widened layer: the three masked branches are summed into the residual.
pub fn spatial_layer_forward(
    g: &Graph,
    p: &Bound,
    layer: &EncoderLayerParams,
    a: Var,
    sg: &SpatialGraph,
    masks: &RelationMasks,
    mut mass: Option<&mut BranchMass>,
) -> Result<Var> {
    let n = check_width(g, a, layer)?;
    if sg.n != n {
        return Err(Error::Shape {
            op: "spatial_layer_forward",
            lhs: g.shape(a),
            rhs: vec![sg.n, sg.n],
        });
    }
    let q_heads = split_heads(g, g.matmul(a, p[layer.w_q])?, layer.n_heads)?;
    let mut branches = Vec::with_capacity(3);
    for rel in Relation::ALL {
        let slot = mass.as_deref_mut().map(|m| &mut m[rel.index()]);
        branches.push(branch_output(g, p, layer, a, &q_heads, rel, Some(masks.get(rel)), slot)?);
    }
    let attended = g.sum_all(&branches)?;
    let a_m = g.layer_norm(g.add(a, attended)?, p[layer.norm1.0], p[layer.norm1.1])?;
    feed_forward_block(g, p, layer, a_m)
}

/// Standard transformer layer using the neighbor branch's weights.
pub fn original_layer_forward(
    g: &Graph,
    p: &Bound,
    layer: &EncoderLayerParams,
    a: Var,
    mass: Option<&mut BranchMass>,
) -> Result<Var> {
    check_width(g, a, layer)?;
    let q_heads = split_heads(g, g.matmul(a, p[layer.w_q])?, layer.n_heads)?;
    let slot = mass.map(|m| &mut m[Relation::Neighbor.index()]);
    let attended = branch_output(g, p, layer, a, &q_heads, Relation::Neighbor, None, slot)?;
    let a_m = g.layer_norm(g.add(a, attended)?, p[layer.norm1.0], p[layer.norm1.1])?;
    feed_forward_block(g, p, layer, a_m)
}

/// Ablation: three unmasked branches, averaged.
pub fn no_spatial_layer_forward(
    g: &Graph,
    p: &Bound,
    layer: &EncoderLayerParams,
    a: Var,
    mut mass: Option<&mut BranchMass>,
) -> Result<Var> {
    check_width(g, a, layer)?;
    let q_heads = split_heads(g, g.matmul(a, p[layer.w_q])?, layer.n_heads)?;
    let mut branches = Vec::with_capacity(3);
    for rel in Relation::ALL {
        let slot = mass.as_deref_mut().map(|m| &mut m[rel.index()]);
        branches.push(branch_output(g, p, layer, a, &q_heads, rel, None, slot)?);
    }
    let attended = g.scale(g.sum_all(&branches)?, 1.0 / 3.0);
    let a_m = g.layer_norm(g.add(a, attended)?, p[layer.norm1.0], p[layer.norm1.1])?;
    feed_forward_block(g, p, layer, a_m)
}

/// Embeds features and runs the layer stack; returns `N×d_model`.
pub fn encode_graph(
    g: &Graph,
    p: &Bound,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    features: Var,
    sg: &SpatialGraph,
    mut trace: Option<&mut Vec<BranchMass>>,
) -> Result<Var> {
    let n = g.value(features).rows();
    if sg.n != n {
        return Err(Error::Shape {
            op: "encode",
            lhs: g.shape(features),
            rhs: vec![sg.n],
        });
    }
    let masks = RelationMasks::new(g, sg);
    let mut a = input_embed(g, p, params, features)?;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut mass = [f64::NAN; 3];
        let probe = trace.is_some().then_some(&mut mass);
        a = match cfg.layer_variant(i) {
            EncoderVariant::Spatial => spatial_layer_forward(g, p, layer, a, sg, &masks, probe)?,
            EncoderVariant::Original => original_layer_forward(g, p, layer, a, probe)?,
            EncoderVariant::MeanNoSpatial => no_spatial_layer_forward(g, p, layer, a, probe)?,
        };
        if let Some(t) = trace.as_deref_mut() {
            t.push(mass);
        }
    }
    Ok(a)
}

/// Convenience wrapper: encodes one scene in a fresh graph.
pub fn encode(
    regions: &RegionSet,
    cfg: &EncoderConfig,
    epsilon: f64,
    store: &ParamStore,
    params: &EncoderParams,
) -> Result<Tensor> {
    let sg = build_spatial_graph(&regions.boxes, epsilon)?;
    let g = Graph::new();
    let p = store.bind(&g);
    let features = g.constant(&regions.features);
    let out = encode_graph(&g, &p, params, cfg, features, &sg, None)?;
    Ok(g.value(out))
}
