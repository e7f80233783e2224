//! Parent / neighbor / child adjacency between regions from box overlap.
//!
//! For an ordered pair `(l, m)` let `r_l = |l ∩ m| / |l|` and
//! `r_m = |l ∩ m| / |m|`. Region `m` is a parent of `l` when `r_l ≥ ε` and
//! `r_l > r_m`; the child matrix is the transpose of the parent matrix and
//! every remaining pair (including the diagonal) is a neighbor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_EPSILON: f64 = 0.9;

/// Axis-aligned box in normalised image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox { x1, y1, x2, y2 }
    }

    pub fn from_array([x1, y1, x2, y2]: [f64; 4]) -> Self {
        Self::new(x1, y1, x2, y2)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Checks finiteness, ordering and the unit square. The error carries
    /// only the reason; callers attach scene and index.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let c = self.to_array();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(format!("non-finite coordinate in {c:?}"));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(format!("degenerate or inverted box {c:?} (need x1 < x2, y1 < y2)"));
        }
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("coordinates {c:?} outside [0, 1]"));
        }
        Ok(())
    }
}

/// Three mutually exclusive binary relation matrices over `n` regions,
/// stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGraph {
    pub n: usize,
    pub epsilon: f64,
    pub omega_p: Vec<u8>,
    pub omega_n: Vec<u8>,
    pub omega_c: Vec<u8>,
}

/// Relation branches in the order the encoder consumes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Parent,
    Neighbor,
    Child,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Parent, Relation::Neighbor, Relation::Child];

    pub fn index(self) -> usize {
        match self {
            Relation::Parent => 0,
            Relation::Neighbor => 1,
            Relation::Child => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Parent => "parent",
            Relation::Neighbor => "neighbor",
            Relation::Child => "child",
        }
    }
}

impl SpatialGraph {
    /// All pairs are neighbors; the layout an unwidened transformer sees.
    pub fn all_neighbors(n: usize) -> Self {
        SpatialGraph {
            n,
            epsilon: DEFAULT_EPSILON,
            omega_p: vec![0; n * n],
            omega_n: vec![1; n * n],
            omega_c: vec![0; n * n],
        }
    }

    pub fn matrix(&self, rel: Relation) -> &[u8] {
        match rel {
            Relation::Parent => &self.omega_p,
            Relation::Neighbor => &self.omega_n,
            Relation::Child => &self.omega_c,
        }
    }

    pub fn get(&self, rel: Relation, l: usize, m: usize) -> u8 {
        self.matrix(rel)[l * self.n + m]
    }

    /// The relation matrix as an `n×n` tensor of zeros and ones.
    pub fn mask(&self, rel: Relation) -> Tensor {
        let data = self.matrix(rel).iter().map(|&b| f64::from(b)).collect();
        Tensor::new(vec![self.n, self.n], data).expect("n×n relation matrix")
    }

    pub fn count(&self, rel: Relation) -> usize {
        self.matrix(rel).iter().map(|&b| usize::from(b)).sum()
    }

    /// `(child, parent)` index pairs, row-major.
    pub fn containments(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        (0..n * n)
            .filter(|&k| self.omega_p[k] == 1)
            .map(|k| (k / n, k % n))
            .collect()
    }

    /// Reorders regions: new region `i` is old region `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let remap = |src: &[u8]| {
            let mut out = vec![0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = src[perm[i] * n + perm[j]];
                }
            }
            out
        };
        SpatialGraph {
            n,
            epsilon: self.epsilon,
            omega_p: remap(&self.omega_p),
            omega_n: remap(&self.omega_n),
            omega_c: remap(&self.omega_c),
        }
    }
}

/// Classifies every ordered pair of `boxes`. Boxes must be valid.
pub fn build_spatial_graph(boxes: &[BoundingBox], epsilon: f64) -> Result<SpatialGraph> {
    let n = boxes.len();
    if n == 0 {
        return Err(Error::Contract("spatial graph over zero regions".into()));
    }
    if !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be finite, got {epsilon}")));
    }
    for (index, b) in boxes.iter().enumerate() {
        b.validate().map_err(|reason| Error::InvalidBox {
            scene: "<unnamed>".into(),
            index,
            reason,
        })?;
    }
    let areas: Vec<f64> = boxes.iter().map(BoundingBox::area).collect();
    let mut omega_p = vec![0u8; n * n];
    for l in 0..n {
        for m in 0..n {
            if l == m {
                continue;
            }
            let inter = boxes[l].intersection_area(&boxes[m]);
            let covered = inter / areas[l];
            if covered >= epsilon && covered > inter / areas[m] {
                omega_p[l * n + m] = 1;
            }
        }
    }
    let mut omega_c = vec![0u8; n * n];
    let mut omega_n = vec![0u8; n * n];
    for l in 0..n {
        for m in 0..n {
            omega_c[l * n + m] = omega_p[m * n + l];
        }
    }
    for k in 0..n * n {
        omega_n[k] = 1 - omega_p[k] - omega_c[k];
    }
    Ok(SpatialGraph {
        n,
        epsilon,
        omega_p,
        omega_n,
        omega_c,
    })
}

/// True iff every entry is binary, each pair belongs to exactly one
/// relation, the child matrix is the parent transpose and the diagonal is
/// neighbor.
pub fn validate_partition(g: &SpatialGraph) -> bool {
    let n = g.n;
    let len = n * n;
    if g.omega_p.len() != len || g.omega_n.len() != len || g.omega_c.len() != len {
        return false;
    }
    for l in 0..n {
        if g.omega_n[l * n + l] != 1 {
            return false;
        }
        for m in 0..n {
            let k = l * n + m;
            let (p, nb, c) = (g.omega_p[k], g.omega_n[k], g.omega_c[k]);
            if p > 1 || nb > 1 || c > 1 || p + nb + c != 1 {
                return false;
            }
            if c != g.omega_p[m * n + l] {
                return false;
            }
        }
    }
    true
}
