//! Relational graph network over news graphs, with an exact backward pass.
//!
//! Node features are row vectors; every linear map is `x · W`. One layer:
//!
//! ```text
//! u  = X Θs + Σ_r A_r X Θr          A_r row-normalised symmetric adjacency
//! a  = σ([u, X] W_A + b_A)           gated variant only
//! X' = tanh(u) ⊙ a + X ⊙ (1 − a)     gated
//! X' = LeakyReLU(u)                  rgcn, gcn_homogeneous
//! ```
//!
//! The graph vector is the mean of the final paragraph rows, followed by a
//! linear softmax classifier.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::newsgraph::{batch_graphs, GraphBatch, NewsGraph};
use crate::util::{derive_seed, Rng};

pub const NUM_RELATIONS: usize = 3;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node index {index} out of range for {nodes} nodes")]
    NodeIndex { index: usize, nodes: usize },
    #[error("graph `{0}` has no paragraph nodes")]
    NoParagraphs(String),
    #[error("label {label} of graph {graph} is not in 0..{classes}")]
    Label { graph: usize, label: usize, classes: usize },
    #[error("graph {0} has no label")]
    MissingLabel(usize),
    #[error("invalid gnn config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] crate::newsgraph::GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GnnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    GatedRgcn,
    Rgcn,
    GcnHomogeneous,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::GatedRgcn, Variant::Rgcn, Variant::GcnHomogeneous];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GatedRgcn => "gated_rgcn",
            Variant::Rgcn => "rgcn",
            Variant::GcnHomogeneous => "gcn_homogeneous",
        }
    }

    /// Number of relation-specific transforms per layer.
    pub fn relation_weights(self) -> usize {
        match self {
            Variant::GcnHomogeneous => 1,
            _ => NUM_RELATIONS,
        }
    }

    fn code(self) -> u32 {
        self as u32
    }

    fn from_code(c: u32) -> Option<Self> {
        Variant::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().to_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == key)
            .ok_or_else(|| format!("unknown variant `{s}` (expected gated_rgcn|rgcn|gcn_homogeneous)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden: usize,
    pub classes: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig { variant: Variant::GatedRgcn, layers: 2, hidden: 512, classes: 2, leaky_slope: 0.01, dropout: 0.5 }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GnnError::Config(m.to_string()));
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.hidden == 0 {
            return bad("hidden must be >= 1");
        }
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return bad("leaky_slope must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub theta_self: Array2<f64>,
    pub theta_rel: Vec<Array2<f64>>,
    /// `2h × h`; rows `0..h` act on `u`, rows `h..2h` on the previous state.
    pub gate_w: Option<Array2<f64>>,
    pub gate_b: Option<Array1<f64>>,
}

/// Model weights. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_s: Array2<f64>,
    pub b_s: Array1<f64>,
    pub w_e: Array2<f64>,
    pub b_e: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
}

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(config: &GnnConfig, text_dim: usize, entity_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "gnn_init"));
        let h = config.hidden;
        let w_s = xavier(&mut rng, text_dim, h);
        let w_e = xavier(&mut rng, entity_dim, h);
        let layers = (0..config.layers)
            .map(|_| {
                let theta_self = xavier(&mut rng, h, h);
                let theta_rel = (0..config.variant.relation_weights()).map(|_| xavier(&mut rng, h, h)).collect();
                let gated = config.variant == Variant::GatedRgcn;
                LayerParams {
                    theta_self,
                    theta_rel,
                    gate_w: gated.then(|| xavier(&mut rng, 2 * h, h)),
                    gate_b: gated.then(|| Array1::zeros(h)),
                }
            })
            .collect();
        let w_o = xavier(&mut rng, h, config.classes);
        Ok(ModelParams {
            w_s,
            b_s: Array1::zeros(h),
            w_e,
            b_e: Array1::zeros(h),
            layers,
            w_o,
            b_o: Array1::zeros(config.classes),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn text_dim(&self) -> usize {
        self.w_s.nrows()
    }

    pub fn entity_dim(&self) -> usize {
        self.w_e.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_s.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w_o.ncols()
    }

    /// Tensor names in declaration order, matching [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["w_s".to_string(), "b_s".into(), "w_e".into(), "b_e".into()];
        for (l, layer) in self.layers.iter().enumerate() {
            names.push(format!("layer{l}.theta_self"));
            names.extend((0..layer.theta_rel.len()).map(|r| format!("layer{l}.theta_rel{r}")));
            if layer.gate_w.is_some() {
                names.push(format!("layer{l}.gate_w"));
                names.push(format!("layer{l}.gate_b"));
            }
        }
        names.push("w_o".into());
        names.push("b_o".into());
        names
    }

    /// Flat row-major views of every tensor in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        fn flat2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn flat1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = vec![flat2(&self.w_s), flat1(&self.b_s), flat2(&self.w_e), flat1(&self.b_e)];
        for layer in &self.layers {
            out.push(flat2(&layer.theta_self));
            out.extend(layer.theta_rel.iter().map(flat2));
            if let (Some(w), Some(b)) = (&layer.gate_w, &layer.gate_b) {
                out.push(flat2(w));
                out.push(flat1(b));
            }
        }
        out.push(flat2(&self.w_o));
        out.push(flat1(&self.b_o));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn flat2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn flat1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = vec![flat2(&mut self.w_s), flat1(&mut self.b_s), flat2(&mut self.w_e), flat1(&mut self.b_e)];
        for layer in &mut self.layers {
            out.push(flat2(&mut layer.theta_self));
            out.extend(layer.theta_rel.iter_mut().map(flat2));
            if let (Some(w), Some(b)) = (&mut layer.gate_w, &mut layer.gate_b) {
                out.push(flat2(w));
                out.push(flat1(b));
            }
        }
        out.push(flat2(&mut self.w_o));
        out.push(flat1(&mut self.b_o));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Σ w² over every parameter, biases included.
    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().flat_map(|t| t.iter()).all(|w| w.is_finite())
    }

    /// Checks that shapes agree with `config` and the given input widths.
    pub fn check(&self, config: &GnnConfig, text_dim: usize, entity_dim: usize) -> Result<()> {
        let h = config.hidden;
        let bad = |what: &str| Err(GnnError::Shape(what.to_string()));
        if self.w_s.dim() != (text_dim, h) || self.b_s.len() != h {
            return bad("text projection");
        }
        if self.w_e.dim() != (entity_dim, h) || self.b_e.len() != h {
            return bad("entity projection");
        }
        if self.layers.len() != config.layers {
            return bad("layer count");
        }
        let gated = config.variant == Variant::GatedRgcn;
        for layer in &self.layers {
            if layer.theta_self.dim() != (h, h)
                || layer.theta_rel.len() != config.variant.relation_weights()
                || layer.theta_rel.iter().any(|t| t.dim() != (h, h))
            {
                return bad("layer transform");
            }
            match (&layer.gate_w, &layer.gate_b) {
                (Some(w), Some(b)) if gated && w.dim() == (2 * h, h) && b.len() == h => {}
                (None, None) if !gated => {}
                _ => return bad("gate parameters"),
            }
        }
        if self.w_o.dim() != (h, config.classes) || self.b_o.len() != config.classes {
            return bad("output layer");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Csr {
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }
}

/// Symmetrised, deduplicated neighbourhoods per relation, with mean weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationalAdjacency {
    nodes: usize,
    relations: Vec<Csr>,
}

impl RelationalAdjacency {
    /// One neighbourhood per edge list, or a single merged one if `merge`.
    pub fn new(nodes: usize, edges: &[Vec<(usize, usize)>], merge: bool) -> Result<Self> {
        let build = |lists: &[&Vec<(usize, usize)>]| -> Result<Csr> {
            let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); nodes];
            for &(s, d) in lists.iter().flat_map(|l| l.iter()) {
                for idx in [s, d] {
                    if idx >= nodes {
                        return Err(GnnError::NodeIndex { index: idx, nodes });
                    }
                }
                nbrs[s].push(d);
                nbrs[d].push(s);
            }
            let mut indptr = vec![0];
            let mut indices = Vec::new();
            for mut n in nbrs {
                n.sort_unstable();
                n.dedup();
                indices.extend(n);
                indptr.push(indices.len());
            }
            Ok(Csr { indptr, indices })
        };
        let relations = if merge {
            vec![build(&edges.iter().collect::<Vec<_>>())?]
        } else {
            edges.iter().map(|l| build(&[l])).collect::<Result<_>>()?
        };
        Ok(RelationalAdjacency { nodes, relations })
    }

    pub fn for_batch(batch: &GraphBatch, variant: Variant) -> Result<Self> {
        Self::new(batch.node_count(), &batch.edges, variant == Variant::GcnHomogeneous)
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// Deduplicated neighbours of `i` under relation `r`.
    pub fn neighbors(&self, r: usize, i: usize) -> &[usize] {
        self.relations[r].neighbors(i)
    }

    /// `A_r · X`: mean of neighbour rows, zero for isolated nodes.
    pub fn aggregate(&self, r: usize, x: &Array2<f64>) -> Array2<f64> {
        let csr = &self.relations[r];
        let mut out = Array2::zeros(x.dim());
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let nb = csr.neighbors(i);
            if nb.is_empty() {
                continue;
            }
            for &j in nb {
                row += &x.row(j);
            }
            row /= nb.len() as f64;
        }
        out
    }

    /// `A_rᵀ · G`.
    pub fn aggregate_transpose(&self, r: usize, g: &Array2<f64>) -> Array2<f64> {
        let csr = &self.relations[r];
        let mut out = Array2::zeros(g.dim());
        for i in 0..self.nodes {
            let nb = csr.neighbors(i);
            if nb.is_empty() {
                continue;
            }
            let w = 1.0 / nb.len() as f64;
            let gi = g.row(i);
            for &j in nb {
                out.row_mut(j).scaled_add(w, &gi);
            }
        }
        out
    }
}

fn leaky(z: &Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { slope * v })
}

fn leaky_backward(z: &Array2<f64>, grad: &Array2<f64>, slope: f64) -> Array2<f64> {
    let mut out = grad.clone();
    Zip::from(&mut out).and(z).for_each(|g, &v| {
        if v <= 0.0 {
            *g *= slope;
        }
    });
    out
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Values a layer keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub x_prev: Array2<f64>,
    /// `A_r · X` per relation.
    pub aggregated: Vec<Array2<f64>>,
    pub u: Array2<f64>,
    /// Gate activations (gated variant only).
    pub gate: Option<Array2<f64>>,
}

pub fn layer_forward(
    x_prev: &Array2<f64>,
    adj: &RelationalAdjacency,
    layer: &LayerParams,
    variant: Variant,
    leaky_slope: f64,
) -> Result<(Array2<f64>, LayerCache)> {
    let h = layer.theta_self.nrows();
    if x_prev.ncols() != h || layer.theta_self.ncols() != h {
        return Err(GnnError::Shape(format!("layer input has width {}, expected {h}", x_prev.ncols())));
    }
    if x_prev.nrows() != adj.node_count() {
        return Err(GnnError::Shape(format!(
            "layer input has {} rows for {} nodes",
            x_prev.nrows(),
            adj.node_count()
        )));
    }
    if adj.relation_count() != layer.theta_rel.len() {
        return Err(GnnError::Shape(format!(
            "{} relations for {} relation transforms",
            adj.relation_count(),
            layer.theta_rel.len()
        )));
    }
    let mut u = x_prev.dot(&layer.theta_self);
    let mut aggregated = Vec::with_capacity(adj.relation_count());
    for (r, theta) in layer.theta_rel.iter().enumerate() {
        let ax = adj.aggregate(r, x_prev);
        u += &ax.dot(theta);
        aggregated.push(ax);
    }
    let (x_next, gate) = match variant {
        Variant::GatedRgcn => {
            let (w, b) = match (&layer.gate_w, &layer.gate_b) {
                (Some(w), Some(b)) if w.dim() == (2 * h, h) && b.len() == h => (w, b),
                _ => return Err(GnnError::Shape("gated layer without gate parameters".into())),
            };
            let mut a = u.dot(&w.slice(s![..h, ..])) + x_prev.dot(&w.slice(s![h.., ..]));
            a += b;
            a.mapv_inplace(sigmoid);
            let mut x = u.mapv(f64::tanh);
            Zip::from(&mut x).and(&a).and(x_prev).for_each(|t, &g, &xp| *t = *t * g + xp * (1.0 - g));
            (x, Some(a))
        }
        Variant::Rgcn | Variant::GcnHomogeneous => (leaky(&u, leaky_slope), None),
    };
    Ok((x_next, LayerCache { x_prev: x_prev.clone(), aggregated, u, gate }))
}

/// Returns `dL/dX_prev` and accumulates parameter gradients into `grad`.
pub fn layer_backward(
    d_next: &Array2<f64>,
    cache: &LayerCache,
    adj: &RelationalAdjacency,
    layer: &LayerParams,
    grad: &mut LayerParams,
    variant: Variant,
    leaky_slope: f64,
) -> Array2<f64> {
    let h = layer.theta_self.nrows();
    let x = &cache.x_prev;
    let (du, mut dx) = match variant {
        Variant::GatedRgcn => {
            let a = cache.gate.as_ref().expect("gated cache");
            let w = layer.gate_w.as_ref().expect("gate weights");
            let t = cache.u.mapv(f64::tanh);
            let mut du = d_next * a;
            Zip::from(&mut du).and(&t).for_each(|du, &t| *du *= 1.0 - t * t);
            let mut dx = d_next * &a.mapv(|a| 1.0 - a);
            let mut dz = d_next * a;
            Zip::from(&mut dz).and(&t).and(a).and(x).for_each(|dz, &t, &a, &xp| *dz *= (t - xp) * (1.0 - a));
            let gw = grad.gate_w.as_mut().expect("gate grad");
            gw.slice_mut(s![..h, ..]).scaled_add(1.0, &cache.u.t().dot(&dz));
            gw.slice_mut(s![h.., ..]).scaled_add(1.0, &x.t().dot(&dz));
            *grad.gate_b.as_mut().expect("gate grad") += &dz.sum_axis(Axis(0));
            du += &dz.dot(&w.slice(s![..h, ..]).t());
            dx += &dz.dot(&w.slice(s![h.., ..]).t());
            (du, dx)
        }
        Variant::Rgcn | Variant::GcnHomogeneous => {
            (leaky_backward(&cache.u, d_next, leaky_slope), Array2::zeros(x.dim()))
        }
    };
    grad.theta_self += &x.t().dot(&du);
    dx += &du.dot(&layer.theta_self.t());
    for (r, theta) in layer.theta_rel.iter().enumerate() {
        grad.theta_rel[r] += &cache.aggregated[r].t().dot(&du);
        dx += &adj.aggregate_transpose(r, &du.dot(&theta.t()));
    }
    dx
}

/// Inverted-dropout mask with entries 0 or 1/(1-p).
fn dropout_mask(rng: &mut Rng, dim: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(dim, || if rng.gen::<f64>() < p { 0.0 } else { keep })
}

struct Projection {
    x0: Array2<f64>,
    z_text: Array2<f64>,
    z_entity: Array2<f64>,
}

fn project(batch: &GraphBatch, params: &ModelParams, slope: f64) -> Result<Projection> {
    if batch.text_attrs.ncols() != params.text_dim() || batch.entity_attrs.ncols() != params.entity_dim() {
        return Err(GnnError::Shape(format!(
            "batch attribute widths ({}, {}) do not match parameters ({}, {})",
            batch.text_attrs.ncols(),
            batch.entity_attrs.ncols(),
            params.text_dim(),
            params.entity_dim()
        )));
    }
    let mut z_text = batch.text_attrs.dot(&params.w_s);
    z_text += &params.b_s;
    let mut z_entity = batch.entity_attrs.dot(&params.w_e);
    z_entity += &params.b_e;
    let mut x0 = Array2::zeros((batch.node_count(), params.hidden()));
    for (row, &n) in batch.text_nodes.iter().enumerate() {
        x0.row_mut(n).assign(&z_text.row(row).mapv(|v| if v > 0.0 { v } else { slope * v }));
    }
    for (row, &n) in batch.entity_nodes.iter().enumerate() {
        x0.row_mut(n).assign(&z_entity.row(row).mapv(|v| if v > 0.0 { v } else { slope * v }));
    }
    Ok(Projection { x0, z_text, z_entity })
}

/// `x^(0)`: projected node features, with dropout when `training`.
pub fn project_initial_features(
    batch: &GraphBatch,
    params: &ModelParams,
    config: &GnnConfig,
    training: bool,
    seed: u64,
) -> Result<Array2<f64>> {
    let mut x0 = project(batch, params, config.leaky_slope)?.x0;
    if training && config.dropout > 0.0 {
        let mut rng = Rng::seed_from_u64(derive_seed(seed, "dropout"));
        x0 *= &dropout_mask(&mut rng, x0.dim(), config.dropout);
    }
    Ok(x0)
}

/// Eval-mode `x^(0)` for a single graph.
pub fn project_graph_features(graph: &NewsGraph, params: &ModelParams, config: &GnnConfig) -> Result<Array2<f64>> {
    project_initial_features(&batch_graphs(&[graph])?, params, config, false, 0)
}

/// Intermediate values from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub z_text: Array2<f64>,
    pub z_entity: Array2<f64>,
    /// Dropout masks for `x^(0..=L)`; `None` when dropout is off.
    pub masks: Vec<Option<Array2<f64>>>,
    /// Post-dropout `x^(0..=L)`.
    pub states: Vec<Array2<f64>>,
    pub layers: Vec<LayerCache>,
    pub adjacency: RelationalAdjacency,
    pub paragraphs: Vec<Vec<usize>>,
    pub text_nodes: Vec<usize>,
    pub entity_nodes: Vec<usize>,
    pub text_attrs: Array2<f64>,
    pub entity_attrs: Array2<f64>,
    pub variant: Variant,
    pub leaky_slope: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub pooled: Array2<f64>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub trace: Option<ForwardTrace>,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.axis_iter(Axis(0)).map(|row| argmax(row.as_slice().expect("row"))).collect()
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

pub fn model_forward(
    batch: &GraphBatch,
    params: &ModelParams,
    config: &GnnConfig,
    training: bool,
    seed: u64,
) -> Result<ForwardOutput> {
    config.validate()?;
    params.check(config, batch.text_dim, batch.entity_dim)?;
    for (g, p) in batch.paragraphs.iter().enumerate() {
        if p.is_empty() {
            return Err(GnnError::NoParagraphs(batch.doc_ids[g].clone()));
        }
    }
    let adjacency = RelationalAdjacency::for_batch(batch, config.variant)?;
    let slope = config.leaky_slope;
    let Projection { x0, z_text, z_entity } = project(batch, params, slope)?;

    let use_dropout = training && config.dropout > 0.0;
    let mut rng = Rng::seed_from_u64(derive_seed(seed, "dropout"));
    let mut masks = Vec::new();
    let mut apply_dropout = |mut x: Array2<f64>, masks: &mut Vec<Option<Array2<f64>>>| {
        if use_dropout {
            let m = dropout_mask(&mut rng, x.dim(), config.dropout);
            x *= &m;
            masks.push(Some(m));
        } else {
            masks.push(None);
        }
        x
    };

    let mut states = vec![apply_dropout(x0, &mut masks)];
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (x, cache) = layer_forward(states.last().expect("x0"), &adjacency, layer, config.variant, slope)?;
        states.push(apply_dropout(x, &mut masks));
        caches.push(cache);
    }

    let last = states.last().expect("final state");
    let mut pooled = Array2::zeros((batch.graph_count(), params.hidden()));
    for (g, paras) in batch.paragraphs.iter().enumerate() {
        let mut row = pooled.row_mut(g);
        for &p in paras {
            row += &last.row(p);
        }
        row /= paras.len() as f64;
    }
    let mut logits = pooled.dot(&params.w_o);
    logits += &params.b_o;
    let probs = softmax_rows(&logits);

    let trace = training.then(|| ForwardTrace {
        z_text,
        z_entity,
        masks,
        states,
        layers: caches,
        adjacency,
        paragraphs: batch.paragraphs.clone(),
        text_nodes: batch.text_nodes.clone(),
        entity_nodes: batch.entity_nodes.clone(),
        text_attrs: batch.text_attrs.clone(),
        entity_attrs: batch.entity_attrs.clone(),
        variant: config.variant,
        leaky_slope: slope,
    });
    Ok(ForwardOutput { pooled, logits, probs, trace })
}

fn check_labels(labels: &[usize], graphs: usize, classes: usize) -> Result<()> {
    if labels.len() != graphs {
        return Err(GnnError::Shape(format!("{} labels for {graphs} graphs", labels.len())));
    }
    for (graph, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(GnnError::Label { graph, label, classes });
        }
    }
    Ok(())
}

/// Summed cross-entropy over the batch, computed from logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.nrows(), logits.ncols())?;
    Ok(logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row.as_slice().expect("row")) - row[y])
        .sum())
}

/// `−Σ ln ŷ_true + λ Σ w²`.
pub fn loss_forward(out: &ForwardOutput, labels: &[usize], params: &ModelParams, lambda: f64) -> Result<f64> {
    Ok(cross_entropy(&out.logits, labels)? + lambda * params.squared_norm())
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    pub text_attrs: Array2<f64>,
    pub entity_attrs: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Exact gradients of [`loss_forward`].
pub fn model_backward(out: &ForwardOutput, labels: &[usize], params: &ModelParams, lambda: f64) -> Result<Gradients> {
    let trace = out
        .trace
        .as_ref()
        .ok_or_else(|| GnnError::Shape("backward needs a training-mode forward trace".into()))?;
    check_labels(labels, out.probs.nrows(), params.classes())?;
    if trace.layers.len() != params.layers.len() || trace.text_attrs.ncols() != params.text_dim() {
        return Err(GnnError::Shape("trace does not match parameters".into()));
    }
    let mut grad = params.zeros_like();
    let slope = trace.leaky_slope;

    let mut dlogits = out.probs.clone();
    for (g, &y) in labels.iter().enumerate() {
        dlogits[[g, y]] -= 1.0;
    }
    grad.w_o += &out.pooled.t().dot(&dlogits);
    grad.b_o += &dlogits.sum_axis(Axis(0));
    let dpooled = dlogits.dot(&params.w_o.t());

    let last = trace.states.last().expect("final state");
    let mut dx = Array2::zeros(last.dim());
    for (g, paras) in trace.paragraphs.iter().enumerate() {
        let share = &dpooled.row(g) / paras.len() as f64;
        for &p in paras {
            dx.row_mut(p).scaled_add(1.0, &share);
        }
    }

    for l in (0..params.layers.len()).rev() {
        if let Some(mask) = &trace.masks[l + 1] {
            dx *= mask;
        }
        dx = layer_backward(
            &dx,
            &trace.layers[l],
            &trace.adjacency,
            &params.layers[l],
            &mut grad.layers[l],
            trace.variant,
            slope,
        );
    }
    if let Some(mask) = &trace.masks[0] {
        dx *= mask;
    }

    let gather = |nodes: &[usize], z: &Array2<f64>| {
        let mut d = Array2::zeros(z.dim());
        for (row, &n) in nodes.iter().enumerate() {
            d.row_mut(row).assign(&dx.row(n));
        }
        leaky_backward(z, &d, slope)
    };
    let dz_text = gather(&trace.text_nodes, &trace.z_text);
    let dz_entity = gather(&trace.entity_nodes, &trace.z_entity);
    grad.w_s += &trace.text_attrs.t().dot(&dz_text);
    grad.b_s += &dz_text.sum_axis(Axis(0));
    grad.w_e += &trace.entity_attrs.t().dot(&dz_entity);
    grad.b_e += &dz_entity.sum_axis(Axis(0));
    let text_attrs = dz_text.dot(&params.w_s.t());
    let entity_attrs = dz_entity.dot(&params.w_e.t());

    if lambda != 0.0 {
        for (g, w) in grad.tensors_mut().into_iter().zip(params.tensors()) {
            g.iter_mut().zip(w).for_each(|(g, w)| *g += 2.0 * lambda * w);
        }
    }
    Ok(Gradients { params: grad, text_attrs, entity_attrs, logits: dlogits })
}

const MAGIC: &[u8; 8] = b"SGNNCKPT";
const VERSION: u32 = 1;

/// Serialises a model.
///
/// Layout (little-endian): the 8-byte magic `SGNNCKPT`; `u32` version (1);
/// `u32` fields variant (0 gated_rgcn, 1 rgcn, 2 gcn_homogeneous), layers,
/// hidden, classes, text_dim, entity_dim; `f64` leaky_slope and dropout;
/// then every tensor of [`ModelParams::tensors`] in order as row-major `f64`.
pub fn write_checkpoint(mut w: impl Write, config: &GnnConfig, params: &ModelParams) -> io::Result<()> {
    w.write_all(MAGIC)?;
    let header = [
        VERSION,
        config.variant.code(),
        config.layers as u32,
        config.hidden as u32,
        config.classes as u32,
        params.text_dim() as u32,
        params.entity_dim() as u32,
    ];
    for v in header {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&config.leaky_slope.to_le_bytes())?;
    w.write_all(&config.dropout.to_le_bytes())?;
    for t in params.tensors() {
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(GnnConfig, ModelParams)> {
    let bad = |m: &str| GnnError::Checkpoint(m.to_string());
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| bad(&e.to_string()))?;
    if buf.len() < 8 + 28 + 16 || &buf[..8] != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(buf[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes"));
    if u32_at(0) != VERSION {
        return Err(bad(&format!("unsupported version {}", u32_at(0))));
    }
    let variant = Variant::from_code(u32_at(1)).ok_or_else(|| bad("unknown variant code"))?;
    let f64_at = |off: usize| f64::from_le_bytes(buf[off..off + 8].try_into().expect("8 bytes"));
    let config = GnnConfig {
        variant,
        layers: u32_at(2) as usize,
        hidden: u32_at(3) as usize,
        classes: u32_at(4) as usize,
        leaky_slope: f64_at(36),
        dropout: f64_at(44),
    };
    config.validate()?;
    let (text_dim, entity_dim) = (u32_at(5) as usize, u32_at(6) as usize);
    let mut params = ModelParams::init(&config, text_dim, entity_dim, 0)?;
    let body = &buf[52..];
    if body.len() != 8 * params.len() {
        return Err(bad(&format!("expected {} parameter bytes, found {}", 8 * params.len(), body.len())));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = values.next().expect("length checked"));
    }
    if !params.is_finite() {
        return Err(bad("non-finite parameter"));
    }
    Ok((config, params))
}

pub fn save_checkpoint(path: &Path, config: &GnnConfig, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, config, params).expect("in-memory write");
    fs::write(path, buf).map_err(|source| GnnError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<(GnnConfig, ModelParams)> {
    let f = fs::File::open(path).map_err(|source| GnnError::Io { path: path.to_path_buf(), source })?;
    read_checkpoint(f)
}
