#![allow(dead_code)]

use rand::{Rng as _, SeedableRng};
use stancegraph::gnn::{loss_forward, model_backward, model_forward, GnnConfig, ModelParams};
use stancegraph::newsgraph::{GraphBatch, NewsGraph, Node, NodeKind};
use stancegraph::util::Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A structurally valid news graph with random attributes and mentions.
pub fn random_news_graph(
    rng: &mut Rng,
    paragraphs: usize,
    entities: usize,
    title: bool,
    text_dim: usize,
    entity_dim: usize,
) -> NewsGraph {
    let mut nodes = Vec::new();
    let mut attrs = Vec::new();
    let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
    let vec = |rng: &mut Rng, d: usize| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    if title {
        nodes.push(Node { kind: NodeKind::Document, payload: 0 });
        attrs.push(vec(rng, text_dim));
    }
    let first = nodes.len();
    for k in 0..paragraphs {
        nodes.push(Node { kind: NodeKind::Paragraph, payload: k });
        attrs.push(vec(rng, text_dim));
        if title {
            edges[0].push((0, first + k));
        }
        if k > 0 {
            edges[1].push((first + k - 1, first + k));
        }
    }
    for e in 0..entities {
        let node = nodes.len();
        nodes.push(Node { kind: NodeKind::Entity, payload: e });
        attrs.push(vec(rng, entity_dim));
        let mut linked = false;
        for k in 0..paragraphs {
            if rng.gen_bool(0.4) {
                edges[2].push((first + k, node));
                linked = true;
            }
        }
        if !linked {
            edges[2].push((first + rng.gen_range(0..paragraphs), node));
        }
    }
    NewsGraph {
        doc_id: format!("g{}", rng.gen::<u32>()),
        group: None,
        label: Some(rng.gen_range(0..2)),
        nodes,
        attrs,
        edges,
        paragraph_count: paragraphs,
        text_dim,
        entity_dim,
    }
}

/// Randomises every parameter (biases included) so no gradient is trivially zero.
pub fn randomize(params: &mut ModelParams, rng: &mut Rng, scale: f64) {
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: (usize, usize),
    /// Magnitude of the analytic gradient at `worst`.
    pub worst_magnitude: f64,
    pub max_abs_err: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares every analytic parameter gradient against central differences,
/// with relative errors computed by [`rel_err`] at denominator `floor`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check(
    batch: &GraphBatch,
    params: &ModelParams,
    config: &GnnConfig,
    labels: &[usize],
    lambda: f64,
    seed: u64,
    eps: f64,
    floor: f64,
) -> FdReport {
    let out = model_forward(batch, params, config, true, seed).unwrap();
    let grads = model_backward(&out, labels, params, lambda).unwrap().params;
    let loss = |p: &ModelParams| {
        let o = model_forward(batch, p, config, true, seed).unwrap();
        loss_forward(&o, labels, p, lambda).unwrap()
    };
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|t| t.to_vec()).collect();
    let mut report = FdReport { max_rel_err: 0.0, checked: 0, worst: (0, 0), worst_magnitude: 0.0, max_abs_err: 0.0 };
    let mut probe = params.clone();
    for (ti, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = probe.tensors()[ti][i];
            probe.tensors_mut()[ti][i] = orig + eps;
            let up = loss(&probe);
            probe.tensors_mut()[ti][i] = orig - eps;
            let down = loss(&probe);
            probe.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = rel_err(a, numeric, floor);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (ti, i);
                report.worst_magnitude = a.abs();
            }
            report.max_abs_err = report.max_abs_err.max((a - numeric).abs());
            report.checked += 1;
        }
    }
    report
}

/// Dense `n × n` row-normalised adjacency built from a boolean matrix.
pub fn dense_adjacency(n: usize, edges: &[(usize, usize)]) -> ndarray::Array2<f64> {
    let mut m = ndarray::Array2::<f64>::zeros((n, n));
    for &(s, d) in edges {
        m[[s, d]] = 1.0;
        m[[d, s]] = 1.0;
    }
    for mut row in m.rows_mut() {
        let deg = row.sum();
        if deg > 0.0 {
            row /= deg;
        }
    }
    m
}

/// Gated or plain relational layer via full matrix products.
pub fn dense_layer(
    x: &ndarray::Array2<f64>,
    relations: &[Vec<(usize, usize)>],
    layer: &stancegraph::gnn::LayerParams,
    gated: bool,
    slope: f64,
) -> ndarray::Array2<f64> {
    let n = x.nrows();
    let h = x.ncols();
    let mut u = x.dot(&layer.theta_self);
    for (edges, theta) in relations.iter().zip(&layer.theta_rel) {
        u = u + dense_adjacency(n, edges).dot(x).dot(theta);
    }
    if !gated {
        return u.mapv(|v| if v > 0.0 { v } else { slope * v });
    }
    let concat = ndarray::concatenate(ndarray::Axis(1), &[u.view(), x.view()]).unwrap();
    let z = concat.dot(layer.gate_w.as_ref().unwrap()) + layer.gate_b.as_ref().unwrap();
    let a = z.mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let ones = ndarray::Array2::<f64>::ones((n, h));
    u.mapv(f64::tanh) * &a + x * &(ones - &a)
}

/// Random graph with up to `max_nodes` nodes and `relations` edge lists.
pub fn random_relational_graph(rng: &mut Rng, max_nodes: usize, relations: usize) -> (usize, Vec<Vec<(usize, usize)>>) {
    let n = rng.gen_range(1..=max_nodes);
    let edges = (0..relations)
        .map(|_| {
            let m = rng.gen_range(0..=2 * n);
            (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect()
        })
        .collect();
    (n, edges)
}

pub fn random_layer(r: &mut Rng, h: usize, relations: usize, gated: bool) -> stancegraph::gnn::LayerParams {
    let mut m = |rows, cols| ndarray::Array2::from_shape_simple_fn((rows, cols), || r.gen_range(-1.0..1.0));
    stancegraph::gnn::LayerParams {
        theta_self: m(h, h),
        theta_rel: (0..relations).map(|_| m(h, h)).collect(),
        gate_w: gated.then(|| m(2 * h, h)),
        gate_b: gated.then(|| m(1, h).row(0).to_owned()),
    }
}

pub fn max_abs_diff(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
