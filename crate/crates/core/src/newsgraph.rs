//! Heterogeneous per-document news graphs.
//!
//! A graph has an optional document node (present iff the article has a
//! title), one node per paragraph, and one node per KG entity mentioned in
//! some paragraph. Three relations connect them:
//!
//! * `doc-para`: document node to every paragraph,
//! * `para-para`: paragraph `k` to paragraph `k+1`,
//! * `para-ent`: paragraph to each entity it mentions (one edge per distinct pair).
//!
//! Edges are stored directed; message passing treats them symmetrically.
//!
//! # Dump format
//!
//! `write_graphs` emits UTF-8 text, tab-separated:
//!
//! ```text
//! newsgraph-dump v1
//! graphs <count>
//! graph <doc_id> <group|-> <label|-> <paragraphs> <text_dim> <entity_dim> <nodes> <edges>
//! node <document|paragraph|entity> <payload> <space-separated attribute values>
//! edge <doc-para|para-para|para-ent> <src> <dst>
//! ```
//!
//! Each `graph` line is followed by exactly `<nodes>` node lines (in node-id
//! order) and `<edges>` edge lines. The node payload is 0 for the document,
//! the paragraph index, or the entity's KG id.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kge::EmbeddingTable;
use crate::kgstore::{kept_count, EntityId};
use crate::linker::Gazetteer;
use crate::textfeat::{paragraph_key, title_key, FeatureError, FeatureProvider};
use crate::util::{derive_seed_indexed, fnv1a, Rng};
use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error("document `{0}` has no paragraphs")]
    NoParagraphs(String),
    #[error("entity `{0}` is mentioned but has no embedding row")]
    MissingEmbedding(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid graph `{doc}`: {msg}")]
    Invalid { doc: String, msg: String },
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("graph dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewsDocument {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub paragraphs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Documents sharing a group are always placed on the same side of a split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

fn check_id(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(format!("document id `{id}` must be non-empty without tabs or newlines"));
    }
    Ok(())
}

/// Reads one JSON object per line.
pub fn read_corpus(r: impl Read) -> Result<Vec<NewsDocument>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| GraphError::Corpus { line: line_no, msg };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: NewsDocument = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        check_id(&doc.id).map_err(err)?;
        if let Some(g) = &doc.group {
            check_id(g).map_err(err)?;
        }
        if doc.paragraphs.is_empty() {
            return Err(err(format!("document `{}` has no paragraphs", doc.id)));
        }
        if !seen.insert(doc.id.clone()) {
            return Err(err(format!("duplicate document id `{}`", doc.id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<NewsDocument>> {
    let f = fs::File::open(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })?;
    read_corpus(f)
}

pub fn write_corpus(mut w: impl Write, docs: &[NewsDocument]) -> io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Document,
    Paragraph,
    Entity,
}

impl NodeKind {
    fn as_str(self) -> &'static str {
        match self {
            NodeKind::Document => "document",
            NodeKind::Paragraph => "paragraph",
            NodeKind::Entity => "entity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    DocPara,
    ParaPara,
    ParaEnt,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::DocPara, Relation::ParaPara, Relation::ParaEnt];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::DocPara => "doc-para",
            Relation::ParaPara => "para-para",
            Relation::ParaEnt => "para-ent",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let key = s.trim().to_lowercase().replace('_', "-");
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == key)
            .ok_or_else(|| format!("unknown relation `{s}` (expected doc-para|para-para|para-ent)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeKind,
    /// 0 for the document node, paragraph index, or KG entity id.
    pub payload: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsGraph {
    pub doc_id: String,
    pub group: Option<String>,
    pub label: Option<usize>,
    pub nodes: Vec<Node>,
    /// Raw attribute per node: width `text_dim` for document/paragraph nodes,
    /// `entity_dim` for entity nodes.
    pub attrs: Vec<Vec<f64>>,
    /// Directed edge lists indexed by [`Relation::index`].
    pub edges: [Vec<(usize, usize)>; 3],
    pub paragraph_count: usize,
    pub text_dim: usize,
    pub entity_dim: usize,
}

impl NewsGraph {
    pub fn edges_of(&self, r: Relation) -> &[(usize, usize)] {
        &self.edges[r.index()]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_document_node(&self) -> bool {
        self.nodes.iter().any(|n| n.kind == NodeKind::Document)
    }

    /// Node ids of paragraphs, in paragraph order.
    pub fn paragraph_nodes(&self) -> Vec<usize> {
        let mut p: Vec<(usize, usize)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Paragraph)
            .map(|(i, n)| (n.payload, i))
            .collect();
        p.sort_unstable();
        p.into_iter().map(|(_, i)| i).collect()
    }

    pub fn entity_ids(&self) -> BTreeSet<EntityId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Entity)
            .map(|n| n.payload)
            .collect()
    }

    /// Checks the structural invariants of a news graph.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| GraphError::Invalid { doc: self.doc_id.clone(), msg };
        let n = self.nodes.len();
        if self.attrs.len() != n {
            return Err(bad("attribute count differs from node count".into()));
        }
        for (node, a) in self.nodes.iter().zip(&self.attrs) {
            let want = if node.kind == NodeKind::Entity { self.entity_dim } else { self.text_dim };
            if a.len() != want {
                return Err(bad(format!("{:?} attribute has width {}, expected {want}", node.kind, a.len())));
            }
        }
        let docs = self.nodes.iter().filter(|n| n.kind == NodeKind::Document).count();
        if docs > 1 {
            return Err(bad("more than one document node".into()));
        }
        let paras = self.paragraph_nodes();
        if paras.is_empty() || paras.len() != self.paragraph_count {
            return Err(bad("paragraph count mismatch or no paragraphs".into()));
        }
        if paras.iter().map(|&i| self.nodes[i].payload).ne(0..paras.len()) {
            return Err(bad("paragraph payloads must be 0..s".into()));
        }
        let kind = |i: usize| self.nodes.get(i).map(|n| n.kind);
        for r in Relation::ALL {
            for &(s, d) in self.edges_of(r) {
                let ok = match r {
                    Relation::DocPara => kind(s) == Some(NodeKind::Document) && kind(d) == Some(NodeKind::Paragraph),
                    Relation::ParaPara => {
                        kind(s) == Some(NodeKind::Paragraph)
                            && kind(d) == Some(NodeKind::Paragraph)
                            && self.nodes[d].payload == self.nodes[s].payload + 1
                    }
                    Relation::ParaEnt => kind(s) == Some(NodeKind::Paragraph) && kind(d) == Some(NodeKind::Entity),
                };
                if !ok {
                    return Err(bad(format!("bad {r} edge ({s}, {d})")));
                }
            }
        }
        let with_edge: HashSet<usize> = self.edges_of(Relation::ParaEnt).iter().map(|e| e.1).collect();
        if self
            .nodes
            .iter()
            .enumerate()
            .any(|(i, n)| n.kind == NodeKind::Entity && !with_edge.contains(&i))
        {
            return Err(bad("entity node without a para-ent edge".into()));
        }
        Ok(())
    }

    /// Relabels nodes: old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> NewsGraph {
        assert_eq!(perm.len(), self.nodes.len(), "permutation length");
        let mut nodes = vec![self.nodes[0]; self.nodes.len()];
        let mut attrs = vec![Vec::new(); self.nodes.len()];
        for (old, &new) in perm.iter().enumerate() {
            nodes[new] = self.nodes[old];
            attrs[new] = self.attrs[old].clone();
        }
        let edges = self.edges.clone().map(|es| es.into_iter().map(|(s, d)| (perm[s], perm[d])).collect());
        NewsGraph { nodes, attrs, edges, ..self.clone() }
    }
}

/// Which edges to build. Used by the edge ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub doc_para: bool,
    pub para_para: bool,
    pub para_ent: bool,
    /// Fraction of each graph's para-ent edges kept (`ceil(f * m)` sampled).
    pub para_ent_keep: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { doc_para: true, para_para: true, para_ent: true, para_ent_keep: 1.0, seed: 0 }
    }
}

/// Builds one news graph.
///
/// Node order: document node (if titled), paragraphs, then entities in order
/// of first mention. Entities whose every para-ent edge was removed by the
/// options are not instantiated.
pub fn build_news_graph(
    doc: &NewsDocument,
    gaz: &Gazetteer,
    features: &FeatureProvider,
    embeddings: &EmbeddingTable,
    options: &BuildOptions,
) -> Result<NewsGraph> {
    if doc.paragraphs.is_empty() {
        return Err(GraphError::NoParagraphs(doc.id.clone()));
    }
    let mut nodes = Vec::new();
    let mut attrs = Vec::new();
    let mut edges: [Vec<(usize, usize)>; 3] = Default::default();

    let doc_node = doc.title.as_ref().map(|title| {
        nodes.push(Node { kind: NodeKind::Document, payload: 0 });
        attrs.push(features.embed(&title_key(&doc.id), title));
        0
    });
    let first_para = nodes.len();
    for (k, text) in doc.paragraphs.iter().enumerate() {
        nodes.push(Node { kind: NodeKind::Paragraph, payload: k });
        attrs.push(features.embed(&paragraph_key(&doc.id, k), text));
    }
    let attrs: Vec<Vec<f64>> = attrs.into_iter().collect::<std::result::Result<_, _>>()?;
    let mut attrs = attrs;
    let s = doc.paragraphs.len();

    if let (Some(d), true) = (doc_node, options.doc_para) {
        edges[Relation::DocPara.index()].extend((0..s).map(|k| (d, first_para + k)));
    }
    if options.para_para {
        edges[Relation::ParaPara.index()].extend((1..s).map(|k| (first_para + k - 1, first_para + k)));
    }

    if options.para_ent {
        // Distinct (paragraph, entity) pairs in mention order.
        let mut pairs: Vec<(usize, EntityId)> = Vec::new();
        let mut seen = HashSet::new();
        for (k, text) in doc.paragraphs.iter().enumerate() {
            for m in gaz.link(text) {
                if seen.insert((k, m.entity)) {
                    pairs.push((k, m.entity));
                }
            }
        }
        if options.para_ent_keep < 1.0 {
            let keep = kept_count(options.para_ent_keep.max(0.0), pairs.len());
            let seed = derive_seed_indexed(options.seed, "para_ent_keep", fnv1a(doc.id.as_bytes()));
            let mut rng = Rng::seed_from_u64(seed);
            let mut picked = index::sample(&mut rng, pairs.len(), keep).into_vec();
            picked.sort_unstable();
            pairs = picked.into_iter().map(|i| pairs[i]).collect();
        }
        let mut entity_node: HashMap<EntityId, usize> = HashMap::new();
        for (k, entity) in pairs {
            let node = match entity_node.get(&entity) {
                Some(&n) => n,
                None => {
                    let name = gaz.entity_name(entity);
                    let v = embeddings
                        .entity_vector(name)
                        .ok_or_else(|| GraphError::MissingEmbedding(name.to_string()))?;
                    nodes.push(Node { kind: NodeKind::Entity, payload: entity });
                    attrs.push(v.to_vec());
                    entity_node.insert(entity, nodes.len() - 1);
                    nodes.len() - 1
                }
            };
            edges[Relation::ParaEnt.index()].push((first_para + k, node));
        }
    }

    Ok(NewsGraph {
        doc_id: doc.id.clone(),
        group: doc.group.clone(),
        label: doc.label,
        nodes,
        attrs,
        edges,
        paragraph_count: s,
        text_dim: features.dim(),
        entity_dim: embeddings.dim(),
    })
}

/// Disjoint union of graphs, laid out for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub nodes: Vec<Node>,
    pub text_dim: usize,
    pub entity_dim: usize,
    /// Global ids of document/paragraph nodes, aligned with `text_attrs` rows.
    pub text_nodes: Vec<usize>,
    pub text_attrs: Array2<f64>,
    /// Global ids of entity nodes, aligned with `entity_attrs` rows.
    pub entity_nodes: Vec<usize>,
    pub entity_attrs: Array2<f64>,
    pub edges: [Vec<(usize, usize)>; 3],
    pub ranges: Vec<Range<usize>>,
    /// Global paragraph node ids per graph, in paragraph order.
    pub paragraphs: Vec<Vec<usize>>,
    pub labels: Vec<Option<usize>>,
    pub doc_ids: Vec<String>,
    pub groups: Vec<Option<String>>,
}

impl GraphBatch {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn graph_count(&self) -> usize {
        self.ranges.len()
    }

    /// Recovers the individual graphs.
    pub fn unbatch(&self) -> Vec<NewsGraph> {
        let mut attrs: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        for (row, &n) in self.text_nodes.iter().enumerate() {
            attrs[n] = self.text_attrs.row(row).to_vec();
        }
        for (row, &n) in self.entity_nodes.iter().enumerate() {
            attrs[n] = self.entity_attrs.row(row).to_vec();
        }
        self.ranges
            .iter()
            .enumerate()
            .map(|(g, range)| {
                let local = |(s, d): &(usize, usize)| (s - range.start, d - range.start);
                let edges = self.edges.clone().map(|es| {
                    es.iter().filter(|(s, _)| range.contains(s)).map(local).collect()
                });
                NewsGraph {
                    doc_id: self.doc_ids[g].clone(),
                    group: self.groups[g].clone(),
                    label: self.labels[g],
                    nodes: self.nodes[range.clone()].to_vec(),
                    attrs: attrs[range.clone()].to_vec(),
                    edges,
                    paragraph_count: self.paragraphs[g].len(),
                    text_dim: self.text_dim,
                    entity_dim: self.entity_dim,
                }
            })
            .collect()
    }
}

pub fn batch_graphs<G: std::borrow::Borrow<NewsGraph>>(graphs: &[G]) -> Result<GraphBatch> {
    let first = graphs.first().ok_or(GraphError::EmptyBatch)?.borrow();
    let (text_dim, entity_dim) = (first.text_dim, first.entity_dim);
    let mut b = GraphBatch {
        nodes: Vec::new(),
        text_dim,
        entity_dim,
        text_nodes: Vec::new(),
        text_attrs: Array2::zeros((0, text_dim)),
        entity_nodes: Vec::new(),
        entity_attrs: Array2::zeros((0, entity_dim)),
        edges: Default::default(),
        ranges: Vec::new(),
        paragraphs: Vec::new(),
        labels: Vec::new(),
        doc_ids: Vec::new(),
        groups: Vec::new(),
    };
    let mut text_values = Vec::new();
    let mut entity_values = Vec::new();
    for g in graphs {
        let g = g.borrow();
        if g.text_dim != text_dim || g.entity_dim != entity_dim {
            return Err(GraphError::Invalid {
                doc: g.doc_id.clone(),
                msg: format!(
                    "dims ({}, {}) differ from batch dims ({text_dim}, {entity_dim})",
                    g.text_dim, g.entity_dim
                ),
            });
        }
        if g.attrs.len() != g.nodes.len() {
            return Err(GraphError::Invalid { doc: g.doc_id.clone(), msg: "attribute count".into() });
        }
        let offset = b.nodes.len();
        for (i, (node, a)) in g.nodes.iter().zip(&g.attrs).enumerate() {
            let (ids, values, want) = match node.kind {
                NodeKind::Entity => (&mut b.entity_nodes, &mut entity_values, entity_dim),
                _ => (&mut b.text_nodes, &mut text_values, text_dim),
            };
            if a.len() != want {
                return Err(GraphError::Invalid { doc: g.doc_id.clone(), msg: format!("node {i} attribute width") });
            }
            ids.push(offset + i);
            values.extend_from_slice(a);
        }
        b.nodes.extend_from_slice(&g.nodes);
        for r in Relation::ALL {
            for &(s, d) in g.edges_of(r) {
                if s >= g.nodes.len() || d >= g.nodes.len() {
                    return Err(GraphError::Invalid {
                        doc: g.doc_id.clone(),
                        msg: format!("{r} edge ({s}, {d}) out of range"),
                    });
                }
                b.edges[r.index()].push((s + offset, d + offset));
            }
        }
        b.ranges.push(offset..offset + g.nodes.len());
        b.paragraphs.push(g.paragraph_nodes().into_iter().map(|i| i + offset).collect());
        b.labels.push(g.label);
        b.doc_ids.push(g.doc_id.clone());
        b.groups.push(g.group.clone());
    }
    b.text_attrs = Array2::from_shape_vec((b.text_nodes.len(), text_dim), text_values).expect("widths checked");
    b.entity_attrs = Array2::from_shape_vec((b.entity_nodes.len(), entity_dim), entity_values).expect("widths checked");
    Ok(b)
}

pub fn write_graphs(mut w: impl Write, graphs: &[NewsGraph]) -> io::Result<()> {
    writeln!(w, "newsgraph-dump v1")?;
    writeln!(w, "graphs\t{}", graphs.len())?;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for g in graphs {
        let n_edges: usize = g.edges.iter().map(Vec::len).sum();
        writeln!(
            w,
            "graph\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            g.doc_id,
            opt(g.group.clone()),
            opt(g.label.map(|l| l.to_string())),
            g.paragraph_count,
            g.text_dim,
            g.entity_dim,
            g.nodes.len(),
            n_edges
        )?;
        for (node, a) in g.nodes.iter().zip(&g.attrs) {
            write!(w, "node\t{}\t{}\t", node.kind.as_str(), node.payload)?;
            for (i, v) in a.iter().enumerate() {
                if i > 0 {
                    write!(w, " ")?;
                }
                write!(w, "{v}")?;
            }
            writeln!(w)?;
        }
        for r in Relation::ALL {
            for (s, d) in g.edges_of(r) {
                writeln!(w, "edge\t{r}\t{s}\t{d}")?;
            }
        }
    }
    Ok(())
}

pub fn read_graphs(r: impl Read) -> Result<Vec<NewsGraph>> {
    let mut lines = BufReader::new(r).lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
        let (no, line) = lines.next().ok_or_else(|| GraphError::Dump { line: 0, msg: format!("unexpected end, expected {what}") })?;
        let line = line.map_err(|e| GraphError::Dump { line: no, msg: e.to_string() })?;
        Ok((no, line.trim_end_matches('\r').split('\t').map(str::to_string).collect()))
    };
    let bad = |line: usize, msg: &str| GraphError::Dump { line, msg: msg.to_string() };
    let num = |line: usize, s: &str| s.parse::<usize>().map_err(|_| bad(line, &format!("bad number `{s}`")));

    let (no, header) = next("header")?;
    if header != ["newsgraph-dump v1"] {
        return Err(bad(no, "missing `newsgraph-dump v1` header"));
    }
    let (no, count) = next("graph count")?;
    if count.len() != 2 || count[0] != "graphs" {
        return Err(bad(no, "expected `graphs <count>`"));
    }
    let count = num(no, &count[1])?;
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let (no, f) = next("graph line")?;
        if f.len() != 9 || f[0] != "graph" {
            return Err(bad(no, "expected a 9-field graph line"));
        }
        let opt = |s: &str| (s != "-").then(|| s.to_string());
        let label = match opt(&f[3]) {
            Some(l) => Some(num(no, &l)?),
            None => None,
        };
        let (paragraph_count, text_dim, entity_dim) = (num(no, &f[4])?, num(no, &f[5])?, num(no, &f[6])?);
        let (n_nodes, n_edges) = (num(no, &f[7])?, num(no, &f[8])?);
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut attrs = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let (no, f) = next("node line")?;
            if f.len() != 4 || f[0] != "node" {
                return Err(bad(no, "expected a node line"));
            }
            let kind = match f[1].as_str() {
                "document" => NodeKind::Document,
                "paragraph" => NodeKind::Paragraph,
                "entity" => NodeKind::Entity,
                _ => return Err(bad(no, "unknown node kind")),
            };
            nodes.push(Node { kind, payload: num(no, &f[2])? });
            let values = f[3]
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|v| v.parse::<f64>().map_err(|_| bad(no, "bad attribute value")))
                .collect::<Result<Vec<f64>>>()?;
            attrs.push(values);
        }
        let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
        for _ in 0..n_edges {
            let (no, f) = next("edge line")?;
            if f.len() != 4 || f[0] != "edge" {
                return Err(bad(no, "expected an edge line"));
            }
            let r: Relation = f[1].parse().map_err(|e: String| bad(no, &e))?;
            edges[r.index()].push((num(no, &f[2])?, num(no, &f[3])?));
        }
        let g = NewsGraph {
            doc_id: f[1].clone(),
            group: opt(&f[2]),
            label,
            nodes,
            attrs,
            edges,
            paragraph_count,
            text_dim,
            entity_dim,
        };
        g.validate()?;
        graphs.push(g);
    }
    Ok(graphs)
}

pub fn save_graphs(path: &Path, graphs: &[NewsGraph]) -> Result<()> {
    let mut buf = Vec::new();
    write_graphs(&mut buf, graphs).expect("in-memory write");
    fs::write(path, buf).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

pub fn load_graphs(path: &Path) -> Result<Vec<NewsGraph>> {
    let f = fs::File::open(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })?;
    read_graphs(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kge::{train_embeddings, KgeConfig};
    use crate::kgstore::{EntityType, KnowledgeGraph};
    use crate::linker::build_gazetteer;
    use crate::textfeat::fit_tfidf;

    struct Fixture {
        gaz: Gazetteer,
        tf: FeatureProvider,
        emb: EmbeddingTable,
    }

    fn fixture() -> Fixture {
        let mut kg = KnowledgeGraph::new();
        kg.add_entity("Ted Cruz", EntityType::Senator);
        kg.add_entity("Texas", EntityType::State);
        kg.add_entity("Nancy Pelosi", EntityType::Congressperson);
        let emb = train_embeddings(&kg, &KgeConfig { dim: 6, epochs: 0, ..Default::default() }).unwrap();
        let gaz = build_gazetteer(&kg, None).unwrap();
        let tf = fit_tfidf(&["ted cruz texas", "a b c"], 10).unwrap();
        Fixture { gaz, tf, emb }
    }

    fn doc(title: Option<&str>, paragraphs: &[&str]) -> NewsDocument {
        NewsDocument {
            id: "d1".into(),
            title: title.map(String::from),
            paragraphs: paragraphs.iter().map(|s| s.to_string()).collect(),
            label: Some(1),
            group: None,
        }
    }

    fn build(doc: &NewsDocument, opts: &BuildOptions) -> NewsGraph {
        let f = fixture();
        build_news_graph(doc, &f.gaz, &f.tf, &f.emb, opts).unwrap()
    }

    #[test]
    fn titled_document_without_mentions() {
        let g = build(&doc(Some("Title"), &["one", "two", "three"]), &BuildOptions::default());
        g.validate().unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edges_of(Relation::DocPara).len(), 3);
        assert_eq!(g.edges_of(Relation::ParaPara).len(), 2);
        assert_eq!(g.edges_of(Relation::ParaEnt).len(), 0);
    }

    #[test]
    fn untitled_document_has_no_document_node() {
        let g = build(&doc(None, &["one", "two"]), &BuildOptions::default());
        assert!(!g.has_document_node());
        assert!(g.edges_of(Relation::DocPara).is_empty());
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn repeated_mentions_give_one_edge() {
        let g = build(
            &doc(None, &["Ted Cruz met Ted Cruz in Texas", "Texas again", "none"]),
            &BuildOptions::default(),
        );
        g.validate().unwrap();
        let pe = g.edges_of(Relation::ParaEnt);
        assert_eq!(pe.len(), 3);
        assert_eq!(g.entity_ids(), [0, 1].into_iter().collect());
        let cruz_node = g.nodes.iter().position(|n| n.kind == NodeKind::Entity && n.payload == 0).unwrap();
        assert_eq!(pe.iter().filter(|e| e.1 == cruz_node).count(), 1);
        // Entity attribute is the embedding row.
        let f = fixture();
        assert_eq!(g.attrs[cruz_node], f.emb.entity_vector("Ted Cruz").unwrap().to_vec());
    }

    #[test]
    fn edge_options() {
        let d = doc(Some("t"), &["Ted Cruz", "Texas", "x"]);
        let none = BuildOptions { para_ent: false, ..Default::default() };
        let g = build(&d, &none);
        assert!(g.entity_ids().is_empty());
        let g = build(&d, &BuildOptions { para_para: false, doc_para: false, ..Default::default() });
        assert_eq!(g.edges[0].len() + g.edges[1].len(), 0);
        assert_eq!(g.edges_of(Relation::ParaEnt).len(), 2);
        let g = build(&d, &BuildOptions { para_ent_keep: 0.5, seed: 3, ..Default::default() });
        g.validate().unwrap();
        assert_eq!(g.edges_of(Relation::ParaEnt).len(), 1);
        assert_eq!(g.entity_ids().len(), 1);
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let f = fixture();
        let mut kg = KnowledgeGraph::new();
        kg.add_entity("Ted Cruz", EntityType::Senator);
        let small = train_embeddings(&kg, &KgeConfig { dim: 6, epochs: 0, ..Default::default() }).unwrap();
        let err = build_news_graph(&doc(None, &["Texas"]), &f.gaz, &f.tf, &small, &BuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, GraphError::MissingEmbedding(name) if name == "Texas"));
    }

    #[test]
    fn batching_offsets_and_unbatch() {
        let a = build(&doc(Some("t"), &["Ted Cruz", "b"]), &BuildOptions::default());
        let mut b = build(&doc(None, &["Texas", "x", "Nancy Pelosi"]), &BuildOptions::default());
        b.doc_id = "d2".into();
        assert_eq!((a.node_count(), b.node_count()), (4, 5));
        let batch = batch_graphs(&[&a, &b]).unwrap();
        assert_eq!(batch.node_count(), 9);
        assert_eq!(batch.ranges[1].start, 4);
        assert_eq!(batch.paragraphs[1], vec![4, 5, 6]);
        assert_eq!(batch.unbatch(), vec![a.clone(), b]);
        assert_eq!(batch_graphs(&[&a]).unwrap().unbatch(), vec![a]);
        assert!(matches!(batch_graphs::<NewsGraph>(&[]), Err(GraphError::EmptyBatch)));
    }

    #[test]
    fn corpus_parsing() {
        let text = r#"{"id":"a","title":"T","paragraphs":["p0","p1"],"label":1}
{"id":"b","paragraphs":["only"]}
"#;
        let docs = read_corpus(text.as_bytes()).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].title, None);
        assert!(read_corpus(r#"{"id":"a","paragraphs":[]}"#.as_bytes()).is_err());
        assert!(read_corpus(r#"{"id":"a","paragraphs":["x"],"labl":1}"#.as_bytes()).is_err());
        let mut out = Vec::new();
        write_corpus(&mut out, &docs).unwrap();
        assert_eq!(read_corpus(out.as_slice()).unwrap(), docs);
    }

    #[test]
    fn dump_round_trip() {
        let a = build(&doc(Some("t"), &["Ted Cruz and Texas", "b"]), &BuildOptions::default());
        let mut buf = Vec::new();
        write_graphs(&mut buf, std::slice::from_ref(&a)).unwrap();
        let back = read_graphs(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a]);
        assert!(read_graphs("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn permutation_preserves_validity() {
        let g = build(&doc(Some("t"), &["Ted Cruz", "Texas", "Texas"]), &BuildOptions::default());
        let perm: Vec<usize> = (0..g.node_count()).rev().collect();
        let p = g.permute(&perm);
        p.validate().unwrap();
        assert_eq!(p.paragraph_nodes().len(), 3);
        assert_eq!(p.entity_ids(), g.entity_ids());
    }
}
