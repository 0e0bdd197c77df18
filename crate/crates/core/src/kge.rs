//! Knowledge graph embeddings used as entity node attributes.
//!
//! TransE scores a triple by the translation distance `‖h + r − t‖`; DistMult
//! by the trilinear product `Σ h_i r_i t_i`. Training minimises the margin
//! ranking loss `max(0, γ + E(pos) − E(neg))` over uniformly corrupted
//! negatives, where the energy `E` is the TransE distance or the negated
//! DistMult score (lower energy = more plausible for both).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::util::{casefold, seeded_rng, Rng};

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("cannot train {0} epochs on a knowledge graph without triples")]
    EmptyKg(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("hits@k needs k >= 1, got {0}")]
    BadK(usize),
    #[error("embedding table is not aligned with the knowledge graph: {0}")]
    Misaligned(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, KgeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeMethod {
    TransE,
    DistMult,
}

impl fmt::Display for KgeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KgeMethod::TransE => "transe",
            KgeMethod::DistMult => "distmult",
        })
    }
}

impl FromStr for KgeMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match casefold(s.trim()).as_str() {
            "transe" => Ok(KgeMethod::TransE),
            "distmult" => Ok(KgeMethod::DistMult),
            other => Err(format!("unknown KGE method `{other}` (expected transe|distmult)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match casefold(s.trim()).as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(format!("unknown norm `{other}` (expected l1|l2)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeConfig {
    pub method: KgeMethod,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub norm: Norm,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            method: KgeMethod::TransE,
            dim: 200,
            epochs: 100,
            learning_rate: 0.01,
            margin: 1.0,
            negatives_per_positive: 1,
            norm: Norm::L2,
            seed: 0,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(KgeError::Config("dim must be > 0".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(KgeError::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.negatives_per_positive == 0 {
            return Err(KgeError::Config("negatives_per_positive must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(KgeError::Config(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn check_dims(h: &[f64], r: &[f64], t: &[f64]) -> Result<()> {
    if h.len() != r.len() || h.len() != t.len() {
        return Err(KgeError::DimMismatch(format!(
            "h={}, r={}, t={}",
            h.len(),
            r.len(),
            t.len()
        )));
    }
    Ok(())
}

/// `‖h + r − t‖` under the chosen norm.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64> {
    check_dims(h, r, t)?;
    let diffs = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    Ok(match norm {
        Norm::L1 => diffs.map(f64::abs).sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    })
}

/// `Σ h_i r_i t_i`; higher is more plausible.
pub fn distmult_score(h: &[f64], r: &[f64], t: &[f64]) -> Result<f64> {
    check_dims(h, r, t)?;
    Ok(h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum())
}

/// Trained (or freshly initialised) entity and relation vectors.
///
/// Rows are indexed by the KG's entity and relation ids; names are kept so
/// the table can be written out and re-aligned by name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub method: KgeMethod,
    pub norm: Norm,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    pub entity_vectors: Array2<f64>,
    pub relation_vectors: Array2<f64>,
    entity_index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(
        method: KgeMethod,
        norm: Norm,
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        entity_vectors: Array2<f64>,
        relation_vectors: Array2<f64>,
    ) -> Result<Self> {
        if entity_vectors.nrows() != entity_names.len()
            || relation_vectors.nrows() != relation_names.len()
        {
            return Err(KgeError::DimMismatch("row count differs from name count".into()));
        }
        if entity_vectors.ncols() != relation_vectors.ncols() || entity_vectors.ncols() == 0 {
            return Err(KgeError::DimMismatch(format!(
                "entity dim {} vs relation dim {}",
                entity_vectors.ncols(),
                relation_vectors.ncols()
            )));
        }
        if entity_vectors.iter().chain(relation_vectors.iter()).any(|v| !v.is_finite()) {
            return Err(KgeError::DimMismatch("non-finite embedding value".into()));
        }
        let entity_index = entity_names
            .iter()
            .enumerate()
            .map(|(i, n)| (casefold(n), i))
            .collect();
        Ok(EmbeddingTable {
            method,
            norm,
            entity_names,
            relation_names,
            entity_vectors,
            relation_vectors,
            entity_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.entity_vectors.ncols()
    }

    /// Row for an entity name (case-folded lookup).
    pub fn entity_vector(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.entity_index
            .get(&casefold(name))
            .map(|&i| self.entity_vectors.row(i))
    }

    /// Energy of a triple; lower is more plausible.
    pub fn energy(&self, triple: &Triple) -> f64 {
        let h = self.entity_vectors.row(triple.head);
        let r = self.relation_vectors.row(triple.relation);
        let t = self.entity_vectors.row(triple.tail);
        energy(self.method, self.norm, h.as_slice().unwrap(), r.as_slice().unwrap(), t.as_slice().unwrap())
    }

    fn check_aligned(&self, kg: &KnowledgeGraph) -> Result<()> {
        if self.entity_names.len() != kg.entities().len()
            || self.relation_names.len() != kg.relations().len()
        {
            return Err(KgeError::Misaligned(format!(
                "table has {}/{} entities/relations, graph has {}/{}",
                self.entity_names.len(),
                self.relation_names.len(),
                kg.entities().len(),
                kg.relations().len()
            )));
        }
        for (e, name) in kg.entities().iter().zip(&self.entity_names) {
            if casefold(&e.name) != casefold(name) {
                return Err(KgeError::Misaligned(format!(
                    "entity {} is `{}` in the graph but `{name}` in the table",
                    e.id, e.name
                )));
            }
        }
        Ok(())
    }

    pub fn write_tsv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "dim {}", self.dim())?;
        writeln!(w, "method {} {}", self.method, self.norm)?;
        let rows = |w: &mut dyn Write, tag: &str, names: &[String], m: &Array2<f64>| {
            for (name, row) in names.iter().zip(m.rows()) {
                write!(w, "{tag} {name}")?;
                for v in row {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            io::Result::Ok(())
        };
        rows(&mut w, "entity", &self.entity_names, &self.entity_vectors)?;
        rows(&mut w, "relation", &self.relation_names, &self.relation_vectors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("in-memory write");
        fs::write(path, buf).map_err(|source| KgeError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `dim <d>`, an optional `method <m> <norm>` line, then
    /// `entity|relation <name> <d values>` lines. Names may contain single
    /// spaces; the last `d` fields are always the vector.
    pub fn read_tsv(r: impl Read) -> Result<Self> {
        let mut dim = None;
        let mut method = KgeMethod::TransE;
        let mut norm = Norm::L2;
        let mut ents: (Vec<String>, Vec<f64>) = (Vec::new(), Vec::new());
        let mut rels: (Vec<String>, Vec<f64>) = (Vec::new(), Vec::new());
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line_no = i + 1;
            let parse_err = |msg: String| KgeError::Parse { line: line_no, msg };
            let line = line.map_err(|e| parse_err(e.to_string()))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let Some(d) = dim else {
                match fields.as_slice() {
                    ["dim", d] => {
                        let d: usize = d.parse().map_err(|_| parse_err(format!("bad dim `{d}`")))?;
                        if d == 0 {
                            return Err(parse_err("dim must be > 0".into()));
                        }
                        dim = Some(d);
                        continue;
                    }
                    _ => return Err(parse_err("first line must be `dim <d>`".into())),
                }
            };
            if fields[0] == "method" {
                if let Some(m) = fields.get(1) {
                    method = m.parse().map_err(parse_err)?;
                }
                if let Some(n) = fields.get(2) {
                    norm = n.parse().map_err(parse_err)?;
                }
                continue;
            }
            if fields.len() < d + 2 {
                return Err(parse_err(format!("expected a name and {d} values")));
            }
            let split = fields.len() - d;
            let name = fields[1..split].join(" ");
            let target = match fields[0] {
                "entity" => &mut ents,
                "relation" => &mut rels,
                other => return Err(parse_err(format!("unknown row tag `{other}`"))),
            };
            target.0.push(name);
            for v in &fields[split..] {
                let v: f64 = v.parse().map_err(|_| parse_err(format!("bad value `{v}`")))?;
                if !v.is_finite() {
                    return Err(parse_err("non-finite value".into()));
                }
                target.1.push(v);
            }
        }
        let d = dim.ok_or_else(|| KgeError::Parse {
            line: 0,
            msg: "empty embedding file".into(),
        })?;
        let ent_m = Array2::from_shape_vec((ents.0.len(), d), ents.1).expect("row lengths checked");
        let rel_m = Array2::from_shape_vec((rels.0.len(), d), rels.1).expect("row lengths checked");
        EmbeddingTable::new(method, norm, ents.0, rels.0, ent_m, rel_m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|source| KgeError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_tsv(f)
    }
}

pub fn energy(method: KgeMethod, norm: Norm, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match method {
        KgeMethod::TransE => transe_score(h, r, t, norm).expect("rows share a width"),
        KgeMethod::DistMult => -distmult_score(h, r, t).expect("rows share a width"),
    }
}

/// Gradients of the energy with respect to (h, r, t).
fn energy_grad(method: KgeMethod, norm: Norm, h: &[f64], r: &[f64], t: &[f64]) -> [Vec<f64>; 3] {
    match method {
        KgeMethod::TransE => {
            let d: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
            let g: Vec<f64> = match norm {
                Norm::L1 => d.iter().map(|x| x.signum() * (*x != 0.0) as u8 as f64).collect(),
                Norm::L2 => {
                    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n == 0.0 {
                        vec![0.0; d.len()]
                    } else {
                        d.iter().map(|x| x / n).collect()
                    }
                }
            };
            let neg = g.iter().map(|x| -x).collect();
            [g.clone(), g, neg]
        }
        KgeMethod::DistMult => {
            let n = h.len();
            let (mut gh, mut gr, mut gt) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for i in 0..n {
                gh[i] = -r[i] * t[i];
                gr[i] = -h[i] * t[i];
                gt[i] = -h[i] * r[i];
            }
            [gh, gr, gt]
        }
    }
}

/// A parameter row touched by a margin-loss gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRow {
    Entity(EntityId),
    Relation(RelationId),
}

/// `max(0, γ + E(pos) − E(neg))`.
pub fn margin_loss(table: &EmbeddingTable, pos: &Triple, neg: &Triple, margin: f64) -> f64 {
    (margin + table.energy(pos) - table.energy(neg)).max(0.0)
}

/// Exact gradient of [`margin_loss`], summed per parameter row.
pub fn margin_loss_gradient(
    table: &EmbeddingTable,
    pos: &Triple,
    neg: &Triple,
    margin: f64,
) -> BTreeMap<ParamRow, Vec<f64>> {
    let mut grads: BTreeMap<ParamRow, Vec<f64>> = BTreeMap::new();
    if margin_loss(table, pos, neg, margin) <= 0.0 {
        return grads;
    }
    for (triple, sign) in [(pos, 1.0), (neg, -1.0)] {
        let h = table.entity_vectors.row(triple.head);
        let r = table.relation_vectors.row(triple.relation);
        let t = table.entity_vectors.row(triple.tail);
        let [gh, gr, gt] = energy_grad(
            table.method,
            table.norm,
            h.as_slice().unwrap(),
            r.as_slice().unwrap(),
            t.as_slice().unwrap(),
        );
        for (row, g) in [
            (ParamRow::Entity(triple.head), gh),
            (ParamRow::Relation(triple.relation), gr),
            (ParamRow::Entity(triple.tail), gt),
        ] {
            let acc = grads.entry(row).or_insert_with(|| vec![0.0; g.len()]);
            for (a, x) in acc.iter_mut().zip(g) {
                *a += sign * x;
            }
        }
    }
    grads
}

fn normalize_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Uniform `[−6/√d, 6/√d]` entries with unit-norm entity rows (relation rows
/// too for TransE).
pub fn init_table(kg: &KnowledgeGraph, config: &KgeConfig) -> Result<EmbeddingTable> {
    config.validate()?;
    let d = config.dim;
    let bound = 6.0 / (d as f64).sqrt();
    let mut rng = seeded_rng(config.seed, "kge_init");
    let mut uniform = |rows: usize| {
        Array2::from_shape_fn((rows, d), |_| rng.gen_range(-bound..=bound))
    };
    let mut ent = uniform(kg.entities().len());
    let mut rel = uniform(kg.relations().len());
    normalize_rows(&mut ent);
    if config.method == KgeMethod::TransE {
        normalize_rows(&mut rel);
    }
    EmbeddingTable::new(
        config.method,
        config.norm,
        kg.entities().iter().map(|e| e.name.clone()).collect(),
        kg.relations().iter().map(|r| r.name.clone()).collect(),
        ent,
        rel,
    )
}

fn corrupt(rng: &mut Rng, triple: &Triple, n_entities: usize) -> Triple {
    let mut neg = *triple;
    let replace_head = rng.gen_bool(0.5);
    let original = if replace_head { triple.head } else { triple.tail };
    // Uniform over the other n-1 entities.
    let mut e = rng.gen_range(0..n_entities - 1);
    if e >= original {
        e += 1;
    }
    if replace_head {
        neg.head = e;
    } else {
        neg.tail = e;
    }
    neg
}

/// Trains embeddings with per-triple SGD on the margin ranking loss.
///
/// Entity rows are renormalised to unit L2 norm after every epoch; with
/// `epochs = 0` the seeded initialisation is returned unchanged.
pub fn train_embeddings(kg: &KnowledgeGraph, config: &KgeConfig) -> Result<EmbeddingTable> {
    let mut table = init_table(kg, config)?;
    if config.epochs == 0 {
        return Ok(table);
    }
    if kg.triples().is_empty() {
        return Err(KgeError::EmptyKg(config.epochs));
    }
    let n_entities = kg.entities().len();
    if n_entities < 2 {
        return Ok(table);
    }
    let mut rng = seeded_rng(config.seed, "kge_train");
    let mut order: Vec<usize> = (0..kg.triples().len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let pos = kg.triples()[i];
            for _ in 0..config.negatives_per_positive {
                let neg = corrupt(&mut rng, &pos, n_entities);
                let grads = margin_loss_gradient(&table, &pos, &neg, config.margin);
                for (row, g) in grads {
                    let mut target = match row {
                        ParamRow::Entity(e) => table.entity_vectors.row_mut(e),
                        ParamRow::Relation(r) => table.relation_vectors.row_mut(r),
                    };
                    for (w, g) in target.iter_mut().zip(g) {
                        *w -= config.learning_rate * g;
                    }
                }
            }
        }
        normalize_rows(&mut table.entity_vectors);
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPredictionReport {
    pub k: usize,
    pub hits_at_k: f64,
    pub mean_rank: f64,
    pub queries: usize,
}

/// Filtered tail prediction over every KG triple.
///
/// The rank of the true tail is one plus the number of other candidate tails
/// with energy at most its own, skipping candidates that form a known triple.
pub fn link_prediction_eval(
    table: &EmbeddingTable,
    kg: &KnowledgeGraph,
    k: usize,
) -> Result<LinkPredictionReport> {
    if k < 1 {
        return Err(KgeError::BadK(k));
    }
    table.check_aligned(kg)?;
    let n = kg.entities().len();
    let mut hits = 0usize;
    let mut rank_sum = 0.0;
    for triple in kg.triples() {
        let true_energy = table.energy(triple);
        let mut rank = 1usize;
        for cand in (0..n).filter(|&c| c != triple.tail) {
            let t = Triple { tail: cand, ..*triple };
            if kg.contains(&t) {
                continue;
            }
            if table.energy(&t) <= true_energy {
                rank += 1;
            }
        }
        if rank <= k {
            hits += 1;
        }
        rank_sum += rank as f64;
    }
    let q = kg.triples().len();
    Ok(LinkPredictionReport {
        k,
        hits_at_k: if q == 0 { 0.0 } else { hits as f64 / q as f64 },
        mean_rank: if q == 0 { 0.0 } else { rank_sum / q as f64 },
        queries: q,
    })
}
