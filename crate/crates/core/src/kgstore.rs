//! Political knowledge graph storage.
//!
//! Entities and relations are interned into dense ids in file order. The
//! default schema carries the ten relation kinds of the political KG; five of
//! them (`strongly_favor` .. `strongly_oppose`) are ideology relations produced
//! by bucketing think-tank scorecard scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{casefold, normalize_name, seeded_rng};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file} line {line}: expected {expected} tab-separated fields, found {found}")]
    FieldCount {
        file: &'static str,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{file} line {line}: empty entity name")]
    EmptyName { file: &'static str, line: usize },
    #[error("entities line {line}: unknown entity type `{value}`")]
    UnknownEntityType { line: usize, value: String },
    #[error("entities line {line}: duplicate entity `{name}` (case-folded)")]
    DuplicateEntity { line: usize, name: String },
    #[error("{file} line {line}: unknown relation `{name}`")]
    UnknownRelation {
        file: &'static str,
        line: usize,
        name: String,
    },
    #[error("{file} line {line}: reference to undeclared entity `{name}`")]
    DanglingEntity {
        file: &'static str,
        line: usize,
        name: String,
    },
    #[error("triples line {line}: duplicate triple ({head}, {relation}, {tail})")]
    DuplicateTriple {
        line: usize,
        head: String,
        relation: String,
        tail: String,
    },
    #[error("triples line {line}: ideology relation `{relation}` joins `{name}` to itself")]
    IdeologySelfLoop {
        line: usize,
        relation: String,
        name: String,
    },
    #[error("scorecard line {line}: invalid score `{value}`")]
    InvalidScore { line: usize, value: String },
    #[error("score {0} outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("entity `{0}` is not a political ideology")]
    NotIdeology(String),
    #[error("relation `{0}` is already registered")]
    RelationExists(String),
    #[error("id out of range: {0}")]
    BadId(String),
    #[error("keep fraction {0} outside [0, 1]")]
    KeepFraction(f64),
}

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    ElectedOffice,
    TimePeriod,
    President,
    SupremeCourtJustice,
    Senator,
    Congressperson,
    Governor,
    State,
    PoliticalParty,
    PoliticalIdeology,
}

impl EntityType {
    pub const ALL: [EntityType; 10] = [
        EntityType::ElectedOffice,
        EntityType::TimePeriod,
        EntityType::President,
        EntityType::SupremeCourtJustice,
        EntityType::Senator,
        EntityType::Congressperson,
        EntityType::Governor,
        EntityType::State,
        EntityType::PoliticalParty,
        EntityType::PoliticalIdeology,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::ElectedOffice => "elected_office",
            EntityType::TimePeriod => "time_period",
            EntityType::President => "president",
            EntityType::SupremeCourtJustice => "supreme_court_justice",
            EntityType::Senator => "senator",
            EntityType::Congressperson => "congressperson",
            EntityType::Governor => "governor",
            EntityType::State => "state",
            EntityType::PoliticalParty => "political_party",
            EntityType::PoliticalIdeology => "political_ideology",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityType {
    type Err = ();

    /// Accepts `political_party`, `political party` and `Political Party`.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let key = casefold(s.trim()).replace([' ', '-'], "_");
        EntityType::ALL
            .into_iter()
            .find(|t| t.as_str() == key)
            .ok_or(())
    }
}

/// Names of the default relation schema, in id order.
pub const DEFAULT_RELATIONS: [&str; 10] = [
    "affiliated_to",
    "from",
    "appoint",
    "overlap_with",
    "member_of",
    "strongly_favor",
    "favor",
    "neutral",
    "oppose",
    "strongly_oppose",
];

/// Relations that carry scorecard ideology; these may not be self-loops.
pub const IDEOLOGY_RELATIONS: [&str; 5] =
    ["strongly_favor", "favor", "neutral", "oppose", "strongly_oppose"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: EntityId,
    pub name: String,
    pub entity_type: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationKind {
    pub id: RelationId,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorecardRecord {
    pub legislator: EntityId,
    pub score: f64,
    pub ideology_target: EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub entities_by_type: BTreeMap<String, usize>,
    pub triples_by_relation: BTreeMap<String, usize>,
}

/// An immutable-after-load knowledge graph.
///
/// Triples keep insertion order; a hash set mirrors them for duplicate checks.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vec<EntityRecord>,
    relations: Vec<RelationKind>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    entity_index: HashMap<String, EntityId>,
    relation_index: HashMap<String, RelationId>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.entities == other.entities
            && self.relations == other.relations
            && self.triples == other.triples
    }
}

impl Default for KnowledgeGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeGraph {
    /// Empty graph with the default ten-relation schema.
    pub fn new() -> Self {
        let mut kg = KnowledgeGraph {
            entities: Vec::new(),
            relations: Vec::new(),
            triples: Vec::new(),
            triple_set: HashSet::new(),
            entity_index: HashMap::new(),
            relation_index: HashMap::new(),
        };
        for name in DEFAULT_RELATIONS {
            kg.register_relation(name).expect("default schema is unique");
        }
        kg
    }

    pub fn register_relation(&mut self, name: &str) -> Result<RelationId> {
        let key = casefold(name.trim());
        if self.relation_index.contains_key(&key) {
            return Err(KgError::RelationExists(name.to_string()));
        }
        let id = self.relations.len();
        self.relations.push(RelationKind {
            id,
            name: name.trim().to_string(),
        });
        self.relation_index.insert(key, id);
        Ok(id)
    }

    /// Adds an entity; `None` if the case-folded name is taken.
    pub fn add_entity(&mut self, name: &str, entity_type: EntityType) -> Option<EntityId> {
        let name = normalize_name(name);
        let key = casefold(&name);
        if name.is_empty() || self.entity_index.contains_key(&key) {
            return None;
        }
        let id = self.entities.len();
        self.entities.push(EntityRecord {
            id,
            name,
            entity_type,
        });
        self.entity_index.insert(key, id);
        Some(id)
    }

    /// Adds a triple; returns `Ok(false)` if it is already present.
    pub fn add_triple(&mut self, triple: Triple) -> Result<bool> {
        self.check_triple(&triple)?;
        if self.is_ideology_relation(triple.relation) && triple.head == triple.tail {
            return Err(KgError::IdeologySelfLoop {
                line: 0,
                relation: self.relations[triple.relation].name.clone(),
                name: self.entities[triple.head].name.clone(),
            });
        }
        if !self.triple_set.insert(triple) {
            return Ok(false);
        }
        self.triples.push(triple);
        Ok(true)
    }

    fn check_triple(&self, t: &Triple) -> Result<()> {
        if t.head >= self.entities.len() || t.tail >= self.entities.len() {
            return Err(KgError::BadId(format!("entity in {t:?}")));
        }
        if t.relation >= self.relations.len() {
            return Err(KgError::BadId(format!("relation in {t:?}")));
        }
        Ok(())
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationKind] {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn entity(&self, id: EntityId) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    /// Case-folded exact lookup.
    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_index.get(&casefold(&normalize_name(name))).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(&casefold(name.trim())).copied()
    }

    pub fn is_ideology_relation(&self, relation: RelationId) -> bool {
        self.relations
            .get(relation)
            .is_some_and(|r| IDEOLOGY_RELATIONS.contains(&r.name.as_str()))
    }

    pub fn stats(&self) -> KgStats {
        let mut entities_by_type = BTreeMap::new();
        for e in &self.entities {
            *entities_by_type
                .entry(e.entity_type.to_string())
                .or_insert(0) += 1;
        }
        let mut triples_by_relation = BTreeMap::new();
        for t in &self.triples {
            *triples_by_relation
                .entry(self.relations[t.relation].name.clone())
                .or_insert(0) += 1;
        }
        KgStats {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.triples.len(),
            entities_by_type,
            triples_by_relation,
        }
    }

    /// Same entities and relations, replacement triple list.
    fn with_triples(&self, triples: Vec<Triple>) -> KnowledgeGraph {
        KnowledgeGraph {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triple_set: triples.iter().copied().collect(),
            triples,
            entity_index: self.entity_index.clone(),
            relation_index: self.relation_index.clone(),
        }
    }

    /// Parses the entities and triples TSV streams.
    pub fn from_readers(entities: impl Read, triples: impl Read) -> Result<Self> {
        let mut kg = KnowledgeGraph::new();
        for (line_no, line) in lines(entities, "entities")? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(KgError::FieldCount {
                    file: "entities",
                    line: line_no,
                    expected: 2,
                    found: fields.len(),
                });
            }
            let name = normalize_name(fields[0]);
            if name.is_empty() {
                return Err(KgError::EmptyName {
                    file: "entities",
                    line: line_no,
                });
            }
            let entity_type: EntityType =
                fields[1]
                    .parse()
                    .map_err(|_| KgError::UnknownEntityType {
                        line: line_no,
                        value: fields[1].to_string(),
                    })?;
            if kg.add_entity(&name, entity_type).is_none() {
                return Err(KgError::DuplicateEntity {
                    line: line_no,
                    name,
                });
            }
        }

        for (line_no, line) in lines(triples, "triples")? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(KgError::FieldCount {
                    file: "triples",
                    line: line_no,
                    expected: 3,
                    found: fields.len(),
                });
            }
            let resolve = |name: &str| {
                kg.entity_id(name).ok_or_else(|| KgError::DanglingEntity {
                    file: "triples",
                    line: line_no,
                    name: name.trim().to_string(),
                })
            };
            let head = resolve(fields[0])?;
            let tail = resolve(fields[2])?;
            let relation = kg
                .relation_id(fields[1])
                .ok_or_else(|| KgError::UnknownRelation {
                    file: "triples",
                    line: line_no,
                    name: fields[1].trim().to_string(),
                })?;
            let triple = Triple {
                head,
                relation,
                tail,
            };
            match kg.add_triple(triple) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(KgError::DuplicateTriple {
                        line: line_no,
                        head: kg.entities[head].name.clone(),
                        relation: kg.relations[relation].name.clone(),
                        tail: kg.entities[tail].name.clone(),
                    })
                }
                Err(KgError::IdeologySelfLoop { relation, name, .. }) => {
                    return Err(KgError::IdeologySelfLoop {
                        line: line_no,
                        relation,
                        name,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        Ok(kg)
    }

    pub fn write_entities(&self, mut w: impl Write) -> io::Result<()> {
        for e in &self.entities {
            writeln!(w, "{}\t{}", e.name, e.entity_type)?;
        }
        Ok(())
    }

    pub fn write_triples(&self, mut w: impl Write) -> io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entities[t.head].name, self.relations[t.relation].name, self.entities[t.tail].name
            )?;
        }
        Ok(())
    }

    pub fn save(&self, triples_path: &Path, entities_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_entities(&mut buf).expect("in-memory write");
        fs::write(entities_path, &buf).map_err(|e| io_err(entities_path, e))?;
        buf.clear();
        self.write_triples(&mut buf).expect("in-memory write");
        fs::write(triples_path, &buf).map_err(|e| io_err(triples_path, e))
    }
}

fn io_err(path: &Path, source: io::Error) -> KgError {
    KgError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Non-blank lines with 1-based line numbers; a trailing `\r` is dropped.
fn lines(r: impl Read, file: &'static str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| io_err(Path::new(file), e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

/// Loads and validates a knowledge graph from its two TSV files.
pub fn load_kg(triples_path: &Path, entities_path: &Path) -> Result<KnowledgeGraph> {
    let entities = fs::File::open(entities_path).map_err(|e| io_err(entities_path, e))?;
    let triples = fs::File::open(triples_path).map_err(|e| io_err(triples_path, e))?;
    KnowledgeGraph::from_readers(entities, triples)
}

/// Maps a scorecard score to its ideology relation name.
///
/// Buckets are lower-inclusive: `[90,100]` strongly_favor, `[75,90)` favor,
/// `[25,75)` neutral, `[10,25)` oppose, `[0,10)` strongly_oppose.
pub fn score_bucket(score: f64) -> Result<&'static str> {
    if !(0.0..=100.0).contains(&score) {
        return Err(KgError::ScoreOutOfRange(score));
    }
    Ok(match score {
        s if s >= 90.0 => "strongly_favor",
        s if s >= 75.0 => "favor",
        s if s >= 25.0 => "neutral",
        s if s >= 10.0 => "oppose",
        _ => "strongly_oppose",
    })
}

pub fn bucket_score(kg: &KnowledgeGraph, record: &ScorecardRecord) -> Result<Triple> {
    let target = kg
        .entity(record.ideology_target)
        .ok_or_else(|| KgError::BadId(format!("ideology target {}", record.ideology_target)))?;
    if target.entity_type != EntityType::PoliticalIdeology {
        return Err(KgError::NotIdeology(target.name.clone()));
    }
    if kg.entity(record.legislator).is_none() {
        return Err(KgError::BadId(format!("legislator {}", record.legislator)));
    }
    let relation_name = score_bucket(record.score)?;
    let relation = kg
        .relation_id(relation_name)
        .ok_or_else(|| KgError::UnknownRelation {
            file: "schema",
            line: 0,
            name: relation_name.to_string(),
        })?;
    Ok(Triple {
        head: record.legislator,
        relation,
        tail: record.ideology_target,
    })
}

/// Parses `legislator \t score \t ideology_target` lines against `kg`.
pub fn read_scorecard(kg: &KnowledgeGraph, r: impl Read) -> Result<Vec<ScorecardRecord>> {
    let mut records = Vec::new();
    for (line_no, line) in lines(r, "scorecard")? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::FieldCount {
                file: "scorecard",
                line: line_no,
                expected: 3,
                found: fields.len(),
            });
        }
        let resolve = |name: &str| {
            kg.entity_id(name).ok_or_else(|| KgError::DanglingEntity {
                file: "scorecard",
                line: line_no,
                name: name.trim().to_string(),
            })
        };
        let legislator = resolve(fields[0])?;
        let ideology_target = resolve(fields[2])?;
        let score: f64 = fields[1]
            .trim()
            .parse()
            .ok()
            .filter(|s: &f64| (0.0..=100.0).contains(s))
            .ok_or_else(|| KgError::InvalidScore {
                line: line_no,
                value: fields[1].to_string(),
            })?;
        if kg.entities[ideology_target].entity_type != EntityType::PoliticalIdeology {
            return Err(KgError::NotIdeology(kg.entities[ideology_target].name.clone()));
        }
        records.push(ScorecardRecord {
            legislator,
            score,
            ideology_target,
        });
    }
    Ok(records)
}

pub fn load_scorecard(kg: &KnowledgeGraph, path: &Path) -> Result<Vec<ScorecardRecord>> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_scorecard(kg, f)
}

/// Number of items kept when sampling `fraction` of `n`, i.e. `ceil(fraction * n)`.
///
/// Products within 1e-9 of an integer snap to it so that e.g. `0.1 * 30`
/// keeps 3, not 4.
pub fn kept_count(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

/// Uniformly keeps `ceil(keep_fraction * |triples|)` triples, without
/// replacement. Surviving triples retain their original order.
pub fn drop_triples(kg: &KnowledgeGraph, keep_fraction: f64, seed: u64) -> Result<KnowledgeGraph> {
    if !(0.0..=1.0).contains(&keep_fraction) {
        return Err(KgError::KeepFraction(keep_fraction));
    }
    let n = kg.triples.len();
    let keep = kept_count(keep_fraction, n);
    let mut rng = seeded_rng(seed, "drop_triples");
    let mut picked = index::sample(&mut rng, n, keep).into_vec();
    picked.sort_unstable();
    Ok(kg.with_triples(picked.into_iter().map(|i| kg.triples[i]).collect()))
}
