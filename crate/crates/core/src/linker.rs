//! Deterministic gazetteer entity linking.
//!
//! Aliases are case-folded and stored in a character trie. Matching scans
//! left to right, takes the longest alias that starts at the current position
//! without cutting a word on either side, then resumes after it.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgstore::{EntityId, KnowledgeGraph};
use crate::util::normalize_name;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("alias `{alias}` maps to both `{first}` and `{second}`")]
    Collision {
        alias: String,
        first: String,
        second: String,
    },
    #[error("aliases line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("aliases line {line}: unknown entity `{name}`")]
    UnknownEntity { line: usize, name: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, LinkError>;

/// One linked mention; `start..end` are character (not byte) offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub entity: EntityId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<char, usize>,
    entity: Option<EntityId>,
}

#[derive(Debug, Clone)]
pub struct Gazetteer {
    nodes: Vec<TrieNode>,
    aliases: HashMap<String, EntityId>,
    entity_names: Vec<String>,
    per_entity: Vec<Vec<String>>,
}

fn fold_char(c: char) -> impl Iterator<Item = char> {
    c.to_lowercase()
}

fn fold(s: &str) -> String {
    normalize_name(s).chars().flat_map(fold_char).collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Gazetteer {
    fn empty(kg: &KnowledgeGraph) -> Self {
        Gazetteer {
            nodes: vec![TrieNode::default()],
            aliases: HashMap::new(),
            entity_names: kg.entities().iter().map(|e| e.name.clone()).collect(),
            per_entity: vec![Vec::new(); kg.entities().len()],
        }
    }

    /// A gazetteer that links nothing; graphs built with it have no entities.
    pub fn without_aliases(kg: &KnowledgeGraph) -> Self {
        Self::empty(kg)
    }

    /// Registers an alias; re-registering the same alias for the same entity
    /// is a no-op.
    pub fn add_alias(&mut self, alias: &str, entity: EntityId) -> Result<()> {
        let key = fold(alias);
        if key.is_empty() {
            return Err(LinkError::Parse { line: 0, msg: "empty alias".into() });
        }
        if let Some(&prev) = self.aliases.get(&key) {
            if prev == entity {
                return Ok(());
            }
            return Err(LinkError::Collision {
                alias: alias.to_string(),
                first: self.entity_names[prev].clone(),
                second: self.entity_names[entity].clone(),
            });
        }
        let mut node = 0;
        for c in key.chars() {
            node = match self.nodes[node].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(c, next);
                    next
                }
            };
        }
        self.nodes[node].entity = Some(entity);
        self.aliases.insert(key.clone(), entity);
        self.per_entity[entity].push(key);
        Ok(())
    }

    pub fn resolve(&self, alias: &str) -> Option<EntityId> {
        self.aliases.get(&fold(alias)).copied()
    }

    pub fn aliases_of(&self, entity: EntityId) -> &[String] {
        &self.per_entity[entity]
    }

    pub fn alias_count(&self) -> usize {
        self.aliases.len()
    }

    pub fn entity_name(&self, entity: EntityId) -> &str {
        &self.entity_names[entity]
    }

    /// Reads `alias \t entity_name` lines.
    pub fn add_alias_file(&mut self, kg: &KnowledgeGraph, r: impl Read) -> Result<()> {
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| LinkError::Parse { line: line_no, msg: e.to_string() })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (alias, name) = line.split_once('\t').ok_or_else(|| LinkError::Parse {
                line: line_no,
                msg: "expected `alias\\tentity_name`".into(),
            })?;
            let entity = kg.entity_id(name).ok_or_else(|| LinkError::UnknownEntity {
                line: line_no,
                name: name.trim().to_string(),
            })?;
            self.add_alias(alias, entity).map_err(|e| match e {
                LinkError::Parse { msg, .. } => LinkError::Parse { line: line_no, msg },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Longest-match-first, non-overlapping mentions sorted by start offset.
    pub fn link(&self, text: &str) -> Vec<Mention> {
        // Folded characters, each remembering the original char index it came from.
        let orig: Vec<char> = text.chars().collect();
        let mut folded: Vec<(char, usize)> = Vec::with_capacity(orig.len());
        for (i, &c) in orig.iter().enumerate() {
            folded.extend(fold_char(c).map(|f| (f, i)));
        }
        let splits_word = |pos: usize| pos > 0 && pos < orig.len() && is_word(orig[pos - 1]) && is_word(orig[pos]);

        let mut mentions = Vec::new();
        let mut i = 0;
        while i < folded.len() {
            let start = folded[i].1;
            // Only the first folded char of an original char may start a match.
            let char_start = i == 0 || folded[i - 1].1 != start;
            if !char_start || splits_word(start) {
                i += 1;
                continue;
            }
            let mut node = 0;
            let mut best: Option<(usize, EntityId)> = None;
            for (j, &(c, _)) in folded.iter().enumerate().skip(i) {
                let Some(&next) = self.nodes[node].children.get(&c) else { break };
                node = next;
                if let Some(entity) = self.nodes[node].entity {
                    let at_char_end = folded.get(j + 1).is_none_or(|&(_, o)| o != folded[j].1);
                    let end = folded[j].1 + 1;
                    if at_char_end && !splits_word(end) {
                        best = Some((j + 1, entity));
                    }
                }
            }
            match best {
                Some((next_i, entity)) => {
                    mentions.push(Mention { entity, start, end: folded[next_i - 1].1 + 1 });
                    i = next_i;
                }
                None => i += 1,
            }
        }
        mentions
    }
}

/// Canonical entity names plus the optional alias file.
pub fn build_gazetteer(kg: &KnowledgeGraph, aliases_path: Option<&Path>) -> Result<Gazetteer> {
    let mut gaz = Gazetteer::empty(kg);
    for e in kg.entities() {
        gaz.add_alias(&e.name, e.id)?;
    }
    if let Some(path) = aliases_path {
        let f = fs::File::open(path).map_err(|source| LinkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        gaz.add_alias_file(kg, f)?;
    }
    Ok(gaz)
}

pub fn link_entities(gaz: &Gazetteer, text: &str) -> Vec<Mention> {
    gaz.link(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgstore::EntityType;

    fn kg() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::new();
        kg.add_entity("Ted Cruz", EntityType::Senator);
        kg.add_entity("Texas", EntityType::State);
        kg.add_entity("Rafael Cruz", EntityType::Congressperson);
        kg.add_entity("the U.S. Senate", EntityType::ElectedOffice);
        kg
    }

    #[test]
    fn canonical_names_registered() {
        let gaz = build_gazetteer(&kg(), None).unwrap();
        assert_eq!(gaz.resolve("ted cruz"), Some(0));
        assert_eq!(gaz.aliases_of(0), ["ted cruz"]);
    }

    #[test]
    fn alias_file_and_collisions() {
        let kg = kg();
        let mut gaz = build_gazetteer(&kg, None).unwrap();
        gaz.add_alias_file(&kg, "Senator Cruz\tTed Cruz\n".as_bytes()).unwrap();
        assert_eq!(gaz.resolve("senator cruz"), gaz.resolve("Ted Cruz"));

        let mut gaz = build_gazetteer(&kg, None).unwrap();
        let err = gaz
            .add_alias_file(&kg, "Cruz\tTed Cruz\nCruz\tRafael Cruz\n".as_bytes())
            .unwrap_err();
        assert!(matches!(err, LinkError::Collision { .. }));
        let err = gaz.add_alias_file(&kg, "X\tNobody\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LinkError::UnknownEntity { line: 1, .. }));
    }

    #[test]
    fn single_match_span() {
        let gaz = build_gazetteer(&kg(), None).unwrap();
        let m = gaz.link("Ted Cruz criticized the bill");
        assert_eq!(m, vec![Mention { entity: 0, start: 0, end: 8 }]);
        assert!(gaz.link("nothing to see here").is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let kg = kg();
        let mut gaz = build_gazetteer(&kg, None).unwrap();
        gaz.add_alias("Cruz", 0).unwrap();
        let m = gaz.link("Yesterday Ted Cruz spoke; later Cruz left.");
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].start, m[0].end), (10, 18));
        assert_eq!((m[1].start, m[1].end), (32, 36));
    }

    #[test]
    fn respects_word_boundaries() {
        let gaz = build_gazetteer(&kg(), None).unwrap();
        assert!(gaz.link("Texasville and Ted Cruzado").is_empty());
        let m = gaz.link("in TEXAS, and (Texas).");
        assert_eq!(m.len(), 2);
        // Aliases ending in punctuation still match before a space.
        let m = gaz.link("He joined the U.S. Senate in 2013");
        assert_eq!(m, vec![Mention { entity: 3, start: 10, end: 25 }]);
    }

    #[test]
    fn character_offsets_with_multibyte_text() {
        let gaz = build_gazetteer(&kg(), None).unwrap();
        let m = gaz.link("“Texas” é");
        assert_eq!(m, vec![Mention { entity: 1, start: 1, end: 6 }]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn words() -> impl Strategy<Value = String> {
            proptest::collection::vec(
                prop_oneof!["ted", "cruz", "texas", "the", "u.s.", "senate", "rafael", "and", "x"],
                0..20,
            )
            .prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn sorted_non_overlapping_and_deterministic(text in words()) {
                let kg = kg();
                let mut gaz = build_gazetteer(&kg, None).unwrap();
                gaz.add_alias("Cruz", 0).unwrap();
                let m = gaz.link(&text);
                for w in m.windows(2) {
                    prop_assert!(w[0].end <= w[1].start);
                }
                prop_assert_eq!(&m, &gaz.link(&text));
            }

            #[test]
            fn concatenation_splits(a in words(), b in words()) {
                let kg = kg();
                let gaz = build_gazetteer(&kg, None).unwrap();
                // A separator no alias contains keeps matches from crossing the boundary.
                let left = format!("{a} |");
                let joined = format!("{left} {b}");
                let offset = left.chars().count() + 1;
                let mut expected = gaz.link(&left);
                expected.extend(gaz.link(&b).into_iter().map(|m| Mention {
                    start: m.start + offset,
                    end: m.end + offset,
                    ..m
                }));
                prop_assert_eq!(gaz.link(&joined), expected);
            }
        }
    }
}
