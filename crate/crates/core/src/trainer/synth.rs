//! Synthetic corpus whose perspective signal lives in the knowledge graph.
//!
//! Politicians come in mirrored pairs: `"Kavor Talen"` (liberal) and
//! `"Talen Kavor"` (conservative) share a chamber, a state and the same two
//! name tokens. Documents also come in pairs: the second copy of each article
//! swaps every politician for its mirror and flips the label. Without
//! lexical leak the two copies are identical as bags of words, so only the
//! linked entities distinguish them. Each pair carries a shared `group` so
//! splits never separate it.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::kgstore::{EntityId, EntityType, KnowledgeGraph, Triple};
use crate::newsgraph::{write_corpus, NewsDocument};
use crate::util::{seeded_rng, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_docs: usize,
    /// Rounded up to an even count so every politician has a mirror.
    pub n_politicians: usize,
    /// Probability that a filler paragraph mentions a random politician
    /// who does not count toward the label.
    pub noise_paragraph_rate: f64,
    /// Inject label-specific words into signal paragraphs.
    pub lexical_leak: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec { n_docs: 200, n_politicians: 200, noise_paragraph_rate: 0.0, lexical_leak: false, seed: 0 }
    }
}

impl SynthSpec {
    /// Reads a TOML spec; omitted keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub kg: KnowledgeGraph,
    /// `(alias, canonical entity name)`.
    pub aliases: Vec<(String, String)>,
    pub docs: Vec<NewsDocument>,
}

impl SyntheticCorpus {
    pub fn write_aliases(&self, mut w: impl Write) -> std::io::Result<()> {
        for (alias, name) in &self.aliases {
            writeln!(w, "{alias}\t{name}")?;
        }
        Ok(())
    }

    /// Writes `entities.tsv`, `triples.tsv`, `aliases.tsv` and `corpus.jsonl`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        self.kg
            .save(&dir.join("triples.tsv"), &dir.join("entities.tsv"))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let mut aliases = Vec::new();
        self.write_aliases(&mut aliases)?;
        fs::write(dir.join("aliases.tsv"), aliases)?;
        let mut corpus = Vec::new();
        write_corpus(&mut corpus, &self.docs)?;
        fs::write(dir.join("corpus.jsonl"), corpus)
    }
}

pub const LIBERAL: usize = 0;
pub const CONSERVATIVE: usize = 1;

const STATES: [&str; 12] = [
    "Ohio", "Texas", "Iowa", "Utah", "Maine", "Nevada", "Oregon", "Georgia", "Arizona", "Vermont", "Kansas", "Florida",
];
const NOUNS: [&str; 40] = [
    "committee", "hearing", "budget", "vote", "bill", "policy", "reporters", "statement", "week", "officials",
    "debate", "session", "plan", "proposal", "measure", "county", "funding", "schedule", "office", "agency",
    "report", "meeting", "review", "program", "district", "council", "letter", "panel", "record", "question",
    "update", "response", "briefing", "agenda", "draft", "filing", "summary", "notice", "staff", "visit",
];
const VERBS: [&str; 10] =
    ["discussed", "announced", "reviewed", "addressed", "described", "mentioned", "outlined", "noted", "questioned", "cited"];
const LINKS: [&str; 8] = ["on", "about", "after", "before", "with", "during", "for", "near"];
const LEAK_WORDS: [[&str; 4]; 2] =
    [["progressive", "equity", "climate", "union"], ["traditional", "liberty", "border", "faith"]];

struct Politician {
    name: String,
    alias: String,
}

#[derive(Clone)]
enum Token {
    Word(&'static str),
    /// Politician index, and whether the alias form is used.
    Politician(usize, bool),
    State(usize),
    Leak(usize),
}

fn pseudo_word(rng: &mut Rng) -> String {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut w = String::new();
    for i in 0..5 {
        let set = if i % 2 == 0 { C } else { V };
        w.push(set[rng.gen_range(0..set.len())] as char);
    }
    let mut chars = w.chars();
    let first = chars.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn sentence(rng: &mut Rng, subject: Token, leak: bool) -> Vec<Token> {
    let noun = |rng: &mut Rng| Token::Word(NOUNS[rng.gen_range(0..NOUNS.len())]);
    let mut s = vec![subject, Token::Word(VERBS[rng.gen_range(0..VERBS.len())]), Token::Word("the"), noun(rng)];
    if leak {
        s.push(Token::Leak(rng.gen_range(0..4)));
    }
    s.extend([Token::Word(LINKS[rng.gen_range(0..LINKS.len())]), Token::Word("the"), noun(rng), noun(rng)]);
    s
}

fn filler(rng: &mut Rng) -> Vec<Token> {
    let noun = |rng: &mut Rng| Token::Word(NOUNS[rng.gen_range(0..NOUNS.len())]);
    let mut s = vec![Token::Word("the"), noun(rng), noun(rng)];
    s.push(Token::Word(VERBS[rng.gen_range(0..VERBS.len())]));
    s.extend([Token::Word("the"), noun(rng), Token::Word(LINKS[rng.gen_range(0..LINKS.len())]), noun(rng)]);
    s
}

fn render(tokens: &[Token], politicians: &[Politician], mirror: bool, label: usize) -> String {
    let words: Vec<String> = tokens
        .iter()
        .map(|t| match t {
            Token::Word(w) => w.to_string(),
            Token::Politician(p, alias) => {
                let p = if mirror { p ^ 1 } else { *p };
                if *alias { politicians[p].alias.clone() } else { politicians[p].name.clone() }
            }
            Token::State(s) => STATES[*s].to_string(),
            Token::Leak(j) => LEAK_WORDS[label][*j].to_string(),
        })
        .collect();
    let mut text = words.join(" ");
    text.push('.');
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => text,
    }
}

pub fn generate_synthetic_corpus(spec: &SynthSpec) -> SyntheticCorpus {
    let mut rng = seeded_rng(spec.seed, "synth");
    let n_pairs = spec.n_politicians.div_ceil(2).max(1);
    let rel = |kg: &KnowledgeGraph, name: &str| kg.relation_id(name).expect("default schema");

    let mut kg = KnowledgeGraph::new();
    let ideology = [
        kg.add_entity("Liberalism", EntityType::PoliticalIdeology).expect("fresh"),
        kg.add_entity("Conservatism", EntityType::PoliticalIdeology).expect("fresh"),
    ];
    let party = [
        kg.add_entity("Democratic Party", EntityType::PoliticalParty).expect("fresh"),
        kg.add_entity("Republican Party", EntityType::PoliticalParty).expect("fresh"),
    ];
    let states: Vec<EntityId> = STATES.iter().map(|s| kg.add_entity(s, EntityType::State).expect("fresh")).collect();
    let (favor, oppose, member, from) =
        (rel(&kg, "strongly_favor"), rel(&kg, "strongly_oppose"), rel(&kg, "member_of"), rel(&kg, "from"));
    for side in [LIBERAL, CONSERVATIVE] {
        let t = |relation, tail| Triple { head: party[side], relation, tail };
        kg.add_triple(t(favor, ideology[side])).expect("valid");
        kg.add_triple(t(oppose, ideology[1 - side])).expect("valid");
    }

    let reserved: HashSet<String> = NOUNS.iter().chain(&VERBS).chain(&LINKS).map(|w| w.to_string()).collect();
    let mut used: HashSet<String> = HashSet::new();
    let mut fresh_word = |rng: &mut Rng| loop {
        let w = pseudo_word(rng);
        if !reserved.contains(&w.to_lowercase()) && used.insert(w.clone()) {
            break w;
        }
    };

    let mut politicians = Vec::with_capacity(2 * n_pairs);
    let mut aliases = Vec::new();
    let mut entity_of = Vec::with_capacity(2 * n_pairs);
    for _ in 0..n_pairs {
        let (a, b) = (fresh_word(&mut rng), fresh_word(&mut rng));
        let senator = rng.gen_bool(0.5);
        let (kind, title) = if senator { (EntityType::Senator, "Sen.") } else { (EntityType::Congressperson, "Rep.") };
        let state = states[rng.gen_range(0..states.len())];
        for (side, name) in [(LIBERAL, format!("{a} {b}")), (CONSERVATIVE, format!("{b} {a}"))] {
            let id = kg.add_entity(&name, kind).expect("names are unique");
            let t = |relation, tail| Triple { head: id, relation, tail };
            kg.add_triple(t(favor, ideology[side])).expect("valid");
            kg.add_triple(t(oppose, ideology[1 - side])).expect("valid");
            kg.add_triple(t(member, party[side])).expect("valid");
            kg.add_triple(t(from, state)).expect("valid");
            let alias = format!("{title} {name}");
            aliases.push((alias.clone(), name.clone()));
            politicians.push(Politician { name, alias });
            entity_of.push(id);
        }
    }

    let mut docs = Vec::with_capacity(spec.n_docs);
    for k in 0..spec.n_docs.div_ceil(2) {
        let m = rng.gen_range(1..=3usize).min(n_pairs);
        let chosen = index::sample(&mut rng, n_pairs, m).into_vec();
        let minority = m == 3 && rng.gen_bool(0.5);
        let mut paragraphs: Vec<Vec<Token>> = chosen
            .iter()
            .enumerate()
            .map(|(i, &pair)| {
                let side = if minority && i == 0 { CONSERVATIVE } else { LIBERAL };
                let subject = Token::Politician(2 * pair + side, rng.gen_bool(0.3));
                sentence(&mut rng, subject, spec.lexical_leak)
            })
            .collect();
        for _ in 0..rng.gen_range(1..=3) {
            let p = if rng.gen_bool(spec.noise_paragraph_rate.clamp(0.0, 1.0)) {
                let who = rng.gen_range(0..2 * n_pairs);
                sentence(&mut rng, Token::Politician(who, false), false)
            } else if rng.gen_bool(0.5) {
                let state = Token::State(rng.gen_range(0..STATES.len()));
                sentence(&mut rng, state, false)
            } else {
                filler(&mut rng)
            };
            paragraphs.push(p);
        }
        paragraphs.shuffle(&mut rng);
        let title: Vec<Token> = (0..4).map(|_| Token::Word(NOUNS[rng.gen_range(0..NOUNS.len())])).collect();

        for (copy, label) in [(0, LIBERAL), (1, CONSERVATIVE)] {
            if docs.len() == spec.n_docs {
                break;
            }
            let mirror = copy == 1;
            docs.push(NewsDocument {
                id: format!("doc{k:04}{}", if mirror { 'b' } else { 'a' }),
                title: Some(render(&title, &politicians, mirror, label)),
                paragraphs: paragraphs.iter().map(|p| render(p, &politicians, mirror, label)).collect(),
                label: Some(label),
                group: Some(format!("pair{k:04}")),
            });
        }
    }
    SyntheticCorpus { kg, aliases, docs }
}
