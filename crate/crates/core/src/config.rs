//! Flat `key = value` pipeline configuration (TOML syntax).
//!
//! Every key is optional; omitted keys take their defaults. Unknown keys are
//! rejected with the closest known key as a suggestion. Relative paths are
//! resolved against the directory containing the config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::gnn::{GnnConfig, Variant};
use crate::kge::{KgeConfig, KgeMethod, Norm};
use crate::newsgraph::BuildOptions;
use crate::trainer::{ExperimentConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Tfidf,
    External,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PipelinePaths {
    pub kg_entities: Option<PathBuf>,
    pub kg_triples: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Pre-computed entity embeddings; when set the kge stage copies them.
    pub embeddings: Option<PathBuf>,
    /// External text vectors, required when `features = "external"`.
    pub text_vectors: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    pub features: FeatureKind,
    pub text_dim: usize,
    pub kge: KgeConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub build: BuildOptions,
    pub triple_keep: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PipelinePaths { out_dir: PathBuf::from("out"), ..Default::default() },
            features: FeatureKind::Tfidf,
            text_dim: 512,
            kge: KgeConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            build: BuildOptions::default(),
            triple_keep: 1.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            kge: self.kge.clone(),
            gnn: self.gnn,
            train: self.train,
            build: self.build,
            triple_keep: self.triple_keep,
            test_fraction: self.test_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub value: String,
    pub constraint: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.value, self.constraint)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("{} config error(s):\n  {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(v) => v,
            _ => &[],
        }
    }
}

pub const KEYS: [&str; 37] = [
    "kg_entities",
    "kg_triples",
    "aliases",
    "corpus",
    "embeddings",
    "text_vectors",
    "out_dir",
    "features",
    "text_dim",
    "kge_method",
    "kge_dim",
    "kge_epochs",
    "kge_learning_rate",
    "kge_margin",
    "kge_negatives",
    "kge_norm",
    "variant",
    "layers",
    "hidden",
    "classes",
    "leaky_slope",
    "dropout",
    "learning_rate",
    "batch_size",
    "epochs",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "doc_para",
    "para_para",
    "para_ent",
    "para_ent_keep",
    "triple_keep",
    "test_fraction",
    "seed",
    "max_epochs",
];

fn suggest(key: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|k| (strsim::normalized_levenshtein(key, k), *k))
        .filter(|(score, _)| *score >= 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

struct Reader<'a> {
    base: &'a Path,
    issues: Vec<ConfigIssue>,
}

impl Reader<'_> {
    fn issue(&mut self, field: &str, value: &toml::Value, constraint: impl Into<String>) {
        self.issues.push(ConfigIssue { field: field.into(), value: value.to_string(), constraint: constraint.into() });
    }

    fn float(&mut self, field: &str, v: &toml::Value, ok: impl Fn(f64) -> bool, constraint: &str) -> Option<f64> {
        let x = v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
        match x {
            Some(x) if x.is_finite() && ok(x) => Some(x),
            Some(_) => {
                self.issue(field, v, constraint);
                None
            }
            None => {
                self.issue(field, v, "expected a number");
                None
            }
        }
    }

    fn uint(&mut self, field: &str, v: &toml::Value, min: u64) -> Option<u64> {
        match v.as_integer() {
            Some(i) if i >= 0 && i as u64 >= min => Some(i as u64),
            Some(_) => {
                self.issue(field, v, format!("must be an integer >= {min}"));
                None
            }
            None => {
                self.issue(field, v, "expected an integer");
                None
            }
        }
    }

    fn boolean(&mut self, field: &str, v: &toml::Value) -> Option<bool> {
        let b = v.as_bool();
        if b.is_none() {
            self.issue(field, v, "expected true or false");
        }
        b
    }

    fn string(&mut self, field: &str, v: &toml::Value) -> Option<String> {
        let s = v.as_str().map(str::to_string);
        if s.is_none() {
            self.issue(field, v, "expected a string");
        }
        s
    }

    fn path(&mut self, field: &str, v: &toml::Value, must_exist: bool) -> Option<PathBuf> {
        let p = self.base.join(self.string(field, v)?);
        if must_exist && !p.exists() {
            self.issue(field, v, format!("path {} does not exist", p.display()));
            return None;
        }
        Some(p)
    }

    fn parsed<T: std::str::FromStr>(&mut self, field: &str, v: &toml::Value, options: &str) -> Option<T> {
        let s = self.string(field, v)?;
        let parsed = s.parse().ok();
        if parsed.is_none() {
            self.issue(field, v, format!("expected one of {options}"));
        }
        parsed
    }
}

/// Parses configuration text; `base` anchors relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<PipelineConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut c = PipelineConfig { paths: PipelinePaths { out_dir: base.join("out"), ..Default::default() }, ..Default::default() };
    let mut r = Reader { base, issues: Vec::new() };
    let pos = |x: f64| x > 0.0;
    let unit = |x: f64| (0.0..=1.0).contains(&x);
    let open_unit = |x: f64| (0.0..1.0).contains(&x);
    let mut max_epochs = None;
    for (key, v) in &table {
        let k = key.as_str();
        match k {
            "kg_entities" => c.paths.kg_entities = r.path(k, v, true),
            "kg_triples" => c.paths.kg_triples = r.path(k, v, true),
            "aliases" => c.paths.aliases = r.path(k, v, true),
            "corpus" => c.paths.corpus = r.path(k, v, true),
            "embeddings" => c.paths.embeddings = r.path(k, v, true),
            "text_vectors" => c.paths.text_vectors = r.path(k, v, true),
            "out_dir" => {
                if let Some(p) = r.path(k, v, false) {
                    c.paths.out_dir = p;
                }
            }
            "features" => {
                if let Some(s) = r.string(k, v) {
                    match s.as_str() {
                        "tfidf" => c.features = FeatureKind::Tfidf,
                        "external" => c.features = FeatureKind::External,
                        _ => r.issue(k, v, "expected one of tfidf|external"),
                    }
                }
            }
            "text_dim" => c.text_dim = r.uint(k, v, 1).map_or(c.text_dim, |x| x as usize),
            "kge_method" => c.kge.method = r.parsed::<KgeMethod>(k, v, "transe|distmult").unwrap_or(c.kge.method),
            "kge_dim" => c.kge.dim = r.uint(k, v, 1).map_or(c.kge.dim, |x| x as usize),
            "kge_epochs" => c.kge.epochs = r.uint(k, v, 0).map_or(c.kge.epochs, |x| x as usize),
            "kge_learning_rate" => {
                c.kge.learning_rate = r.float(k, v, pos, "must be > 0").unwrap_or(c.kge.learning_rate)
            }
            "kge_margin" => c.kge.margin = r.float(k, v, pos, "must be > 0").unwrap_or(c.kge.margin),
            "kge_negatives" => {
                c.kge.negatives_per_positive = r.uint(k, v, 1).map_or(c.kge.negatives_per_positive, |x| x as usize)
            }
            "kge_norm" => c.kge.norm = r.parsed::<Norm>(k, v, "l1|l2").unwrap_or(c.kge.norm),
            "variant" => {
                c.gnn.variant = r.parsed::<Variant>(k, v, "gated_rgcn|rgcn|gcn_homogeneous").unwrap_or(c.gnn.variant)
            }
            "layers" => c.gnn.layers = r.uint(k, v, 1).map_or(c.gnn.layers, |x| x as usize),
            "hidden" => c.gnn.hidden = r.uint(k, v, 1).map_or(c.gnn.hidden, |x| x as usize),
            "classes" => c.gnn.classes = r.uint(k, v, 2).map_or(c.gnn.classes, |x| x as usize),
            "leaky_slope" => {
                c.gnn.leaky_slope = r.float(k, v, |x| x >= 0.0, "must be >= 0").unwrap_or(c.gnn.leaky_slope)
            }
            "dropout" => c.gnn.dropout = r.float(k, v, open_unit, "must be in [0, 1)").unwrap_or(c.gnn.dropout),
            "learning_rate" => {
                c.train.learning_rate =
                    r.float(k, v, |x| x >= 0.0, "must be >= 0").unwrap_or(c.train.learning_rate)
            }
            "batch_size" => c.train.batch_size = r.uint(k, v, 1).map_or(c.train.batch_size, |x| x as usize),
            "epochs" => c.train.epochs = r.uint(k, v, 1).map_or(c.train.epochs, |x| x as usize),
            "max_epochs" => max_epochs = r.uint(k, v, 1),
            "weight_decay" => {
                c.train.weight_decay = r.float(k, v, |x| x >= 0.0, "must be >= 0").unwrap_or(c.train.weight_decay)
            }
            "beta1" => c.train.beta1 = r.float(k, v, open_unit, "must be in [0, 1)").unwrap_or(c.train.beta1),
            "beta2" => c.train.beta2 = r.float(k, v, open_unit, "must be in [0, 1)").unwrap_or(c.train.beta2),
            "adam_eps" => c.train.eps = r.float(k, v, pos, "must be > 0").unwrap_or(c.train.eps),
            "doc_para" => c.build.doc_para = r.boolean(k, v).unwrap_or(c.build.doc_para),
            "para_para" => c.build.para_para = r.boolean(k, v).unwrap_or(c.build.para_para),
            "para_ent" => c.build.para_ent = r.boolean(k, v).unwrap_or(c.build.para_ent),
            "para_ent_keep" => {
                c.build.para_ent_keep = r.float(k, v, unit, "must be in [0, 1]").unwrap_or(c.build.para_ent_keep)
            }
            "triple_keep" => c.triple_keep = r.float(k, v, unit, "must be in [0, 1]").unwrap_or(c.triple_keep),
            "test_fraction" => {
                c.test_fraction =
                    r.float(k, v, |x| x > 0.0 && x < 1.0, "must be in (0, 1)").unwrap_or(c.test_fraction)
            }
            "seed" => c.seed = r.uint(k, v, 0).unwrap_or(c.seed),
            _ => {
                let hint = suggest(k).map(|s| format!("; did you mean `{s}`?")).unwrap_or_default();
                r.issue(k, v, format!("unknown key{hint}"));
            }
        }
    }
    if let Some(m) = max_epochs {
        if table.contains_key("epochs") {
            r.issue("max_epochs", &table["max_epochs"], "conflicts with `epochs`; set only one");
        } else {
            c.train.epochs = m as usize;
        }
    }
    if c.features == FeatureKind::External && c.paths.text_vectors.is_none() && !r.issues.iter().any(|i| i.field == "text_vectors") {
        r.issues.push(ConfigIssue {
            field: "text_vectors".into(),
            value: "(unset)".into(),
            constraint: "required when features = \"external\"".into(),
        });
    }
    if r.issues.is_empty() {
        Ok(c)
    } else {
        Err(ConfigError::Invalid(r.issues))
    }
}

/// Reads and validates a config file, filling defaults.
pub fn validate_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Unreadable { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        parse_config(text, Path::new(""))
    }

    #[test]
    fn empty_config_is_fully_defaulted() {
        let c = parse("").unwrap();
        assert_eq!((c.gnn.hidden, c.gnn.layers), (512, 2));
        assert_eq!((c.train.learning_rate, c.train.batch_size, c.train.weight_decay), (1e-3, 16, 1e-5));
        assert_eq!(c.gnn.dropout, 0.5);
        assert_eq!(c.kge.dim, 200);
    }

    #[test]
    fn negative_learning_rate() {
        let err = parse("learning_rate = -0.1").unwrap_err();
        assert_eq!(err.issues().len(), 1);
        let issue = &err.issues()[0];
        assert_eq!(issue.field, "learning_rate");
        assert_eq!(issue.value, "-0.1");
        assert!(issue.constraint.contains(">= 0"));
    }

    #[test]
    fn unknown_key_suggestion() {
        let err = parse("learningrate = 0.1").unwrap_err();
        assert_eq!(err.issues().len(), 1);
        assert!(err.issues()[0].constraint.contains("did you mean `learning_rate`"), "{err}");
        let err = parse("zzzz = 1").unwrap_err();
        assert!(!err.issues()[0].constraint.contains("did you mean"));
    }

    #[test]
    fn every_issue_is_reported() {
        let err = parse("hidden = 0\nvariant = \"gat\"\ndropout = 1.5\ncorpus = \"/nonexistent/x.jsonl\"").unwrap_err();
        let mut fields: Vec<&str> = err.issues().iter().map(|i| i.field.as_str()).collect();
        fields.sort();
        assert_eq!(fields, ["corpus", "dropout", "hidden", "variant"]);
    }

    #[test]
    fn typed_values() {
        let c = parse(
            "variant = \"rgcn\"\nlayers = 3\nkge_method = \"distmult\"\npara_ent = false\nseed = 7\nlearning_rate = 1\nmax_epochs = 150",
        )
        .unwrap();
        assert_eq!(c.gnn.variant, Variant::Rgcn);
        assert_eq!(c.gnn.layers, 3);
        assert_eq!(c.kge.method, KgeMethod::DistMult);
        assert!(!c.build.para_ent);
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.learning_rate, 1.0);
        assert_eq!(c.train.epochs, 150);
        assert!(parse("features = \"external\"").is_err());
        assert!(parse("seed = ").is_err());
    }

    #[test]
    fn relative_paths_and_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.jsonl"), "").unwrap();
        let cfg = dir.path().join("p.toml");
        fs::write(&cfg, "corpus = \"c.jsonl\"\nout_dir = \"o\"").unwrap();
        let c = validate_config(&cfg).unwrap();
        assert_eq!(c.paths.corpus, Some(dir.path().join("c.jsonl")));
        assert_eq!(c.paths.out_dir, dir.path().join("o"));
        assert!(matches!(validate_config(&dir.path().join("missing.toml")), Err(ConfigError::Unreadable { .. })));
    }
}
