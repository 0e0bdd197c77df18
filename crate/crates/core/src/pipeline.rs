//! Staged, cached end-to-end runs.
//!
//! Stages are `kg → kge → graph → train → eval`. Each stage reads its
//! upstream artifacts from the output directory and writes its own, plus a
//! `<stage>.stamp` holding a SHA-256 over the stage inputs and the part of the
//! config it depends on. A stage whose stamp matches and whose outputs exist
//! is skipped.
//!
//! | stage | writes |
//! |-------|--------|
//! | kg    | `kg/entities.tsv`, `kg/triples.tsv`, `kg_stats.json` |
//! | kge   | `embeddings.tsv` |
//! | graph | `graphs.tsv` |
//! | train | `split.json`, `model.ckpt`, `loss_curve.json` |
//! | eval  | `metrics.json` |

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{FeatureKind, PipelineConfig};
use crate::gnn::{load_checkpoint, save_checkpoint};
use crate::kge::{train_embeddings, EmbeddingTable, KgeConfig};
use crate::kgstore::{drop_triples, load_kg};
use crate::linker::build_gazetteer;
use crate::newsgraph::{load_corpus, load_graphs, save_graphs, BuildOptions, NewsGraph};
use crate::textfeat::{ExternalVectors, FeatureProvider};
use crate::trainer::{build_graphs, evaluate, fit, fit_features, train_test_split, Metrics, TrainConfig};
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Kg,
    Kge,
    Graph,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Kg, Stage::Kge, Stage::Graph, Stage::Train, Stage::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Kg => "kg",
            Stage::Kge => "kge",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Kg => &["kg/entities.tsv", "kg/triples.tsv", "kg_stats.json"],
            Stage::Kge => &["embeddings.tsv"],
            Stage::Graph => &["graphs.tsv"],
            Stage::Train => &["split.json", "model.ckpt", "loss_curve.json"],
            Stage::Eval => &["metrics.json"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| format!("unknown stage `{s}` (expected kg|kge|graph|train|eval)"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` needs {artifact} from stage `{upstream}`; run `{upstream}` first")]
    MissingArtifact { stage: Stage, upstream: Stage, artifact: PathBuf },
    #[error("stage `{stage}` needs config key `{key}`")]
    MissingInput { stage: Stage, key: &'static str },
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PipelineReport {
    pub stages: Vec<(Stage, StageOutcome)>,
}

impl PipelineReport {
    pub fn outcome(&self, stage: Stage) -> Option<StageOutcome> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, o)| *o)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub train: Metrics,
    pub test: Metrics,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, source: Box::new(e) }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io(parent))?;
    }
    fs::write(path, bytes).map_err(io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write(path, text.as_bytes())
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
}

impl Runner<'_> {
    fn artifact(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, stage: Stage, upstream: Stage) -> Result<(), PipelineError> {
        for rel in upstream.outputs() {
            let p = self.artifact(rel);
            if !p.is_file() {
                return Err(PipelineError::MissingArtifact { stage, upstream, artifact: p });
            }
        }
        Ok(())
    }

    fn input<'p>(&self, stage: Stage, key: &'static str, p: &'p Option<PathBuf>) -> Result<&'p Path, PipelineError> {
        p.as_deref().ok_or(PipelineError::MissingInput { stage, key })
    }

    /// Digest over the stage name, config subset and input file contents.
    fn stamp(&self, stage: Stage, subset: &serde_json::Value, inputs: &[&Path]) -> Result<String, PipelineError> {
        let mut h = Sha256::new();
        h.update(stage.as_str().as_bytes());
        h.update(serde_json::to_vec(subset).expect("serializable"));
        for p in inputs {
            let bytes = fs::read(p).map_err(io(p))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }

    fn cached(&self, stage: Stage, stamp: &str) -> bool {
        let stamp_path = self.artifact(&format!("{stage}.stamp"));
        fs::read_to_string(stamp_path).is_ok_and(|s| s.trim() == stamp)
            && stage.outputs().iter().all(|rel| self.artifact(rel).is_file())
    }

    fn seal(&self, stage: Stage, stamp: &str) -> Result<(), PipelineError> {
        write(&self.artifact(&format!("{stage}.stamp")), format!("{stamp}\n").as_bytes())
    }

    fn run(&self, stage: Stage) -> Result<StageOutcome, PipelineError> {
        let c = self.config;
        let (subset, inputs): (serde_json::Value, Vec<PathBuf>) = match stage {
            Stage::Kg => {
                let e = self.input(stage, "kg_entities", &c.paths.kg_entities)?;
                let t = self.input(stage, "kg_triples", &c.paths.kg_triples)?;
                (serde_json::json!({ "triple_keep": c.triple_keep, "seed": c.seed }), vec![e.into(), t.into()])
            }
            Stage::Kge => {
                self.require(stage, Stage::Kg)?;
                let mut inputs = vec![self.artifact("kg/entities.tsv"), self.artifact("kg/triples.tsv")];
                inputs.extend(c.paths.embeddings.clone());
                (serde_json::json!({ "kge": c.kge, "seed": c.seed }), inputs)
            }
            Stage::Graph => {
                self.require(stage, Stage::Kg)?;
                self.require(stage, Stage::Kge)?;
                let corpus = self.input(stage, "corpus", &c.paths.corpus)?;
                let mut inputs = vec![self.artifact("kg/entities.tsv"), self.artifact("embeddings.tsv"), corpus.into()];
                inputs.extend(c.paths.aliases.clone());
                if c.features == FeatureKind::External {
                    inputs.push(self.input(stage, "text_vectors", &c.paths.text_vectors)?.into());
                }
                let subset = serde_json::json!({
                    "features": c.features, "text_dim": c.text_dim, "build": c.build, "seed": c.seed,
                    "aliases": c.paths.aliases.is_some(),
                });
                (subset, inputs)
            }
            Stage::Train => {
                self.require(stage, Stage::Graph)?;
                let subset = serde_json::json!({
                    "gnn": c.gnn, "train": c.train, "test_fraction": c.test_fraction, "seed": c.seed,
                });
                (subset, vec![self.artifact("graphs.tsv")])
            }
            Stage::Eval => {
                self.require(stage, Stage::Graph)?;
                self.require(stage, Stage::Train)?;
                let inputs = vec![self.artifact("graphs.tsv"), self.artifact("split.json"), self.artifact("model.ckpt")];
                (serde_json::json!({}), inputs)
            }
        };
        let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        let stamp = self.stamp(stage, &subset, &input_refs)?;
        if self.cached(stage, &stamp) {
            log::info!("stage {stage}: up to date");
            return Ok(StageOutcome::Cached);
        }
        log::info!("stage {stage}: running");
        match stage {
            Stage::Kg => self.kg()?,
            Stage::Kge => self.kge()?,
            Stage::Graph => self.graph()?,
            Stage::Train => self.train()?,
            Stage::Eval => self.eval()?,
        }
        self.seal(stage, &stamp)?;
        Ok(StageOutcome::Ran)
    }

    fn kg(&self) -> Result<(), PipelineError> {
        let c = self.config;
        let stage = Stage::Kg;
        let kg = load_kg(
            self.input(stage, "kg_triples", &c.paths.kg_triples)?,
            self.input(stage, "kg_entities", &c.paths.kg_entities)?,
        )
        .map_err(stage_err(stage))?;
        let thinned = drop_triples(&kg, c.triple_keep, derive_seed(c.seed, "triples")).map_err(stage_err(stage))?;
        let kg_dir = self.artifact("kg");
        fs::create_dir_all(&kg_dir).map_err(io(&kg_dir))?;
        thinned
            .save(&kg_dir.join("triples.tsv"), &kg_dir.join("entities.tsv"))
            .map_err(stage_err(stage))?;
        write_json(
            &self.artifact("kg_stats.json"),
            &serde_json::json!({ "full": kg.stats(), "kept": thinned.stats(), "triple_keep": c.triple_keep }),
        )
    }

    fn kge(&self) -> Result<(), PipelineError> {
        let c = self.config;
        let stage = Stage::Kge;
        let out = self.artifact("embeddings.tsv");
        let table = match &c.paths.embeddings {
            Some(p) => EmbeddingTable::load(p).map_err(stage_err(stage))?,
            None => {
                let kg = load_kg(&self.artifact("kg/triples.tsv"), &self.artifact("kg/entities.tsv"))
                    .map_err(stage_err(stage))?;
                let epochs = if kg.triples().is_empty() { 0 } else { c.kge.epochs };
                let config = KgeConfig { seed: derive_seed(c.seed, "kge"), epochs, ..c.kge.clone() };
                train_embeddings(&kg, &config).map_err(stage_err(stage))?
            }
        };
        table.save(&out).map_err(stage_err(stage))
    }

    fn graph(&self) -> Result<(), PipelineError> {
        let c = self.config;
        let stage = Stage::Graph;
        let kg = load_kg(&self.artifact("kg/triples.tsv"), &self.artifact("kg/entities.tsv")).map_err(stage_err(stage))?;
        let gaz = build_gazetteer(&kg, c.paths.aliases.as_deref()).map_err(stage_err(stage))?;
        let emb = EmbeddingTable::load(&self.artifact("embeddings.tsv")).map_err(stage_err(stage))?;
        let docs = load_corpus(self.input(stage, "corpus", &c.paths.corpus)?).map_err(stage_err(stage))?;
        let features = match c.features {
            FeatureKind::Tfidf => fit_features(&docs, c.text_dim).map_err(stage_err(stage))?,
            FeatureKind::External => FeatureProvider::External(
                ExternalVectors::load(self.input(stage, "text_vectors", &c.paths.text_vectors)?)
                    .map_err(stage_err(stage))?,
            ),
        };
        let options = BuildOptions { seed: derive_seed(c.seed, "edges"), ..c.build };
        let graphs = build_graphs(&docs, &gaz, &features, &emb, &options).map_err(stage_err(stage))?;
        save_graphs(&self.artifact("graphs.tsv"), &graphs).map_err(stage_err(stage))
    }

    fn graphs(&self, stage: Stage) -> Result<Vec<NewsGraph>, PipelineError> {
        load_graphs(&self.artifact("graphs.tsv")).map_err(stage_err(stage))
    }

    fn train(&self) -> Result<(), PipelineError> {
        let c = self.config;
        let stage = Stage::Train;
        let graphs = self.graphs(stage)?;
        let groups: Vec<Option<String>> = graphs.iter().map(|g| g.group.clone()).collect();
        let (train_idx, test_idx) =
            train_test_split(&groups, c.test_fraction, derive_seed(c.seed, "split")).map_err(|msg| {
                PipelineError::Stage { stage, source: msg.into() }
            })?;
        let ids = |idx: &[usize]| idx.iter().map(|&i| graphs[i].doc_id.clone()).collect::<Vec<_>>();
        let split = SplitRecord { train: ids(&train_idx), test: ids(&test_idx) };
        let train_graphs: Vec<NewsGraph> = train_idx.iter().map(|&i| graphs[i].clone()).collect();
        let train = TrainConfig { seed: derive_seed(c.seed, "train"), ..c.train };
        let fitted = fit(&train_graphs, &train, &c.gnn).map_err(stage_err(stage))?;
        write_json(&self.artifact("split.json"), &split)?;
        save_checkpoint(&self.artifact("model.ckpt"), &c.gnn, &fitted.params).map_err(stage_err(stage))?;
        write_json(&self.artifact("loss_curve.json"), &fitted.loss_curve)
    }

    fn eval(&self) -> Result<(), PipelineError> {
        let stage = Stage::Eval;
        let graphs = self.graphs(stage)?;
        let path = self.artifact("split.json");
        let split: SplitRecord = serde_json::from_slice(&fs::read(&path).map_err(io(&path))?)
            .map_err(|e| PipelineError::Stage { stage, source: Box::new(e) })?;
        let (gnn, params) = load_checkpoint(&self.artifact("model.ckpt")).map_err(stage_err(stage))?;
        let pick = |ids: &[String]| -> Result<Vec<NewsGraph>, PipelineError> {
            ids.iter()
                .map(|id| {
                    graphs.iter().find(|g| &g.doc_id == id).cloned().ok_or_else(|| PipelineError::Stage {
                        stage,
                        source: format!("split names unknown document `{id}`").into(),
                    })
                })
                .collect()
        };
        let train = evaluate(&params, &gnn, &pick(&split.train)?).map_err(stage_err(stage))?;
        let test = evaluate(&params, &gnn, &pick(&split.test)?).map_err(stage_err(stage))?;
        write_json(
            &self.artifact("metrics.json"),
            &MetricsRecord { accuracy: test.accuracy, macro_f1: test.macro_f1, train, test },
        )
    }
}

/// Runs the requested stages in dependency order.
pub fn run_pipeline(config: &PipelineConfig, stages: &BTreeSet<Stage>) -> Result<PipelineReport, PipelineError> {
    let out = &config.paths.out_dir;
    fs::create_dir_all(out).map_err(io(out))?;
    let runner = Runner { config, out };
    let mut report = PipelineReport::default();
    for &stage in stages {
        report.stages.push((stage, runner.run(stage)?));
    }
    Ok(report)
}
