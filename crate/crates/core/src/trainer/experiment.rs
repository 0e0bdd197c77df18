use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, fit, train_test_split, Metrics, Result, TrainConfig, TrainerError};
use crate::gnn::{GnnConfig, Variant};
use crate::kge::{train_embeddings, EmbeddingTable, KgeConfig};
use crate::kgstore::{drop_triples, KnowledgeGraph};
use crate::linker::Gazetteer;
use crate::newsgraph::{build_news_graph, BuildOptions, NewsDocument, NewsGraph};
use crate::textfeat::{fit_tfidf, FeatureProvider};
use crate::util::derive_seed;

/// Everything that stays fixed across the runs of a study.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentInputs<'a> {
    pub kg: &'a KnowledgeGraph,
    pub gazetteer: &'a Gazetteer,
    pub features: &'a FeatureProvider,
    pub docs: &'a [NewsDocument],
}

/// One end-to-end run: KG thinning, embeddings, graphs, split, training.
///
/// Every stage seed is derived from `seed`; the `seed` fields inside `kge`,
/// `train` and `build` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kge: KgeConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub build: BuildOptions,
    pub triple_keep: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    /// Desk-scale settings used for the synthetic studies.
    fn default() -> Self {
        ExperimentConfig {
            kge: KgeConfig { dim: 32, epochs: 300, ..Default::default() },
            gnn: GnnConfig { variant: Variant::GatedRgcn, hidden: 32, dropout: 0.5, ..Default::default() },
            train: TrainConfig { learning_rate: 5e-3, epochs: 50, ..Default::default() },
            build: BuildOptions::default(),
            triple_keep: 1.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub train: Metrics,
    pub test: Metrics,
    pub loss_curve: Vec<f64>,
    pub test_ids: Vec<String>,
}

/// Hashed TF-IDF fit on every title and paragraph in the corpus.
pub fn fit_features(docs: &[NewsDocument], dim: usize) -> Result<FeatureProvider> {
    let texts: Vec<&str> = docs
        .iter()
        .flat_map(|d| d.title.iter().map(String::as_str).chain(d.paragraphs.iter().map(String::as_str)))
        .collect();
    Ok(fit_tfidf(&texts, dim)?)
}

/// Thins the KG to `triple_keep` and trains embeddings on what remains. A KG
/// thinned to no triples yields the untrained initial table.
pub fn prepare_embeddings(kg: &KnowledgeGraph, triple_keep: f64, kge: &KgeConfig, seed: u64) -> Result<EmbeddingTable> {
    let thinned = drop_triples(kg, triple_keep, derive_seed(seed, "triples"))?;
    let epochs = if thinned.triples().is_empty() { 0 } else { kge.epochs };
    let config = KgeConfig { seed: derive_seed(seed, "kge"), epochs, ..kge.clone() };
    Ok(train_embeddings(&thinned, &config)?)
}

pub fn build_graphs(
    docs: &[NewsDocument],
    gazetteer: &Gazetteer,
    features: &FeatureProvider,
    embeddings: &EmbeddingTable,
    options: &BuildOptions,
) -> Result<Vec<NewsGraph>> {
    docs.par_iter()
        .map(|d| build_news_graph(d, gazetteer, features, embeddings, options).map_err(TrainerError::from))
        .collect()
}

pub fn run_experiment(inputs: &ExperimentInputs<'_>, config: &ExperimentConfig) -> Result<ExperimentResult> {
    let emb = prepare_embeddings(inputs.kg, config.triple_keep, &config.kge, config.seed)?;
    run_with_embeddings(inputs, config, &emb)
}

pub(crate) fn run_with_embeddings(
    inputs: &ExperimentInputs<'_>,
    config: &ExperimentConfig,
    embeddings: &EmbeddingTable,
) -> Result<ExperimentResult> {
    let options = BuildOptions { seed: derive_seed(config.seed, "edges"), ..config.build };
    let graphs = build_graphs(inputs.docs, inputs.gazetteer, inputs.features, embeddings, &options)?;
    let groups: Vec<Option<String>> = inputs.docs.iter().map(|d| d.group.clone()).collect();
    let (train_idx, test_idx) =
        train_test_split(&groups, config.test_fraction, derive_seed(config.seed, "split")).map_err(TrainerError::Split)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| graphs[i].clone()).collect::<Vec<_>>();
    let (train_graphs, test_graphs) = (pick(&train_idx), pick(&test_idx));
    let train = TrainConfig { seed: derive_seed(config.seed, "train"), ..config.train };
    let fitted = fit(&train_graphs, &train, &config.gnn)?;
    Ok(ExperimentResult {
        train: evaluate(&fitted.params, &config.gnn, &train_graphs)?,
        test: evaluate(&fitted.params, &config.gnn, &test_graphs)?,
        loss_curve: fitted.loss_curve,
        test_ids: test_graphs.iter().map(|g| g.doc_id.clone()).collect(),
    })
}
