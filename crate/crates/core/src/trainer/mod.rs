//! Training, evaluation, cross-validation and ablation studies.

mod ablation;
mod adam;
mod experiment;
mod folds;
mod metrics;
mod synth;

pub use ablation::{ablate, AblationRun, AblationSummary, AblationTable, Study};
pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use experiment::{
    build_graphs, fit_features, prepare_embeddings, run_experiment, ExperimentConfig, ExperimentResult,
    ExperimentInputs,
};
pub use folds::{plan_folds, train_test_split, FoldPlan};
pub use metrics::{ClassMetrics, Metrics};
pub use synth::{generate_synthetic_corpus, SynthSpec, SyntheticCorpus, CONSERVATIVE, LIBERAL};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{self, model_backward, model_forward, GnnConfig, GnnError, ModelParams};
use crate::newsgraph::{batch_graphs, GraphError, NewsGraph};
use crate::util::{derive_seed, derive_seed_indexed, mean_std, Rng};
use rand::SeedableRng;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kg(#[from] crate::kgstore::KgError),
    #[error(transparent)]
    Kge(#[from] crate::kge::KgeError),
    #[error(transparent)]
    Feature(#[from] crate::textfeat::FeatureError),
    #[error(transparent)]
    Link(#[from] crate::linker::LinkError),
    #[error("graph `{0}` has no label")]
    Unlabeled(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0}")]
    Split(String),
    #[error("unknown study `{0}` (expected triple_density|edge_density|edge_type|kge_method|kge_epochs|gnn_variant)")]
    UnknownStudy(String),
    #[error("invalid grid value `{value}` for study {study}: {msg}")]
    Grid { study: String, value: String, msg: String },
    #[error("no graphs to train on")]
    Empty,
}

pub type Result<T> = std::result::Result<T, TrainerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// L2 coefficient λ.
    pub weight_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 50,
            weight_decay: 1e-5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainerError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be finite and >= 0");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainerError::Config(format!("{name} must be in [0, 1)")));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Sum of the mini-batch objectives seen during each epoch.
    pub loss_curve: Vec<f64>,
}

fn labels_of(graphs: &[&NewsGraph]) -> Result<Vec<usize>> {
    graphs.iter().map(|g| g.label.ok_or_else(|| TrainerError::Unlabeled(g.doc_id.clone()))).collect()
}

/// Mini-batch Adam on the summed cross-entropy plus L2 penalty.
pub fn fit(graphs: &[NewsGraph], train: &TrainConfig, config: &GnnConfig) -> Result<FitResult> {
    train.validate()?;
    config.validate()?;
    let first = graphs.first().ok_or(TrainerError::Empty)?;
    let all: Vec<&NewsGraph> = graphs.iter().collect();
    labels_of(&all)?;
    let mut params = ModelParams::init(config, first.text_dim, first.entity_dim, derive_seed(train.seed, "init"))?;
    let mut state = AdamState::new(&params);
    let adam = train.adam();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut loss_curve = Vec::with_capacity(train.epochs);
    let mut step = 0u64;
    for epoch in 0..train.epochs {
        order.sort_unstable();
        order.shuffle(&mut Rng::seed_from_u64(derive_seed_indexed(train.seed, "shuffle", epoch as u64)));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let members: Vec<&NewsGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let labels = labels_of(&members)?;
            let batch = batch_graphs(&members)?;
            let out = model_forward(&batch, &params, config, true, derive_seed_indexed(train.seed, "step", step))?;
            epoch_loss += gnn::loss_forward(&out, &labels, &params, train.weight_decay)?;
            let grads = model_backward(&out, &labels, &params, train.weight_decay)?;
            adam_step(&mut params, &grads.params, &mut state, &adam)?;
            step += 1;
        }
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        loss_curve.push(epoch_loss);
    }
    Ok(FitResult { params, loss_curve })
}

/// Eval-mode logits, one row per graph, computed in batches of `batch_size`.
pub fn predict_logits(
    params: &ModelParams,
    config: &GnnConfig,
    graphs: &[NewsGraph],
    batch_size: usize,
) -> Result<Array2<f64>> {
    let mut logits = Array2::zeros((graphs.len(), config.classes));
    let mut row = 0;
    for chunk in graphs.chunks(batch_size.max(1)) {
        let out = model_forward(&batch_graphs(chunk)?, params, config, false, 0)?;
        logits.slice_mut(ndarray::s![row..row + chunk.len(), ..]).assign(&out.logits);
        row += chunk.len();
    }
    Ok(logits)
}

pub fn predict(params: &ModelParams, config: &GnnConfig, graphs: &[NewsGraph]) -> Result<Vec<usize>> {
    let logits = predict_logits(params, config, graphs, 64)?;
    Ok(logits.rows().into_iter().map(|r| gnn::argmax(r.as_slice().expect("row"))).collect())
}

/// Argmax predictions scored against the graph labels.
pub fn evaluate(params: &ModelParams, config: &GnnConfig, graphs: &[NewsGraph]) -> Result<Metrics> {
    let refs: Vec<&NewsGraph> = graphs.iter().collect();
    let truth = labels_of(&refs)?;
    if let Some((g, &label)) = truth.iter().enumerate().find(|(_, &l)| l >= config.classes) {
        return Err(GnnError::Label { graph: g, label, classes: config.classes }.into());
    }
    Ok(Metrics::from_predictions(&truth, &predict(params, config, graphs)?, config.classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Metrics>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

impl KFoldReport {
    pub fn from_folds(k: usize, seed: u64, folds: Vec<Metrics>) -> Self {
        let acc: Vec<f64> = folds.iter().map(|m| m.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|m| m.macro_f1).collect();
        let (accuracy_mean, accuracy_std) = mean_std(&acc);
        let (macro_f1_mean, macro_f1_std) = mean_std(&f1);
        KFoldReport { k, seed, folds, accuracy_mean, accuracy_std, macro_f1_mean, macro_f1_std }
    }
}

/// Trains on `k - 1` folds and tests on the held-out one, for every fold.
pub fn kfold(graphs: &[NewsGraph], k: usize, seed: u64, train: &TrainConfig, config: &GnnConfig) -> Result<KFoldReport> {
    let groups: Vec<Option<String>> = graphs.iter().map(|g| g.group.clone()).collect();
    let plan = plan_folds(&groups, k, seed).map_err(TrainerError::Split)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|i| {
            let (train_idx, test_idx) = plan.split(i);
            let pick = |idx: &[usize]| idx.iter().map(|&j| graphs[j].clone()).collect::<Vec<_>>();
            let fold_train = TrainConfig { seed: derive_seed_indexed(train.seed, "fold", i as u64), ..*train };
            let fitted = fit(&pick(&train_idx), &fold_train, config)?;
            evaluate(&fitted.params, config, &pick(&test_idx))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KFoldReport::from_folds(k, seed, folds))
}
