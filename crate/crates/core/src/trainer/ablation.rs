use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::run_with_embeddings;
use super::{prepare_embeddings, ExperimentConfig, ExperimentInputs, Result, TrainerError};
use crate::kge::{EmbeddingTable, KgeMethod};
use crate::newsgraph::Relation;
use crate::util::{derive_seed_indexed, mean_std};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    TripleDensity,
    EdgeDensity,
    EdgeType,
    KgeMethod,
    KgeEpochs,
    GnnVariant,
}

impl Study {
    pub const ALL: [Study; 6] =
        [Study::TripleDensity, Study::EdgeDensity, Study::EdgeType, Study::KgeMethod, Study::KgeEpochs, Study::GnnVariant];

    pub fn as_str(self) -> &'static str {
        match self {
            Study::TripleDensity => "triple_density",
            Study::EdgeDensity => "edge_density",
            Study::EdgeType => "edge_type",
            Study::KgeMethod => "kge_method",
            Study::KgeEpochs => "kge_epochs",
            Study::GnnVariant => "gnn_variant",
        }
    }

    /// The configuration for one grid point.
    ///
    /// Grid values: keep fractions in `[0, 1]` for the density studies; for
    /// `edge_type`, `none` or the relation to remove (`doc-para`,
    /// `para-para`, `para-ent`); `transe`/`distmult`; epoch counts; variant names.
    pub fn apply(self, base: &ExperimentConfig, value: &str) -> Result<ExperimentConfig> {
        let bad = |msg: String| TrainerError::Grid { study: self.as_str().into(), value: value.into(), msg };
        let fraction = || {
            value
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|f| (0.0..=1.0).contains(f))
                .ok_or_else(|| bad("expected a fraction in [0, 1]".into()))
        };
        let mut c = base.clone();
        match self {
            Study::TripleDensity => c.triple_keep = fraction()?,
            Study::EdgeDensity => c.build.para_ent_keep = fraction()?,
            Study::EdgeType => {
                if value.trim() != "none" {
                    match value.parse::<Relation>().map_err(bad)? {
                        Relation::DocPara => c.build.doc_para = false,
                        Relation::ParaPara => c.build.para_para = false,
                        Relation::ParaEnt => c.build.para_ent = false,
                    }
                }
            }
            Study::KgeMethod => c.kge.method = value.parse::<KgeMethod>().map_err(|e| bad(e.to_string()))?,
            Study::KgeEpochs => {
                c.kge.epochs = value.trim().parse().map_err(|_| bad("expected an epoch count".into()))?
            }
            Study::GnnVariant => c.gnn.variant = value.parse().map_err(bad)?,
        }
        Ok(c)
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = TrainerError;
    fn from_str(s: &str) -> Result<Self> {
        Study::ALL.into_iter().find(|st| st.as_str() == s.trim()).ok_or_else(|| TrainerError::UnknownStudy(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub grid_point: String,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub grid_point: String,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub study: Study,
    pub runs: Vec<AblationRun>,
    pub summary: Vec<AblationSummary>,
}

impl AblationTable {
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "grid_point,seed,accuracy,macro_f1")?;
        for r in &self.runs {
            writeln!(w, "{},{},{},{}", r.grid_point, r.seed, r.accuracy, r.macro_f1)?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "grid_point,runs,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std")?;
        for s in &self.summary {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.grid_point, s.runs, s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std
            )?;
        }
        Ok(())
    }

    pub fn summary_for(&self, grid_point: &str) -> Option<&AblationSummary> {
        self.summary.iter().find(|s| s.grid_point == grid_point)
    }
}

/// Runs every grid point `repetitions` times with seeds shared across grid
/// points, so repetition `r` of each point uses the same split and init.
/// Embeddings are trained once per distinct (KG thinning, KGE config, seed).
pub fn ablate(
    inputs: &ExperimentInputs<'_>,
    study: Study,
    grid: &[String],
    base: &ExperimentConfig,
    repetitions: usize,
) -> Result<AblationTable> {
    let configs: Vec<(String, ExperimentConfig)> =
        grid.iter().map(|v| Ok((v.trim().to_string(), study.apply(base, v)?))).collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64, ExperimentConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(g, (_, c))| {
            (0..repetitions as u64).map(move |r| {
                let seed = derive_seed_indexed(base.seed, "repetition", r);
                (g, seed, ExperimentConfig { seed, ..c.clone() })
            })
        })
        .collect();

    let emb_key = |c: &ExperimentConfig| {
        serde_json::to_string(&(&c.kge, c.triple_keep, c.seed)).expect("config serialises")
    };
    let mut needed: BTreeMap<String, &ExperimentConfig> = BTreeMap::new();
    for (_, _, c) in &jobs {
        needed.entry(emb_key(c)).or_insert(c);
    }
    let tables: BTreeMap<String, Arc<EmbeddingTable>> = needed
        .into_par_iter()
        .map(|(key, c)| Ok((key, Arc::new(prepare_embeddings(inputs.kg, c.triple_keep, &c.kge, c.seed)?))))
        .collect::<Result<_>>()?;

    let runs: Vec<AblationRun> = jobs
        .par_iter()
        .map(|(g, seed, c)| {
            let r = run_with_embeddings(inputs, c, &tables[&emb_key(c)])?;
            log::info!("{study} {} seed {seed}: accuracy {:.4}", configs[*g].0, r.test.accuracy);
            Ok(AblationRun {
                grid_point: configs[*g].0.clone(),
                seed: *seed,
                accuracy: r.test.accuracy,
                macro_f1: r.test.macro_f1,
            })
        })
        .collect::<Result<_>>()?;

    let summary = configs
        .iter()
        .map(|(point, _)| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| &r.grid_point == point).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&mine.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (macro_f1_mean, macro_f1_std) = mean_std(&mine.iter().map(|r| r.macro_f1).collect::<Vec<_>>());
            AblationSummary { grid_point: point.clone(), runs: mine.len(), accuracy_mean, accuracy_std, macro_f1_mean, macro_f1_std }
        })
        .collect();
    Ok(AblationTable { study, runs, summary })
}
