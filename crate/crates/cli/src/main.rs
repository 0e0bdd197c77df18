use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stancegraph::config::{validate_config, FeatureKind, PipelineConfig};
use stancegraph::gnn::load_checkpoint;
use stancegraph::kge::{link_prediction_eval, train_embeddings, EmbeddingTable, KgeMethod, Norm};
use stancegraph::kgstore::{bucket_score, drop_triples, load_kg, load_scorecard, KnowledgeGraph};
use stancegraph::linker::{build_gazetteer, Gazetteer};
use stancegraph::newsgraph::{load_corpus, load_graphs, save_graphs, BuildOptions, NewsDocument, NewsGraph};
use stancegraph::pipeline::{run_pipeline, MetricsRecord, SplitRecord, Stage};
use stancegraph::textfeat::{ExternalVectors, FeatureProvider};
use stancegraph::trainer::{
    ablate, build_graphs, evaluate, fit_features, generate_synthetic_corpus, kfold, ExperimentInputs, Study, SynthSpec,
};
use stancegraph::util::derive_seed;

#[derive(Parser)]
#[command(name = "stancegraph", version, about = "Knowledge-aware political perspective detection")]
struct Cli {
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory; overrides the config value.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Pipeline config file (TOML key = value pairs).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge graph utilities.
    Kg {
        #[command(subcommand)]
        action: KgAction,
    },
    /// Knowledge graph embeddings.
    Kge {
        #[command(subcommand)]
        action: KgeAction,
    },
    /// Entity linking.
    Link {
        #[command(subcommand)]
        action: LinkAction,
    },
    /// News graph construction.
    Graph {
        #[command(subcommand)]
        action: GraphAction,
    },
    /// Run the kg, kge, graph and train stages.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        kg: KgArgs,
        /// Pre-trained embeddings; skips KGE training.
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
    /// Score a trained model.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Split file; only its test documents are scored.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Grouped k-fold cross-validation over a graph dump.
    Kfold {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        graphs: Option<PathBuf>,
    },
    /// Repeated runs over a one-factor grid.
    Ablate {
        /// triple_density, edge_density, edge_type, kge_method, kge_epochs or gnn_variant.
        #[arg(long)]
        study: Study,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Generate the inputs from a synthetic spec instead of config paths.
        #[arg(long)]
        synth: Option<PathBuf>,
    },
    /// Synthetic corpora.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Run pipeline stages with caching.
    Pipeline {
        #[arg(long, value_delimiter = ',', default_value = "kg,kge,graph,train,eval")]
        stages: Vec<Stage>,
    },
}

#[derive(Args, Clone, Default)]
struct KgArgs {
    /// Directory holding entities.tsv and triples.tsv.
    #[arg(long)]
    kg: Option<PathBuf>,
    #[arg(long, conflicts_with = "kg")]
    entities: Option<PathBuf>,
    #[arg(long, conflicts_with = "kg")]
    triples: Option<PathBuf>,
}

impl KgArgs {
    fn paths(&self, cfg: &PipelineConfig) -> Result<(PathBuf, PathBuf)> {
        if let Some(dir) = &self.kg {
            return Ok((dir.join("entities.tsv"), dir.join("triples.tsv")));
        }
        let entities = self.entities.clone().or_else(|| cfg.paths.kg_entities.clone());
        let triples = self.triples.clone().or_else(|| cfg.paths.kg_triples.clone());
        match (entities, triples) {
            (Some(e), Some(t)) => Ok((e, t)),
            _ => bail!("no knowledge graph given: pass --kg DIR, --entities/--triples, or set kg_entities/kg_triples"),
        }
    }

    fn load(&self, cfg: &PipelineConfig) -> Result<KnowledgeGraph> {
        let (e, t) = self.paths(cfg)?;
        load_kg(&t, &e).with_context(|| format!("loading {} and {}", e.display(), t.display()))
    }
}

#[derive(Subcommand)]
enum KgAction {
    /// Check the files and print counts.
    Validate {
        #[command(flatten)]
        kg: KgArgs,
    },
    /// Print entity and triple counts as JSON.
    Stats {
        #[command(flatten)]
        kg: KgArgs,
    },
    /// Add scorecard-derived ideology triples; writes OUT_DIR/kg.
    Bucket {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        scorecard: PathBuf,
    },
    /// Keep a random fraction of triples; writes OUT_DIR/kg.
    Drop {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        keep: f64,
    },
}

#[derive(Subcommand)]
enum KgeAction {
    Train {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        method: Option<KgeMethod>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        norm: Option<Norm>,
        /// Defaults to OUT_DIR/embeddings.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filtered tail-prediction Hits@k and mean rank.
    Eval {
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum LinkAction {
    /// Print doc_id, para_index, entity_name, start, end for every mention.
    Run {
        /// JSONL corpus.
        #[arg(long)]
        doc: PathBuf,
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        aliases: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphAction {
    Build {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        kg: KgArgs,
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long)]
        aliases: Option<PathBuf>,
        /// Defaults to OUT_DIR/graphs.tsv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthAction {
    /// Write entities.tsv, triples.tsv, aliases.tsv and corpus.jsonl.
    Generate {
        /// TOML spec; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        docs: Option<usize>,
        #[arg(long)]
        politicians: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        leak: bool,
        /// Defaults to OUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn settings(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => validate_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn required(value: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.or_else(|| fallback.clone()).with_context(|| format!("missing --{what} (or set `{what}` in the config)"))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_kg(kg: &KnowledgeGraph, out_dir: &Path) -> Result<PathBuf> {
    let dir = out_dir.join("kg");
    fs::create_dir_all(&dir)?;
    kg.save(&dir.join("triples.tsv"), &dir.join("entities.tsv"))?;
    Ok(dir)
}

fn gazetteer(kg: &KnowledgeGraph, aliases: Option<PathBuf>, cfg: &PipelineConfig) -> Result<Gazetteer> {
    let aliases = aliases.or_else(|| cfg.paths.aliases.clone());
    Ok(build_gazetteer(kg, aliases.as_deref())?)
}

fn features(docs: &[NewsDocument], cfg: &PipelineConfig) -> Result<FeatureProvider> {
    Ok(match cfg.features {
        FeatureKind::Tfidf => fit_features(docs, cfg.text_dim)?,
        FeatureKind::External => {
            let path = cfg.paths.text_vectors.as_deref().context("features = external needs text_vectors")?;
            FeatureProvider::External(ExternalVectors::load(path)?)
        }
    })
}

fn graphs_at(path: Option<PathBuf>, cfg: &PipelineConfig) -> Result<Vec<NewsGraph>> {
    let path = path.unwrap_or_else(|| cfg.paths.out_dir.join("graphs.tsv"));
    load_graphs(&path).with_context(|| format!("loading graphs from {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = settings(&cli)?;
    let out_dir = cfg.paths.out_dir.clone();
    match cli.command {
        Command::Kg { action } => match action {
            KgAction::Validate { kg } => {
                let s = kg.load(&cfg)?.stats();
                println!("ok: {} entities, {} relations, {} triples", s.entities, s.relations, s.triples);
            }
            KgAction::Stats { kg } => println!("{}", serde_json::to_string_pretty(&kg.load(&cfg)?.stats())?),
            KgAction::Bucket { kg, scorecard } => {
                let mut graph = kg.load(&cfg)?;
                let records = load_scorecard(&graph, &scorecard)?;
                let mut added = 0;
                for r in &records {
                    let triple = bucket_score(&graph, r)?;
                    added += usize::from(graph.add_triple(triple)?);
                }
                let dir = save_kg(&graph, &out_dir)?;
                log::info!("{} scorecard rows, {added} new triples", records.len());
                println!("{}", dir.display());
            }
            KgAction::Drop { kg, keep } => {
                let thinned = drop_triples(&kg.load(&cfg)?, keep, cfg.seed)?;
                let dir = save_kg(&thinned, &out_dir)?;
                log::info!("kept {} triples", thinned.triples().len());
                println!("{}", dir.display());
            }
        },
        Command::Kge { action } => match action {
            KgeAction::Train { kg, method, dim, epochs, lr, margin, negatives, norm, out } => {
                let graph = kg.load(&cfg)?;
                let mut kc = cfg.kge.clone();
                kc.method = method.unwrap_or(kc.method);
                kc.dim = dim.unwrap_or(kc.dim);
                kc.epochs = epochs.unwrap_or(kc.epochs);
                kc.learning_rate = lr.unwrap_or(kc.learning_rate);
                kc.margin = margin.unwrap_or(kc.margin);
                kc.negatives_per_positive = negatives.unwrap_or(kc.negatives_per_positive);
                kc.norm = norm.unwrap_or(kc.norm);
                kc.seed = cfg.seed;
                let table = train_embeddings(&graph, &kc)?;
                let out = out.unwrap_or_else(|| out_dir.join("embeddings.tsv"));
                if let Some(parent) = out.parent() {
                    fs::create_dir_all(parent)?;
                }
                table.save(&out)?;
                println!("{}", out.display());
            }
            KgeAction::Eval { kg, emb, k } => {
                let graph = kg.load(&cfg)?;
                let emb = required(emb, &cfg.paths.embeddings, "emb")
                    .or_else(|_| Ok::<_, anyhow::Error>(out_dir.join("embeddings.tsv")))?;
                let table = EmbeddingTable::load(&emb)?;
                println!("{}", serde_json::to_string_pretty(&link_prediction_eval(&table, &graph, k)?)?);
            }
        },
        Command::Link { action: LinkAction::Run { doc, kg, aliases } } => {
            let graph = kg.load(&cfg)?;
            let gaz = gazetteer(&graph, aliases, &cfg)?;
            let docs = load_corpus(&doc)?;
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            writeln!(w, "doc_id\tpara_index\tentity_name\tstart\tend")?;
            for d in &docs {
                for (i, p) in d.paragraphs.iter().enumerate() {
                    for m in gaz.link(p) {
                        writeln!(w, "{}\t{i}\t{}\t{}\t{}", d.id, gaz.entity_name(m.entity), m.start, m.end)?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Graph { action: GraphAction::Build { corpus, kg, emb, aliases, out } } => {
            let graph = kg.load(&cfg)?;
            let gaz = gazetteer(&graph, aliases, &cfg)?;
            let docs = load_corpus(&required(corpus, &cfg.paths.corpus, "corpus")?)?;
            let table = EmbeddingTable::load(&required(emb, &cfg.paths.embeddings, "emb")?)?;
            let provider = features(&docs, &cfg)?;
            let options = BuildOptions { seed: derive_seed(cfg.seed, "edges"), ..cfg.build };
            let graphs = build_graphs(&docs, &gaz, &provider, &table, &options)?;
            let out = out.unwrap_or_else(|| out_dir.join("graphs.tsv"));
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            save_graphs(&out, &graphs)?;
            println!("{}", out.display());
        }
        Command::Train { corpus, kg, emb, aliases } => {
            let mut cfg = cfg;
            if kg.kg.is_some() || kg.entities.is_some() || kg.triples.is_some() {
                let (e, t) = kg.paths(&cfg)?;
                cfg.paths.kg_entities = Some(e);
                cfg.paths.kg_triples = Some(t);
            }
            cfg.paths.corpus = corpus.or(cfg.paths.corpus);
            cfg.paths.embeddings = emb.or(cfg.paths.embeddings);
            cfg.paths.aliases = aliases.or(cfg.paths.aliases);
            let stages = BTreeSet::from([Stage::Kg, Stage::Kge, Stage::Graph, Stage::Train]);
            let report = run_pipeline(&cfg, &stages)?;
            log::info!("{report:?}");
            println!("{}", out_dir.join("model.ckpt").display());
        }
        Command::Eval { model, graphs, split } => {
            let (gnn, params) = load_checkpoint(&model.unwrap_or_else(|| out_dir.join("model.ckpt")))?;
            let all = graphs_at(graphs, &cfg)?;
            let split_path = split.unwrap_or_else(|| out_dir.join("split.json"));
            let out = out_dir.join("metrics.json");
            if split_path.is_file() {
                let split: SplitRecord = serde_json::from_slice(&fs::read(&split_path)?)?;
                let pick = |ids: &[String]| -> Result<Vec<NewsGraph>> {
                    ids.iter()
                        .map(|id| {
                            all.iter().find(|g| &g.doc_id == id).cloned().with_context(|| format!("no graph `{id}`"))
                        })
                        .collect()
                };
                let train = evaluate(&params, &gnn, &pick(&split.train)?)?;
                let test = evaluate(&params, &gnn, &pick(&split.test)?)?;
                let record = MetricsRecord { accuracy: test.accuracy, macro_f1: test.macro_f1, train, test };
                write_json(&out, &record)?;
                println!("accuracy {:.4}  macro_f1 {:.4}", record.accuracy, record.macro_f1);
            } else {
                let metrics = evaluate(&params, &gnn, &all)?;
                write_json(&out, &metrics)?;
                println!("accuracy {:.4}  macro_f1 {:.4}", metrics.accuracy, metrics.macro_f1);
            }
        }
        Command::Kfold { k, graphs } => {
            let graphs = graphs_at(graphs, &cfg)?;
            let report = kfold(&graphs, k, cfg.seed, &cfg.train, &cfg.gnn)?;
            write_json(&out_dir.join("kfold.json"), &report)?;
            println!(
                "Acc {:.2} ± {:.2}  MaF {:.2} ± {:.2}  ({k} folds)",
                100.0 * report.accuracy_mean,
                100.0 * report.accuracy_std,
                100.0 * report.macro_f1_mean,
                100.0 * report.macro_f1_std
            );
        }
        Command::Ablate { study, grid, reps, synth } => {
            let (kg, gaz, docs) = match synth {
                Some(spec) => {
                    let corpus = generate_synthetic_corpus(&SynthSpec::load(&spec).map_err(anyhow::Error::msg)?);
                    let mut gaz = build_gazetteer(&corpus.kg, None)?;
                    for (alias, name) in &corpus.aliases {
                        let id = corpus.kg.entity_id(name).context("alias target missing")?;
                        gaz.add_alias(alias, id)?;
                    }
                    (corpus.kg, gaz, corpus.docs)
                }
                None => {
                    let kg = KgArgs::default().load(&cfg)?;
                    let gaz = gazetteer(&kg, None, &cfg)?;
                    let docs = load_corpus(cfg.paths.corpus.as_deref().context("ablate needs `corpus` in the config")?)?;
                    (kg, gaz, docs)
                }
            };
            let provider = features(&docs, &cfg)?;
            let inputs = ExperimentInputs { kg: &kg, gazetteer: &gaz, features: &provider, docs: &docs };
            let table = ablate(&inputs, study, &grid, &cfg.experiment(), reps)?;
            fs::create_dir_all(&out_dir)?;
            let runs = out_dir.join(format!("ablation_{}.csv", study.as_str()));
            table.write_csv(fs::File::create(&runs)?)?;
            table.write_summary_csv(fs::File::create(out_dir.join(format!("ablation_{}_summary.csv", study.as_str())))?)?;
            for s in &table.summary {
                println!(
                    "{:>12}  acc {:.3} ± {:.3}  maf {:.3} ± {:.3}",
                    s.grid_point, s.accuracy_mean, s.accuracy_std, s.macro_f1_mean, s.macro_f1_std
                );
            }
        }
        Command::Synth { action: SynthAction::Generate { spec, docs, politicians, noise, leak, out } } => {
            let mut s = match spec {
                Some(path) => SynthSpec::load(&path).map_err(anyhow::Error::msg)?,
                None => SynthSpec::default(),
            };
            s.n_docs = docs.unwrap_or(s.n_docs);
            s.n_politicians = politicians.unwrap_or(s.n_politicians);
            s.noise_paragraph_rate = noise.unwrap_or(s.noise_paragraph_rate);
            s.lexical_leak |= leak;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let out = out.unwrap_or(out_dir);
            generate_synthetic_corpus(&s).write_to(&out)?;
            println!("{}", out.display());
        }
        Command::Pipeline { stages } => {
            let report = run_pipeline(&cfg, &stages.into_iter().collect())?;
            for (stage, outcome) in &report.stages {
                println!("{stage}\t{outcome:?}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
