mod common;

use std::collections::BTreeSet;

use common::{max_abs_diff, randomize, random_news_graph, rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use stancegraph::gnn::{GnnConfig, ModelParams, Variant};
use stancegraph::linker::{build_gazetteer, Gazetteer};
use stancegraph::newsgraph::{build_news_graph, BuildOptions, Relation};
use stancegraph::trainer::{
    ablate, fit, fit_features, generate_synthetic_corpus, predict_logits, prepare_embeddings, ExperimentConfig,
    ExperimentInputs, Study, SynthSpec, TrainConfig,
};

fn variant_of(i: usize) -> Variant {
    Variant::ALL[i % Variant::ALL.len()]
}

fn model(variant: Variant, seed: u64) -> (GnnConfig, ModelParams) {
    let config = GnnConfig { variant, layers: 2, hidden: 6, classes: 2, leaky_slope: 0.01, dropout: 0.5 };
    let mut params = ModelParams::init(&config, 5, 3, seed).unwrap();
    randomize(&mut params, &mut rng(seed ^ 0xabc), 0.7);
    (config, params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logits_do_not_depend_on_batch_size(seed in any::<u64>(), n in 1usize..20, v in 0usize..3) {
        let mut r = rng(seed);
        let graphs: Vec<_> = (0..n)
            .map(|_| {
                let p = r.gen_range(1..6);
                let e = r.gen_range(0..4);
                let title = r.gen_bool(0.5);
                random_news_graph(&mut r, p, e, title, 5, 3)
            })
            .collect();
        let (config, params) = model(variant_of(v), seed);
        let one = predict_logits(&params, &config, &graphs, 1).unwrap();
        let sixteen = predict_logits(&params, &config, &graphs, 16).unwrap();
        prop_assert!(max_abs_diff(&one, &sixteen) <= 1e-10);
    }

    #[test]
    fn logits_are_invariant_to_node_relabeling(seed in any::<u64>(), v in 0usize..3) {
        let mut r = rng(seed);
        let p = r.gen_range(1..7);
        let e = r.gen_range(0..5);
        let title = r.gen_bool(0.5);
        let g = random_news_graph(&mut r, p, e, title, 5, 3);
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut r);
        let relabeled = g.permute(&perm);
        relabeled.validate().unwrap();
        let (config, params) = model(variant_of(v), seed);
        let a = predict_logits(&params, &config, &[g], 1).unwrap();
        let b = predict_logits(&params, &config, &[relabeled], 1).unwrap();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-10);
    }

    #[test]
    fn built_graphs_satisfy_edge_count_identities(seed in 0u64..1000, keep in 0.0f64..=1.0) {
        let corpus = generate_synthetic_corpus(&SynthSpec {
            n_docs: 6, n_politicians: 8, noise_paragraph_rate: 0.5, seed, ..Default::default()
        });
        let mut gaz = build_gazetteer(&corpus.kg, None).unwrap();
        for (alias, name) in &corpus.aliases {
            gaz.add_alias(alias, corpus.kg.entity_id(name).unwrap()).unwrap();
        }
        let features = fit_features(&corpus.docs, 16).unwrap();
        let emb = prepare_embeddings(&corpus.kg, 1.0, &stancegraph::kge::KgeConfig { dim: 4, epochs: 0, ..Default::default() }, 0).unwrap();
        for doc in &corpus.docs {
            let pairs: BTreeSet<(usize, usize)> = doc
                .paragraphs
                .iter()
                .enumerate()
                .flat_map(|(k, p)| gaz.link(p).into_iter().map(move |m| (k, m.entity)))
                .collect();
            let linked: BTreeSet<usize> = pairs.iter().map(|&(_, e)| e).collect();

            let full = build_news_graph(doc, &gaz, &features, &emb, &BuildOptions::default()).unwrap();
            let p = doc.paragraphs.len();
            prop_assert_eq!(full.edges_of(Relation::DocPara).len(), if doc.title.is_some() { p } else { 0 });
            prop_assert_eq!(full.edges_of(Relation::ParaPara).len(), p - 1);
            prop_assert_eq!(full.edges_of(Relation::ParaEnt).len(), pairs.len());
            prop_assert_eq!(full.entity_ids(), linked.clone());
            prop_assert_eq!(full.node_count(), usize::from(doc.title.is_some()) + p + linked.len());

            let options = BuildOptions { para_ent_keep: keep, seed, ..Default::default() };
            let thinned = build_news_graph(doc, &gaz, &features, &emb, &options).unwrap();
            prop_assert_eq!(thinned.edges_of(Relation::ParaEnt).len(), (keep * pairs.len() as f64).ceil() as usize);
            prop_assert!(thinned.entity_ids().is_subset(&linked));
            thinned.validate().unwrap();

            let bare = build_news_graph(doc, &Gazetteer::without_aliases(&corpus.kg), &features, &emb, &BuildOptions::default()).unwrap();
            prop_assert_eq!(bare.entity_ids().len(), 0);
        }
    }
}

fn small_base() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.kge.epochs = 30;
    c.kge.dim = 8;
    c.gnn.hidden = 8;
    c.train.epochs = 5;
    c
}

#[test]
fn removing_para_ent_edges_equals_linking_nothing() {
    let corpus = generate_synthetic_corpus(&SynthSpec { n_docs: 40, n_politicians: 12, ..Default::default() });
    let gaz = build_gazetteer(&corpus.kg, None).unwrap();
    let empty = Gazetteer::without_aliases(&corpus.kg);
    let features = fit_features(&corpus.docs, 32).unwrap();
    let with = ExperimentInputs { kg: &corpus.kg, gazetteer: &gaz, features: &features, docs: &corpus.docs };
    let without = ExperimentInputs { gazetteer: &empty, ..with };
    let base = small_base();
    let removed = ablate(&with, Study::EdgeType, &["para-ent".into()], &base, 2).unwrap();
    let unlinked = ablate(&without, Study::EdgeType, &["none".into()], &base, 2).unwrap();
    let key = |t: &stancegraph::trainer::AblationTable| {
        t.runs.iter().map(|r| (r.seed, r.accuracy, r.macro_f1)).collect::<Vec<_>>()
    };
    assert_eq!(key(&removed), key(&unlinked));
}

#[test]
fn training_is_deterministic() {
    let mut r = rng(5);
    let graphs: Vec<_> = (0..12).map(|_| random_news_graph(&mut r, 3, 2, true, 5, 3)).collect();
    let config = GnnConfig { hidden: 6, dropout: 0.4, ..Default::default() };
    let train = TrainConfig { epochs: 4, batch_size: 5, seed: 9, ..Default::default() };
    let a = fit(&graphs, &train, &config).unwrap();
    let b = fit(&graphs, &train, &config).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_curve, b.loss_curve);
    let c = fit(&graphs, &TrainConfig { seed: 10, ..train }, &config).unwrap();
    assert_ne!(a.loss_curve, c.loss_curve);
}
