use rand::{Rng as _, SeedableRng};
use stancegraph::kge::{init_table, margin_loss, margin_loss_gradient, EmbeddingTable, KgeConfig, KgeMethod, Norm, ParamRow};
use stancegraph::kgstore::Triple;
use stancegraph::trainer::{generate_synthetic_corpus, SynthSpec};
use stancegraph::util::Rng;

fn row_mut<'a>(table: &'a mut EmbeddingTable, row: ParamRow) -> ndarray::ArrayViewMut1<'a, f64> {
    match row {
        ParamRow::Entity(e) => table.entity_vectors.row_mut(e),
        ParamRow::Relation(r) => table.relation_vectors.row_mut(r),
    }
}

#[test]
fn margin_loss_gradient_matches_central_differences() {
    let kg = generate_synthetic_corpus(&SynthSpec { n_docs: 2, n_politicians: 6, ..Default::default() }).kg;
    let n_ent = kg.entities().len();
    let eps = 1e-6;
    for (method, norm) in [(KgeMethod::TransE, Norm::L1), (KgeMethod::TransE, Norm::L2), (KgeMethod::DistMult, Norm::L2)] {
        for seed in 0..10u64 {
            let config = KgeConfig { method, norm, dim: 6, seed, ..Default::default() };
            let mut table = init_table(&kg, &config).unwrap();
            let mut rng = Rng::seed_from_u64(seed);
            let pos = kg.triples()[rng.gen_range(0..kg.triples().len())];
            let neg = Triple { tail: (pos.tail + 1 + rng.gen_range(0..n_ent - 1)) % n_ent, ..pos };
            let margin = (table.energy(&neg) - table.energy(&pos)).max(0.0) + 0.5;
            assert!(margin_loss(&table, &pos, &neg, margin) > 0.0);
            let grads = margin_loss_gradient(&table, &pos, &neg, margin);
            assert!(!grads.is_empty());
            for (&row, g) in &grads {
                for (i, &analytic) in g.iter().enumerate() {
                    let orig = row_mut(&mut table, row)[i];
                    row_mut(&mut table, row)[i] = orig + eps;
                    let up = margin_loss(&table, &pos, &neg, margin);
                    row_mut(&mut table, row)[i] = orig - eps;
                    let down = margin_loss(&table, &pos, &neg, margin);
                    row_mut(&mut table, row)[i] = orig;
                    let numeric = (up - down) / (2.0 * eps);
                    let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                    assert!(err <= 1e-6, "{method} {norm} seed {seed} {row:?}[{i}]: {analytic} vs {numeric}");
                }
            }
        }
    }
}

#[test]
fn inactive_hinge_has_no_gradient() {
    let kg = generate_synthetic_corpus(&SynthSpec { n_docs: 2, n_politicians: 4, ..Default::default() }).kg;
    let table = init_table(&kg, &KgeConfig { dim: 4, ..Default::default() }).unwrap();
    let pos = kg.triples()[0];
    let neg = Triple { tail: (pos.tail + 1) % kg.entities().len(), ..pos };
    let gap = table.energy(&neg) - table.energy(&pos);
    let margin = if gap > 0.0 { gap / 2.0 } else { 1e-3 };
    let (p, n) = if gap > 0.0 { (pos, neg) } else { (neg, pos) };
    assert_eq!(margin_loss(&table, &p, &n, margin), 0.0);
    assert!(margin_loss_gradient(&table, &p, &n, margin).is_empty());
}
