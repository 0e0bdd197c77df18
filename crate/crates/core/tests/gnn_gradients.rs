mod common;

use common::{finite_difference_check, randomize, random_news_graph, rel_err, rng};
use ndarray::Array2;
use stancegraph::gnn::{loss_forward, model_backward, model_forward, GnnConfig, ModelParams, Variant};
use stancegraph::newsgraph::batch_graphs;

fn cfg(variant: Variant, dropout: f64) -> GnnConfig {
    GnnConfig { variant, layers: 2, hidden: 8, classes: 2, leaky_slope: 0.01, dropout }
}

#[test]
fn parameter_gradients_match_central_differences() {
    for variant in Variant::ALL {
        for seed in 0..6u64 {
            let mut r = rng(seed);
            let graphs: Vec<_> = (0..2).map(|_| random_news_graph(&mut r, 5, 3, true, 6, 4)).collect();
            let batch = batch_graphs(&graphs).unwrap();
            let labels: Vec<usize> = graphs.iter().map(|g| g.label.unwrap()).collect();
            let config = cfg(variant, if seed % 2 == 0 { 0.0 } else { 0.3 });
            let mut params = ModelParams::init(&config, 6, 4, seed).unwrap();
            randomize(&mut params, &mut r, 0.5);
            let report = finite_difference_check(&batch, &params, &config, &labels, 1e-3, seed, 1e-5, 1e-8);
            assert!(
                report.max_rel_err <= 1e-4,
                "{variant} seed {seed}: {:?} ({})",
                report,
                params.tensor_names()[report.worst.0]
            );
        }
    }
}

#[test]
fn input_attribute_gradients_match_central_differences() {
    let mut r = rng(42);
    let g = random_news_graph(&mut r, 4, 2, true, 5, 3);
    let config = cfg(Variant::GatedRgcn, 0.0);
    let mut params = ModelParams::init(&config, 5, 3, 1).unwrap();
    randomize(&mut params, &mut r, 0.5);
    let labels = [g.label.unwrap()];
    let batch = batch_graphs(&[&g]).unwrap();
    let out = model_forward(&batch, &params, &config, true, 0).unwrap();
    let grads = model_backward(&out, &labels, &params, 0.0).unwrap();

    let loss_with = |text: &Array2<f64>, ent: &Array2<f64>| {
        let mut b = batch.clone();
        b.text_attrs = text.clone();
        b.entity_attrs = ent.clone();
        let o = model_forward(&b, &params, &config, true, 0).unwrap();
        loss_forward(&o, &labels, &params, 0.0).unwrap()
    };
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (which, analytic) in [(0, &grads.text_attrs), (1, &grads.entity_attrs)] {
        for idx in ndarray::indices(analytic.dim()) {
            let (mut t, mut e) = (batch.text_attrs.clone(), batch.entity_attrs.clone());
            let target = if which == 0 { &mut t } else { &mut e };
            target[idx] += eps;
            let up = loss_with(&t, &e);
            let target = if which == 0 { &mut t } else { &mut e };
            target[idx] -= 2.0 * eps;
            let down = loss_with(&t, &e);
            worst = worst.max(rel_err(analytic[idx], (up - down) / (2.0 * eps), 1e-8));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}
