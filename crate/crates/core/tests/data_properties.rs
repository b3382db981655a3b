use std::collections::HashSet;
use std::hash::{DefaultHasher, Hash, Hasher};

use feddrop_core::data::{generate, mean_client_tv_distance, split_holdout, Batch, Example, GeneratorConfig};
use feddrop_core::fedsim::{self, train_centralized, CentralizedConfig};
use feddrop_core::optim::AdamConfig;
use feddrop_core::presets;

fn content_hash(e: &Example) -> u64 {
    let mut h = DefaultHasher::new();
    e.label.hash(&mut h);
    for v in &e.features {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn small(class_skew: f64, seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        num_domains: 3,
        num_clients: 60,
        examples_per_client: 40,
        eval_examples_per_domain: 100,
        input_dim: 4,
        num_classes: 5,
        modes_per_class: 2,
        class_separation: 1.5,
        class_skew,
        domain_shift: 2.0,
        seed,
    }
}

#[test]
fn eval_examples_never_appear_in_client_data() {
    for seed in 0..5 {
        let ds = generate(&small(0.5, seed)).unwrap();
        let client: HashSet<u64> = ds.clients.iter().flat_map(|c| &c.examples).map(content_hash).collect();
        for set in &ds.eval {
            assert!(set.examples.iter().all(|e| !client.contains(&content_hash(e))));
        }
    }
}

#[test]
fn lower_concentration_means_more_skew() {
    let alphas = [0.05, 0.2, 1.0, 5.0, 100.0];
    let seeds = 0u64..8;
    let tv: Vec<f64> = alphas
        .iter()
        .map(|&a| seeds.clone().map(|s| mean_client_tv_distance(&generate(&small(a, s)).unwrap())).sum::<f64>() / 8.0)
        .collect();
    for w in tv.windows(2) {
        assert!(w[0] > w[1], "tv distances {tv:?} not strictly decreasing in alpha");
    }
}

#[test]
fn holdout_split_examples() {
    let ds = generate(&presets::standard_generator()).unwrap();
    for d in 0..3 {
        let split = split_holdout(&ds, d).unwrap();
        assert_eq!(split.pretrain.len() + split.adapt.len(), ds.clients.len());
        assert!(split.adapt.iter().all(|c| c.domain == d));
        assert!(split.pretrain.iter().all(|c| c.domain != d));
        assert!(!split.holdout_eval.is_empty());
    }
    assert!(split_holdout(&ds, 3).is_err());
}

#[test]
fn without_shift_domains_are_interchangeable() {
    let cfg = GeneratorConfig { domain_shift: 0.0, ..presets::standard_generator() };
    let ds = generate(&cfg).unwrap();
    let arch = presets::standard_arch();
    let domain_a: Vec<Example> =
        ds.clients.iter().filter(|c| c.domain == 0).flat_map(|c| c.examples.iter().cloned()).collect();
    let train = CentralizedConfig {
        steps: 1500,
        batch_size: 64,
        optimizer: AdamConfig { lr: 3e-3, ..AdamConfig::default() },
        seed: 1,
    };
    let (params, _) = train_centralized(&train, &arch, &domain_a).unwrap();
    let err = |d: usize| {
        let b = Batch::from_examples(&ds.eval_for(d).unwrap().examples).unwrap();
        fedsim::evaluate(&params, &b).unwrap().error
    };
    let (a, b) = (err(0), err(1));
    assert!((a - b).abs() <= 0.02, "domain A error {a}, domain B error {b}");
}
