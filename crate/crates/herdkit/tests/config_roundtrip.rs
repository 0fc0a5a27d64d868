use herdkit::config_io::{load_config, to_toml};
use herdkit_core::config::{ExperimentConfig, LossKind, OptimizerKind, ProbeKind};
use proptest::prelude::*;

fn configs() -> impl Strategy<Value = ExperimentConfig> {
    (
        (2usize..64, 0usize..8, 0usize..3, 0usize..3),
        (1e-12f64..1.0, 1usize..1024, 1usize..50, 0u64..=i64::MAX as u64),
        (0usize..100, proptest::option::of(1usize..50_000), proptest::option::of(1usize..10_000)),
        ("[a-z0-9_/]{1,20}", "[a-z0-9_/]{1,20}", prop::collection::vec(0usize..3, 0..3)),
    )
        .prop_map(|((peers, t, loss, opt), (lr, bs, epochs, seed), (every, subset, fit), (data, out, probes))| {
            let mut cfg = ExperimentConfig::with_dataset_dir(data);
            cfg.num_peers = peers;
            cfg.num_teachers = 1 + t % (peers - 1);
            cfg.loss_kind = LossKind::ALL[loss];
            cfg.optimizer_kind = OptimizerKind::ALL[opt];
            cfg.learning_rate = lr;
            cfg.batch_size = bs;
            cfg.epochs = epochs;
            cfg.master_seed = seed;
            cfg.eval_every_batches = every;
            cfg.train_subset_size = subset;
            cfg.output_dir = out;
            cfg.probe_config.fit_subset = fit;
            cfg.probe_config.eval_probes = probes.into_iter().map(|k| ProbeKind::ALL[k]).collect();
            cfg
        })
}

proptest! {
    #[test]
    fn config_survives_toml(cfg in configs()) {
        prop_assert!(cfg.validate().is_ok());
        let back = load_config(&to_toml(&cfg)).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
