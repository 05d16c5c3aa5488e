use pse_core::config::{RunConfig, Variant};
use pse_core::experiment::{metrics_file, train_seed};

fn short_run(variant: Variant) -> String {
    let mut cfg = RunConfig::default();
    cfg.env.grid_size = 4;
    cfg.env.noise_level = 4;
    cfg.nn.hidden = vec![16];
    cfg.train.variant = variant;
    cfg.train.iterations = 10;
    cfg.train.n_envs = 2;
    cfg.train.rollout_length = 20;
    cfg.pse.probes = 100;
    cfg.eval.episodes = 4;
    let dir = tempfile::tempdir().unwrap();
    train_seed(&cfg, 11, Some(dir.path())).unwrap();
    std::fs::read_to_string(dir.path().join(metrics_file(11))).unwrap()
}

#[test]
fn short_pse_run_matches_the_frozen_curve() {
    let frozen = include_str!("data/golden_pse_seed11.csv");
    assert_eq!(short_run(Variant::MappoPse), frozen);
}

#[test]
fn short_mappo_run_matches_the_frozen_curve() {
    let frozen = include_str!("data/golden_mappo_seed11.csv");
    assert_eq!(short_run(Variant::Mappo), frozen);
}
