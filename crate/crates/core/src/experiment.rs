//! Multi-seed training runs and resumable noise sweeps with file outputs.

use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::config::{derive_seed, RunConfig, Variant};
use crate::envs::{to_tabular, EnvConfig, GridWorld};
use crate::error::{Error, Result};
use crate::groups::{Group, GroupConfig};
use crate::manifest::RunManifest;
use crate::oracle::{value_iteration, verify_bound_with, BoundReport, RandomMdpSpec};
use crate::quantify::SymmetryReport;
use crate::trainer::{probe_d, EvalReport, IterationMetrics, Trainer};

/// Evaluation seed for a training seed; shared by all variants so that
/// final returns are compared on the same episodes.
pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, 40, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub d: f64,
    pub final_eval: EvalReport,
    #[serde(skip)]
    pub metrics: Vec<IterationMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symmetry_report: Option<SymmetryReport>,
}

pub fn metrics_file(seed: u64) -> String {
    format!("metrics_seed{seed}.csv")
}

pub fn checkpoint_file(seed: u64) -> String {
    format!("checkpoint_seed{seed}.json")
}

pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

/// Trains one seed to completion. With `out_dir`, streams the learning curve
/// to `metrics_seed{seed}.csv` and writes the final checkpoint.
pub fn train_seed(cfg: &RunConfig, seed: u64, out_dir: Option<&Path>) -> Result<SeedOutcome> {
    let mut trainer = Trainer::new(cfg, seed)?;
    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            trainer = trainer.with_diagnostics_dir(dir);
            Some(csv::Writer::from_writer(File::create(dir.join(metrics_file(seed)))?))
        }
        None => None,
    };
    let mut metrics = Vec::with_capacity(cfg.train.iterations as usize);
    trainer.run(|_, m| {
        if let Some(w) = writer.as_mut() {
            w.serialize(m)?;
            w.flush()?;
        }
        metrics.push(m.clone());
        Ok(())
    })?;
    if let Some(dir) = out_dir {
        trainer.checkpoint().save(&dir.join(checkpoint_file(seed)))?;
    }
    Ok(SeedOutcome {
        seed,
        d: trainer.d(),
        final_eval: trainer.evaluate(cfg.eval.episodes, eval_seed(seed))?,
        metrics,
        symmetry_report: trainer.symmetry_report().cloned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub iteration: u64,
    pub n_seeds: usize,
    pub mean_return_mean: Option<f64>,
    pub mean_return_std: Option<f64>,
    pub objective_mean: f64,
    pub objective_std: f64,
    pub policy_loss_mean: f64,
    pub value_loss_mean: f64,
    pub entropy_mean: f64,
    pub s_pi_mean: f64,
    pub s_v_mean: f64,
    pub lambda1_mean: f64,
    pub lambda2_mean: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Per-iteration mean/std across seeds.
pub fn aggregate(curves: &[&[IterationMetrics]]) -> Vec<AggregateRow> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let rows: Vec<&IterationMetrics> = curves.iter().map(|c| &c[i]).collect();
            let col = |f: fn(&IterationMetrics) -> f64| mean_std(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let returns: Vec<f64> = rows.iter().filter_map(|r| r.mean_return).collect();
            let (rm, rs) = if returns.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&returns);
                (Some(m), Some(s))
            };
            let (om, os) = col(|r| r.objective);
            AggregateRow {
                iteration: rows[0].iteration,
                n_seeds: rows.len(),
                mean_return_mean: rm,
                mean_return_std: rs,
                objective_mean: om,
                objective_std: os,
                policy_loss_mean: col(|r| r.policy_loss).0,
                value_loss_mean: col(|r| r.value_loss).0,
                entropy_mean: col(|r| r.entropy).0,
                s_pi_mean: col(|r| r.s_pi).0,
                s_v_mean: col(|r| r.s_v).0,
                lambda1_mean: col(|r| r.lambda1).0,
                lambda2_mean: col(|r| r.lambda2).0,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains every seed (in parallel on `threads` workers), then writes the
/// aggregate curve and a manifest into `out_dir`.
pub fn train_seeds(cfg: &RunConfig, seeds: &[u64], out_dir: &Path, threads: usize) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = RunManifest::new("train", cfg, seeds.to_vec());
    let outcomes: Vec<SeedOutcome> = pool(threads)?.install(|| {
        seeds
            .par_iter()
            .map(|&s| train_seed(cfg, s, Some(out_dir)))
            .collect::<Result<Vec<_>>>()
    })?;
    let curves: Vec<&[IterationMetrics]> = outcomes.iter().map(|o| o.metrics.as_slice()).collect();
    write_csv(&out_dir.join("aggregate_metrics.csv"), &aggregate(&curves))?;
    for s in seeds {
        manifest.outputs.push(metrics_file(*s));
        manifest.outputs.push(checkpoint_file(*s));
    }
    manifest.outputs.push("aggregate_metrics.csv".into());
    manifest.results = serde_json::to_value(&outcomes)?;
    manifest.finish();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub levels: Vec<u32>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<(u32, Variant, u64)> {
        let mut out = Vec::new();
        for &l in &self.levels {
            for &v in &self.variants {
                for &s in &self.seeds {
                    out.push((l, v, s));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub noise_level: u32,
    pub variant: Variant,
    pub seed: u64,
    pub status: CellStatus,
    pub final_mean_return: Option<f64>,
    pub final_std_return: Option<f64>,
    pub d: Option<f64>,
    pub config_hash: String,
    pub error: Option<String>,
}

pub fn cell_config(base: &RunConfig, level: u32, variant: Variant) -> RunConfig {
    let mut cfg = base.clone();
    cfg.env.noise_level = level;
    cfg.train.variant = variant;
    cfg
}

pub fn cell_dir(out_dir: &Path, level: u32, variant: Variant, seed: u64) -> PathBuf {
    out_dir.join("cells").join(format!("noise{level}_{variant}_seed{seed}"))
}

fn completed_cell(dir: &Path, hash: &str) -> Option<CellResult> {
    let m = RunManifest::load(&dir.join("manifest.json")).ok()?;
    let r: CellResult = serde_json::from_value(m.results).ok()?;
    (m.config_hash == hash && r.status == CellStatus::Ok).then_some(r)
}

fn run_cell(base: &RunConfig, out_dir: &Path, level: u32, variant: Variant, seed: u64) -> (CellResult, bool) {
    let cfg = cell_config(base, level, variant);
    let hash = cfg.content_hash();
    let dir = cell_dir(out_dir, level, variant, seed);
    if let Some(done) = completed_cell(&dir, &hash) {
        return (done, true);
    }
    let mut manifest = RunManifest::new("sweep-cell", &cfg, vec![seed]);
    let outcome = train_seed(&cfg, seed, Some(&dir));
    let result = match &outcome {
        Ok(o) => CellResult {
            noise_level: level,
            variant,
            seed,
            status: CellStatus::Ok,
            final_mean_return: Some(o.final_eval.mean),
            final_std_return: Some(o.final_eval.std),
            d: Some(o.d),
            config_hash: hash,
            error: None,
        },
        Err(e) => CellResult {
            noise_level: level,
            variant,
            seed,
            status: CellStatus::Failed,
            final_mean_return: None,
            final_std_return: None,
            d: None,
            config_hash: hash,
            error: Some(e.to_string()),
        },
    };
    manifest.outputs = vec![metrics_file(seed), checkpoint_file(seed)];
    manifest.results = serde_json::to_value(&result).unwrap_or_default();
    manifest.finish();
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = manifest.save(&dir.join("manifest.json"));
    }
    (result, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    /// Cells reused from an earlier, interrupted sweep.
    pub resumed: usize,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Failed).count()
    }

    /// Final returns of successful cells for one `(level, variant)`.
    pub fn returns(&self, level: u32, variant: Variant) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.noise_level == level && c.variant == variant)
            .filter_map(|c| c.final_mean_return)
            .collect()
    }
}

/// Trains every `(level, variant, seed)` cell, skipping cells whose manifest
/// already records a successful run of the same config. Writes
/// `sweep_summary.csv` (one row per cell) and `sweep_matrix.csv`
/// (levels × variants mean/std of final returns).
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, out_dir: &Path, threads: usize) -> Result<SweepOutcome> {
    base.validate()?;
    for &l in &spec.levels {
        cell_config(base, l, Variant::Mappo).env.validate()?;
    }
    std::fs::create_dir_all(out_dir)?;
    let cells = spec.cells();
    let results: Vec<(CellResult, bool)> = pool(threads)?.install(|| {
        cells
            .par_iter()
            .map(|&(l, v, s)| run_cell(base, out_dir, l, v, s))
            .collect()
    });
    let resumed = results.iter().filter(|r| r.1).count();
    let outcome = SweepOutcome {
        cells: results.into_iter().map(|r| r.0).collect(),
        resumed,
    };
    write_csv(&out_dir.join("sweep_summary.csv"), &outcome.cells)?;
    write_matrix(&out_dir.join("sweep_matrix.csv"), spec, &outcome)?;
    let mut manifest = RunManifest::new("sweep", base, spec.seeds.clone());
    manifest.outputs = vec!["sweep_summary.csv".into(), "sweep_matrix.csv".into()];
    manifest.results = serde_json::json!({ "spec": spec, "failed": outcome.failed(), "resumed": resumed });
    manifest.finish();
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(outcome)
}

fn write_matrix(path: &Path, spec: &SweepSpec, outcome: &SweepOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["noise_level".to_string()];
    for v in &spec.variants {
        header.extend([format!("{v}_mean"), format!("{v}_std"), format!("{v}_n")]);
    }
    w.write_record(&header)?;
    for &l in &spec.levels {
        let mut row = vec![l.to_string()];
        for &v in &spec.variants {
            let r = outcome.returns(l, v);
            if r.is_empty() {
                row.extend([String::new(), String::new(), "0".into()]);
            } else {
                let (m, s) = mean_std(&r);
                row.extend([m.to_string(), s.to_string(), r.len().to_string()]);
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Probes the configured environment with `cfg.pse.probes` uniform-random
/// probes and categorizes it by `cfg.pse.tau`.
pub fn quantify_env(cfg: &RunConfig, seed: u64) -> Result<SymmetryReport> {
    cfg.validate()?;
    let world = Arc::new(GridWorld::new(cfg.env.clone())?);
    let group = Group::new(&cfg.group, cfg.env.n_agents)?;
    if group.is_trivial() {
        return Err(Error::Config("the group has no non-identity element to probe".into()));
    }
    probe_d(cfg, &world, &group, seed)
}

/// One checked (model, group element) instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub instance: String,
    pub element: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub epsilon_hat: f64,
    pub delta_hat: f64,
    pub bound_value: f64,
    pub max_error: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundRow {
    fn new(instance: String, element: String, n_states: usize, n_actions: usize, r: &BoundReport) -> Self {
        BoundRow {
            instance,
            element,
            n_states,
            n_actions,
            gamma: r.gamma,
            epsilon_hat: r.epsilon_hat,
            delta_hat: r.delta_hat,
            bound_value: r.bound_value,
            max_error: r.max_error,
            slack: r.slack,
            satisfied: r.satisfied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub instances: usize,
    pub violations: usize,
    pub max_error: f64,
    /// Smallest `bound_value + slack - max_error` over all rows.
    pub min_margin: f64,
    pub tol: f64,
}

impl BoundSummary {
    pub fn from_rows(rows: &[BoundRow], tol: f64) -> Self {
        BoundSummary {
            instances: rows.len(),
            violations: rows.iter().filter(|r| !r.satisfied).count(),
            max_error: rows.iter().map(|r| r.max_error).fold(0.0, f64::max),
            min_margin: rows
                .iter()
                .map(|r| r.bound_value + r.slack - r.max_error)
                .fold(f64::INFINITY, f64::min),
            tol,
        }
    }
}

/// Solves the tabularized environment once and checks the bound under
/// every non-identity group element.
pub fn verify_env_bound(env: &EnvConfig, group: &GroupConfig, tol: f64) -> Result<Vec<BoundRow>> {
    env.validate()?;
    let world = GridWorld::new(env.clone())?;
    let model = to_tabular(&world)?;
    let group = Group::new(group, env.n_agents)?;
    let q = value_iteration(&model.mdp, tol)?;
    let instance = format!("noise{}", env.noise_level);
    group
        .non_identity_transforms(env.grid_size)
        .iter()
        .map(|g| {
            let idx = model.index_transform(g)?;
            let r = verify_bound_with(&model.mdp, &q, &idx, tol)?;
            Ok(BoundRow::new(
                instance.clone(),
                g.element().label(),
                model.mdp.n_states(),
                model.mdp.n_actions(),
                &r,
            ))
        })
        .collect()
}

/// Checks the bound on `count` random models with seeds derived from `seed`.
pub fn verify_random_mdps(spec: &RandomMdpSpec, count: usize, seed: u64, tol: f64) -> Result<Vec<BoundRow>> {
    spec.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let inst = spec.generate(derive_seed(seed, 30, i as u64))?;
            let q = value_iteration(&inst.mdp, tol)?;
            let r = verify_bound_with(&inst.mdp, &q, &inst.transform, tol)?;
            Ok(BoundRow::new(
                format!("random{i}"),
                "g".into(),
                inst.mdp.n_states(),
                inst.mdp.n_actions(),
                &r,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.env.grid_size = 3;
        cfg.env.horizon = 5;
        cfg.nn.hidden = vec![8];
        cfg.train.iterations = 2;
        cfg.train.n_envs = 1;
        cfg.train.rollout_length = 10;
        cfg.train.epochs = 1;
        cfg.train.minibatches = 1;
        cfg.pse.probes = 20;
        cfg.eval.episodes = 2;
        cfg
    }

    #[test]
    fn seeds_produce_curves_aggregate_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = train_seeds(&tiny(), &[1, 2, 3], dir.path(), 2).unwrap();
        assert_eq!(out.len(), 3);
        for s in 1..=3 {
            let text = std::fs::read_to_string(dir.path().join(metrics_file(s))).unwrap();
            assert_eq!(text.lines().count(), 3);
            assert!(text.starts_with("iteration,env_steps,mean_return"));
            assert!(dir.path().join(checkpoint_file(s)).exists());
        }
        let agg = std::fs::read_to_string(dir.path().join("aggregate_metrics.csv")).unwrap();
        assert!(agg.lines().next().unwrap().contains("mean_return_mean,mean_return_std"));
        assert_eq!(agg.lines().count(), 3);
        let m = RunManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(m.seeds, vec![1, 2, 3]);
        assert_eq!(m.config, tiny());
    }

    #[test]
    fn sweep_covers_the_product_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec {
            levels: vec![0, 8],
            variants: vec![Variant::Mappo, Variant::MappoPse],
            seeds: vec![0, 1],
        };
        let first = run_sweep(&tiny(), &spec, dir.path(), 2).unwrap();
        assert_eq!(first.cells.len(), 8);
        assert_eq!((first.failed(), first.resumed), (0, 0));
        let summary = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 9);
        // simulate an interruption: drop one cell's manifest
        std::fs::remove_file(cell_dir(dir.path(), 8, Variant::MappoPse, 1).join("manifest.json")).unwrap();
        let second = run_sweep(&tiny(), &spec, dir.path(), 1).unwrap();
        assert_eq!(second.resumed, 7);
        assert_eq!(second.cells, first.cells);
        let matrix = std::fs::read_to_string(dir.path().join("sweep_matrix.csv")).unwrap();
        assert_eq!(matrix.lines().next().unwrap(), "noise_level,mappo_mean,mappo_std,mappo_n,mappo-pse_mean,mappo-pse_std,mappo-pse_n");
    }

    #[test]
    fn symmetric_grid_has_zero_budget_and_error() {
        let env = EnvConfig {
            grid_size: 2,
            ..EnvConfig::default()
        };
        let rows = verify_env_bound(&env, &GroupConfig::default(), 1e-10).unwrap();
        assert_eq!(rows.len(), 7);
        for r in &rows {
            assert_eq!((r.epsilon_hat, r.delta_hat), (0.0, 0.0));
            assert!(r.max_error <= r.slack, "{r:?}");
            assert!(r.satisfied);
        }
    }

    #[test]
    fn random_models_satisfy_the_bound() {
        let spec = RandomMdpSpec {
            n_states: 12,
            n_actions: 4,
            ..RandomMdpSpec::default()
        };
        let rows = verify_random_mdps(&spec, 10, 3, 1e-10).unwrap();
        let summary = BoundSummary::from_rows(&rows, 1e-10);
        assert_eq!((summary.instances, summary.violations), (10, 0));
        assert!(summary.min_margin >= 0.0);
    }

    #[test]
    fn quantify_noise_zero_is_fully_symmetric() {
        let mut cfg = tiny();
        cfg.pse.probes = 50;
        let r = quantify_env(&cfg, 1).unwrap();
        assert_eq!(r.d_mean, 1.0);
        assert_eq!(r, quantify_env(&cfg, 1).unwrap());
    }
}
