//! `pse`: symmetry quantification, bound checks, training, evaluation and sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use pse_core::config::{RunConfig, Variant};
use pse_core::envs::{EnvConfig, GridWorld};
use pse_core::error::Error;
use pse_core::experiment::{self, BoundRow, BoundSummary, SweepSpec};
use pse_core::manifest::{load_config, RunManifest};
use pse_core::nn::Checkpoint;
use pse_core::oracle::RandomMdpSpec;
use pse_core::trainer::evaluate;

#[derive(Debug, Parser)]
#[command(name = "pse", version, about = "Partial-symmetry toolkit for cooperative gridworld games")]
struct Cli {
    /// Run config (JSON), or a manifest whose config should be reused.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, env = "PSE_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for seeds and sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Probe the environment and report the D metric.
    Quantify(QuantifyArgs),
    /// Check the performance-error bound on exact tabular models.
    VerifyBound(VerifyArgs),
    /// Train one or more seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint with greedy actions.
    Eval(EvalArgs),
    /// Train every (noise level, variant, seed) cell.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct QuantifyArgs {
    /// JSON file holding only the environment section.
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long)]
    noise: Option<u32>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    noise: Option<u32>,
    /// Check this many random models instead of the configured environment.
    #[arg(long)]
    random_mdps: Option<usize>,
    #[arg(long, default_value_t = 32)]
    states: usize,
    #[arg(long, default_value_t = 8)]
    actions: usize,
    /// Discount; overrides the environment's in tabular mode.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    variant: Option<Variant>,
    /// Comma-separated seeds; defaults to `--seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    noise: Option<u32>,
    /// Fixed D for mappo-pse instead of probing.
    #[arg(long)]
    d: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [0, 4, 8])]
    levels: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL)]
    variants: Vec<Variant>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Violation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    match &cli.config {
        Some(p) => Ok(load_config(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn checked(cfg: RunConfig) -> Result<RunConfig, Failure> {
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Prints to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn cmd_quantify(cli: &Cli, args: &QuantifyArgs) -> CmdResult {
    let mut cfg = base_config(cli)?;
    if let Some(p) = &args.env_config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Failure::Usage(format!("cannot read env config {}: {e}", p.display())))?;
        cfg.env = serde_json::from_str::<EnvConfig>(&text)
            .map_err(|e| Failure::Usage(format!("invalid env config {}: {e}", p.display())))?;
    }
    if let Some(n) = args.noise {
        cfg.env.noise_level = n;
    }
    if let Some(p) = args.probes {
        cfg.pse.probes = p;
    }
    if let Some(t) = args.tau {
        cfg.pse.tau = t;
    }
    let cfg = checked(cfg)?;
    let report = experiment::quantify_env(&cfg, cli.seed)?;
    let json = to_json(&report)?;
    prepare_out_dir(&cli.out_dir)?;
    write(&cli.out_dir.join("symmetry_report.json"), &json)?;
    let mut manifest = RunManifest::new("quantify", &cfg, vec![cli.seed]);
    manifest.outputs.push("symmetry_report.json".into());
    manifest.finish();
    manifest.save(&cli.out_dir.join("quantify_manifest.json"))?;
    emit(&json);
    Ok(())
}

fn cmd_verify_bound(cli: &Cli, args: &VerifyArgs) -> CmdResult {
    let mut cfg = base_config(cli)?;
    if let Some(n) = args.noise {
        cfg.env.noise_level = n;
    }
    if args.tol.is_nan() || args.tol <= 0.0 {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let rows: Vec<BoundRow> = match args.random_mdps {
        Some(count) => {
            let spec = RandomMdpSpec {
                n_states: args.states,
                n_actions: args.actions,
                gamma: args.gamma.unwrap_or(0.9),
                ..RandomMdpSpec::default()
            };
            let pool = experiment::pool(cli.threads)?;
            pool.install(|| experiment::verify_random_mdps(&spec, count, cli.seed, args.tol))?
        }
        None => {
            if let Some(g) = args.gamma {
                cfg.env.gamma = g;
            }
            experiment::verify_env_bound(&cfg.env, &cfg.group, args.tol)?
        }
    };
    let summary = BoundSummary::from_rows(&rows, args.tol);
    prepare_out_dir(&cli.out_dir)?;
    experiment::write_csv(&cli.out_dir.join("bound_instances.csv"), &rows)?;
    let json = to_json(&summary)?;
    write(&cli.out_dir.join("bound_summary.json"), &json)?;
    let mut manifest = RunManifest::new("verify-bound", &cfg, vec![cli.seed]);
    manifest.outputs = vec!["bound_instances.csv".into(), "bound_summary.json".into()];
    manifest.results = serde_json::to_value(&summary).unwrap_or_default();
    manifest.finish();
    manifest.save(&cli.out_dir.join("verify_bound_manifest.json"))?;
    emit(&json);
    if summary.violations > 0 {
        return Err(Failure::Violation(format!(
            "{} of {} instances violate the bound",
            summary.violations, summary.instances
        )));
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> CmdResult {
    let mut cfg = base_config(cli)?;
    if let Some(v) = args.variant {
        cfg.train.variant = v;
    }
    if let Some(k) = args.iterations {
        cfg.train.iterations = k;
    }
    if let Some(n) = args.noise {
        cfg.env.noise_level = n;
    }
    if args.d.is_some() {
        cfg.pse.d = args.d;
    }
    let cfg = checked(cfg)?;
    let seeds = if args.seeds.is_empty() { vec![cli.seed] } else { args.seeds.clone() };
    prepare_out_dir(&cli.out_dir)?;
    let outcomes = experiment::train_seeds(&cfg, &seeds, &cli.out_dir, cli.threads)?;
    for o in &outcomes {
        println!(
            "seed {} d={:.4} final return {:.4} ± {:.4}",
            o.seed, o.d, o.final_eval.mean, o.final_eval.std
        );
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> CmdResult {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => {
            let beside = args.checkpoint.with_file_name("manifest.json");
            if !beside.exists() {
                return Err(Failure::Usage(
                    "eval needs --config or a manifest.json next to the checkpoint".into(),
                ));
            }
            load_config(&beside)?
        }
    };
    let cfg = checked(cfg)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (actor, _) = ckpt.networks()?;
    let world = Arc::new(GridWorld::new(cfg.env.clone())?);
    let episodes = args.episodes.unwrap_or(cfg.eval.episodes);
    let report = evaluate(&actor, &world, episodes, cli.seed)?;
    let json = to_json(&report)?;
    prepare_out_dir(&cli.out_dir)?;
    write(&cli.out_dir.join("eval_report.json"), &json)?;
    let mut manifest = RunManifest::new("eval", &cfg, vec![cli.seed]);
    manifest.outputs.push("eval_report.json".into());
    manifest.results = serde_json::json!({ "checkpoint": args.checkpoint, "mean": report.mean, "std": report.std });
    manifest.finish();
    manifest.save(&cli.out_dir.join("eval_manifest.json"))?;
    emit(&json);
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> CmdResult {
    let mut cfg = base_config(cli)?;
    if let Some(k) = args.iterations {
        cfg.train.iterations = k;
    }
    let cfg = checked(cfg)?;
    let spec = SweepSpec {
        levels: args.levels.clone(),
        variants: args.variants.clone(),
        seeds: args.seeds.clone(),
    };
    prepare_out_dir(&cli.out_dir)?;
    let outcome = experiment::run_sweep(&cfg, &spec, &cli.out_dir, cli.threads)?;
    println!(
        "{} cells, {} resumed, {} failed",
        outcome.cells.len(),
        outcome.resumed,
        outcome.failed()
    );
    for c in outcome.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "cell noise{} {} seed {}: {}",
            c.noise_level,
            c.variant,
            c.seed,
            c.error.as_deref().unwrap_or_default()
        );
    }
    if outcome.failed() > 0 {
        return Err(Failure::Runtime(format!("{} sweep cells failed", outcome.failed())));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Quantify(a) => cmd_quantify(&cli, a),
        Command::VerifyBound(a) => cmd_verify_bound(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Violation(m)) | Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
