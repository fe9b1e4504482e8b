use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use spolab_core::analysis::{
    self, degeneracy_prob, expected_dynamic_samples, normalization_excess_variance, variance_ratio,
    VarianceRatioParams,
};
use spolab_core::config::{EnvSource, RunConfig};
use spolab_core::manifest::{sha256_hex, ExperimentManifest, MANIFEST_FILE};
use spolab_core::rng::{self, Purpose};
use spolab_core::schedsim::{median, replications_csv, run_replications, ScenarioConfig};
use spolab_core::tracker::{restore, snapshot, ValueTracker};
use spolab_core::trainloop::{initialize_tracker, metrics_csv, Trainer};

mod compare;

#[derive(Parser)]
#[command(
    name = "spolab",
    version,
    about = "Single-stream policy optimization lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a synthetic environment and write metrics.csv + manifest.json.
    Train(TrainArgs),
    /// Simulate group vs group-free batch assembly.
    Sched(SchedArgs),
    /// Closed-form quantities and their Monte Carlo checks.
    Analyze {
        #[command(subcommand)]
        command: AnalyzeCommand,
    },
    /// Join an SPO run and a GRPO run on iteration and summarize.
    Compare(CompareArgs),
    /// Estimate tracker values offline and write a snapshot.
    InitTracker(InitTrackerArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run config, or a manifest.json from a previous train run.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (the training loop itself is sequential).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Tracker snapshot to start from instead of offline initialization.
    #[arg(long)]
    tracker_init: Option<PathBuf>,
}

#[derive(Args)]
struct SchedArgs {
    /// Scenario config, or a manifest written by a previous sched run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications [default: 1000].
    #[arg(long)]
    replications: Option<u64>,
    /// Output CSV; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Expected resamples until both outcomes appear.
    En {
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        out: AnalyzeOut,
    },
    /// Probability that a group of size G is degenerate.
    Zg {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        g: u32,
        #[command(flatten)]
        out: AnalyzeOut,
    },
    /// Group-vs-single-stream variance ratio from a parameter file.
    Ratio {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: AnalyzeOut,
    },
    /// Monte Carlo estimate of the normalization-noise term.
    Psi {
        #[arg(long)]
        p: f64,
        /// Samples per normalization group.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: AnalyzeOut,
    },
    /// Monte Carlo validation table for the closed forms.
    Validate {
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: AnalyzeOut,
    },
}

#[derive(Args)]
struct AnalyzeOut {
    /// Also write the result as JSON plus `<out>.manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Output directory of a single-stream run.
    #[arg(long)]
    spo: PathBuf,
    /// Output directory of a group run.
    #[arg(long)]
    grpo: PathBuf,
    /// Write compare.csv, summary.json and manifest.json here instead of
    /// printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitTrackerArgs {
    /// Run config naming the environment; its tracker section supplies n0.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Rollouts per prompt; overrides `tracker.n0`.
    #[arg(long)]
    n0: Option<u64>,
    /// Snapshot path; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Sched(a) => sched(a),
        Command::Analyze { command } => analyze(command),
        Command::Compare(a) => compare::run(&a.spo, &a.grpo, a.out.as_deref()),
        Command::InitTracker(a) => init_tracker(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_value(path: &Path) -> Result<Value> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Load `path` as a config for `command`, unwrapping a manifest if given one.
fn load_config(path: &Path, command: &str) -> Result<(Value, Option<ExperimentManifest>)> {
    let value = read_value(path)?;
    match ExperimentManifest::detect(&value)? {
        Some(m) => {
            m.expect_command(command)?;
            Ok((m.config.clone(), Some(m)))
        }
        None => Ok((value, None)),
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Parse a run config and inline its environment fixture, recording the
/// fixture file's hash when it came from disk.
fn resolve_run_config(
    path: &Path,
    value: Value,
    manifest: &mut ExperimentManifest,
) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_value(value)
        .with_context(|| format!("invalid run config {}", path.display()))?;
    if let EnvSource::Path(p) = &cfg.env {
        let resolved = spolab_core::config::resolve_fixture_path(&config_dir(path), p);
        manifest.record_input(&resolved)?;
    }
    cfg.env = EnvSource::Inline(cfg.env_fixture(&config_dir(path))?);
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let (value, previous) = load_config(&a.config, "train")?;
    let mut manifest = ExperimentManifest::new("train", &a.config, &a.out, Value::Null);
    manifest.record_input(&a.config)?;
    let mut cfg = resolve_run_config(&a.config, value, &mut manifest)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let tracker_init = a.tracker_init.clone().or_else(|| {
        previous
            .as_ref()
            .and_then(|m| m.options.get("tracker_init"))
            .and_then(Value::as_str)
            .map(PathBuf::from)
    });

    let EnvSource::Inline(fixture) = &cfg.env else {
        unreachable!("env was inlined")
    };
    let (env, policy) = fixture.build()?;
    let trainer = match &tracker_init {
        Some(path) => {
            let bytes =
                std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            if let Some(expected) = previous
                .as_ref()
                .and_then(|m| m.fixture_hashes.get(&path.display().to_string()))
            {
                if *expected != sha256_hex(&bytes) {
                    bail!("{} changed since the manifest was written", path.display());
                }
            }
            manifest.record_input(path)?;
            manifest
                .options
                .insert("tracker_init".into(), json!(path.display().to_string()));
            let states = restore(&bytes).with_context(|| format!("loading {}", path.display()))?;
            let tracker = ValueTracker::from_states(cfg.tracker.params(), env.prompts(), &states)?;
            Trainer::with_tracker(cfg.clone(), env, policy, tracker)?
        }
        None => Trainer::new(cfg.clone(), env, policy)?,
    };
    let optimum = trainer.env().optimal_value();
    let rows = trainer.run()?;

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let csv_path = a.out.join("metrics.csv");
    std::fs::write(&csv_path, metrics_csv(&rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    manifest.seeds = vec![cfg.seed];
    manifest.options.insert("threads".into(), json!(a.threads));
    manifest.config = serde_json::to_value(&cfg)?;
    manifest.write(&a.out.join(MANIFEST_FILE))?;

    if let Some(last) = rows.last() {
        println!(
            "{} seed {}: {} iterations, final J {:.6} (optimum {:.6}, {:.2}%)",
            cfg.algorithm.as_str(),
            cfg.seed,
            rows.len(),
            last.expected_reward,
            optimum,
            100.0 * last.expected_reward / optimum
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn sched(a: SchedArgs) -> Result<ExitCode> {
    let (value, previous) = load_config(&a.config, "sched")?;
    let mut cfg: ScenarioConfig = serde_json::from_value(value)
        .with_context(|| format!("invalid scenario config {}", a.config.display()))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let replications = a
        .replications
        .or_else(|| {
            previous
                .as_ref()
                .and_then(|m| m.options.get("replications"))
                .and_then(Value::as_u64)
        })
        .unwrap_or(1000);
    if replications == 0 {
        bail!("--replications must be >= 1");
    }
    let outcomes = run_replications(&cfg, replications, a.threads)?;
    std::fs::write(&a.out, replications_csv(&outcomes))
        .with_context(|| format!("writing {}", a.out.display()))?;

    let mut manifest =
        ExperimentManifest::new("sched", &a.config, &a.out, serde_json::to_value(&cfg)?);
    manifest.record_input(&a.config)?;
    manifest.seeds = vec![cfg.seed];
    manifest
        .options
        .insert("replications".into(), json!(replications));
    manifest.options.insert("threads".into(), json!(a.threads));
    manifest.write(&sidecar(&a.out))?;

    let speedups: Vec<f64> = outcomes.iter().map(|o| o.speedup).collect();
    let dominated = outcomes
        .iter()
        .filter(|o| o.groupfree.makespan <= o.group.makespan)
        .count();
    println!(
        "{replications} replications: median speedup {:.4}, group-free <= group in {dominated}/{replications}",
        median(&speedups)
    );
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn write_analysis(
    out: &AnalyzeOut,
    name: &str,
    args: Value,
    result: Value,
    inputs: &[&Path],
) -> Result<()> {
    let Some(path) = &out.out else { return Ok(()) };
    let doc = json!({ "analysis": name, "args": args, "result": result });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    let config_path = inputs
        .first()
        .map_or_else(PathBuf::new, |p| p.to_path_buf());
    let mut manifest = ExperimentManifest::new(
        "analyze",
        &config_path,
        path,
        json!({ "analysis": name, "args": args }),
    );
    for p in inputs {
        manifest.record_input(p)?;
    }
    if let Some(seed) = args.get("seed").and_then(Value::as_u64) {
        manifest.seeds.push(seed);
    }
    manifest.write(&sidecar(path))?;
    Ok(())
}

fn analyze(cmd: AnalyzeCommand) -> Result<ExitCode> {
    match cmd {
        AnalyzeCommand::En { p, out } => {
            let v = expected_dynamic_samples(p)?;
            println!("{v}");
            write_analysis(&out, "en", json!({ "p": p }), json!(v), &[])?;
        }
        AnalyzeCommand::Zg { p, g, out } => {
            let v = degeneracy_prob(p, g)?;
            println!("{v}");
            write_analysis(&out, "zg", json!({ "p": p, "g": g }), json!(v), &[])?;
        }
        AnalyzeCommand::Ratio { config, out } => {
            let params: VarianceRatioParams = serde_json::from_value(read_value(&config)?)
                .with_context(|| format!("invalid ratio config {}", config.display()))?;
            let r = variance_ratio(&params)?;
            println!("baseline_noise {}", r.baseline_noise);
            println!("information_loss {}", r.information_loss);
            println!("normalization_noise {}", r.normalization_noise);
            println!("ratio {}", r.ratio);
            write_analysis(
                &out,
                "ratio",
                serde_json::to_value(params)?,
                serde_json::to_value(r)?,
                &[&config],
            )?;
        }
        AnalyzeCommand::Psi {
            p,
            n,
            trials,
            seed,
            out,
        } => {
            let v = normalization_excess_variance(
                p,
                n,
                trials,
                &mut rng::stream(seed, Purpose::MonteCarlo, 0),
            )?;
            println!("{v}");
            write_analysis(
                &out,
                "psi",
                json!({ "p": p, "n": n, "trials": trials, "seed": seed }),
                json!(v),
                &[],
            )?;
        }
        AnalyzeCommand::Validate { trials, seed, out } => {
            let rows = analysis::validate(trials, seed)?;
            println!(
                "{:<22} {:>14} {:>14} {:>12}  result",
                "check", "expected", "observed", "tolerance"
            );
            for r in &rows {
                println!(
                    "{:<22} {:>14.6} {:>14.6} {:>12.3e}  {}",
                    r.check,
                    r.expected,
                    r.observed,
                    r.tolerance,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} passed, {failed} failed", rows.len() - failed);
            write_analysis(
                &out,
                "validate",
                json!({ "trials": trials, "seed": seed }),
                serde_json::to_value(&rows)?,
                &[],
            )?;
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn init_tracker(a: InitTrackerArgs) -> Result<ExitCode> {
    let (value, _) = load_config(&a.config, "init-tracker")?;
    let mut manifest = ExperimentManifest::new("init-tracker", &a.config, &a.out, Value::Null);
    manifest.record_input(&a.config)?;
    let mut cfg = resolve_run_config(&a.config, value, &mut manifest)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n0) = a.n0 {
        cfg.tracker.n0 = n0;
    }
    cfg.tracker.params().validate()?;
    if cfg.tracker.n0 == 0 {
        bail!("n0 must be >= 1");
    }
    let EnvSource::Inline(fixture) = &cfg.env else {
        unreachable!("env was inlined")
    };
    let (env, policy) = fixture.build()?;
    let tracker = initialize_tracker(
        &env,
        &policy,
        cfg.tracker.n0,
        cfg.tracker.params(),
        cfg.seed,
    )?;
    std::fs::write(&a.out, snapshot(tracker.states()))
        .with_context(|| format!("writing {}", a.out.display()))?;
    manifest.seeds = vec![cfg.seed];
    manifest.config = serde_json::to_value(&cfg)?;
    manifest.write(&sidecar(&a.out))?;
    println!(
        "initialized {} prompts with n0 = {}; wrote {}",
        tracker.len(),
        cfg.tracker.n0,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
