//! `frl`: run factored RL regret experiments, evaluate regret bounds and
//! audit recorded runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use frl_core::bounds::{corollary_psrl, corollary_ucrl, psrl_regret_bound, ucrl_regret_bound, BoundInputs, LogSymbol};
use frl_core::harness::{audit_directory, check_feasible, run_experiment, symmetric_structure, write_run, DirectoryAudit};
use frl_core::{fmdp, Execution, ExperimentConfig, FactoredMdp, FrlError, GraphStructure};

#[derive(Parser)]
#[command(name = "frl", version, about = "Regret experiments for reinforcement learning in factored MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output format for printed results.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Print progress and per-run detail to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write one CSV, log and manifest per seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to run instead of the config's list; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Worker threads for concurrent seeds (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Evaluate the regret bounds for a structure.
    Bounds(BoundsArgs),
    /// Replay the runs in a directory and check their recorded audits.
    Audit {
        dir: PathBuf,
    },
    /// Check a config, or a model file, without running anything.
    Validate {
        #[arg(long, required_unless_present = "model")]
        config: Option<PathBuf>,
        /// A factored MDP in JSON form.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BoundsArgs {
    /// A factored MDP JSON file whose structure is used; otherwise the
    /// symmetric structure given by --m, --k and --zeta.
    #[arg(long)]
    structure: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    zeta: usize,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    /// Elapsed time steps T.
    #[arg(long = "steps", short = 'T')]
    steps: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// Span of the optimal value function.
    #[arg(long, default_value_t = 1.0)]
    span: f64,
    #[arg(long, default_value_t = 1.0)]
    diameter: f64,
    /// In-log symbol k of the full bounds; defaults to ⌈T/τ⌉.
    #[arg(long = "log-k")]
    log_k: Option<u64>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<FrlError> for Failure {
    fn from(e: FrlError) -> Self {
        let code = match &e {
            FrlError::Config { .. } | FrlError::Size { .. } => 1,
            FrlError::Io { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out, seeds, jobs } => cmd_run(&cli, config, out.as_deref(), seeds, *jobs),
        Command::Bounds(args) => cmd_bounds(&cli, args),
        Command::Audit { dir } => cmd_audit(&cli, dir),
        Command::Validate { config, model } => cmd_validate(config.as_deref(), model.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cap_override() -> Result<Option<usize>, Failure> {
    match std::env::var("FRL_CAP") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| Failure {
            code: 1,
            message: format!("FRL_CAP={v} is not a positive integer"),
        }),
        Err(_) => Ok(None),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(cap) = cap_override()? {
        config.cap = Some(cap);
    }
    check_feasible(&config.environment, config.cap()).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    Ok(config)
}

/// Six significant digits for human-readable tables.
fn human(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..6).contains(&magnitude) {
        format!("{:.*}", (5 - magnitude).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

/// Finite floats as JSON numbers, the rest as strings.
fn json_float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn cmd_run(cli: &Cli, config_path: &Path, out: Option<&Path>, seeds: &[u64], jobs: usize) -> Result<u8, Failure> {
    let mut config = load_config(config_path)?;
    if !seeds.is_empty() {
        config.seeds = seeds.to_vec();
    }
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    if cli.verbose {
        eprintln!(
            "running {:?} for {} episodes on {} seed(s), config {}",
            config.agent.algorithm,
            config.episodes,
            config.seeds.len(),
            config.hash()
        );
    }
    let runs = frl_core::par::install(jobs, || run_experiment(&config, Execution::Parallel))?;
    let mut summary = Vec::new();
    for run in &runs {
        let manifest = write_run(&dir, &config, run)?;
        if cli.verbose {
            eprintln!("seed {} done in {:.3}s", run.record.seed, run.wall_clock_seconds);
        }
        summary.push((run.record.seed, run.record.cumulative_regret(), manifest));
    }
    match cli.format {
        Format::Json => {
            let rows: Vec<Value> = summary
                .iter()
                .map(|(seed, regret, manifest)| {
                    json!({"seed": seed, "cumulative_regret": json_float(*regret), "manifest": manifest.display().to_string()})
                })
                .collect();
            println!("{}", json!({"config_hash": config.hash(), "runs": rows}));
        }
        Format::Csv => {
            for (seed, regret, manifest) in &summary {
                println!("seed {seed}: cumulative regret {} ({})", human(*regret), manifest.display());
            }
        }
    }
    Ok(0)
}

fn cmd_bounds(cli: &Cli, args: &BoundsArgs) -> Result<u8, Failure> {
    let structure: GraphStructure = match &args.structure {
        Some(path) => FactoredMdp::read_json(path)?.structure,
        None => symmetric_structure(args.m, args.k, args.zeta, args.horizon)?,
    };
    let mut inputs = BoundInputs::new(structure.clone(), args.steps, args.delta, args.span, args.diameter);
    if let Some(k) = args.log_k {
        inputs = inputs.with_log_symbol(LogSymbol::Value(k));
    }
    let mut rows: Vec<(&str, Result<f64, String>)> = vec![
        ("psrl", psrl_regret_bound(&inputs).map_err(|e| e.to_string())),
        ("ucrl", ucrl_regret_bound(&inputs).map_err(|e| e.to_string())),
    ];
    if args.structure.is_none() {
        let j = (args.k as u64).pow(args.zeta as u32);
        rows.push(("psrl_symmetric", Ok(corollary_psrl(args.m, args.horizon, j, args.k as u64, args.steps))));
        rows.push((
            "ucrl_symmetric",
            corollary_ucrl(args.m, args.horizon, j, args.k as u64, args.steps, args.delta).map_err(|e| e.to_string()),
        ));
    }
    let failed = rows.iter().any(|(_, r)| r.is_err());
    match cli.format {
        Format::Json => {
            let bounds: serde_json::Map<String, Value> = rows
                .iter()
                .map(|(name, r)| {
                    let v = match r {
                        Ok(x) => json!({"value": json_float(*x)}),
                        Err(e) => json!({"error": e}),
                    };
                    (name.to_string(), v)
                })
                .collect();
            let out = json!({
                "inputs": {
                    "structure": structure,
                    "steps": args.steps,
                    "delta": args.delta,
                    "span": json_float(args.span),
                    "diameter": json_float(args.diameter),
                    "log_k": inputs.log_symbol,
                },
                "bounds": bounds,
            });
            println!("{out}");
        }
        Format::Csv => {
            println!(
                "inputs: m={} l={} tau={} T={} delta={} span={} diameter={} log_k={}",
                structure.num_state_factors(),
                structure.num_reward_factors(),
                structure.horizon,
                args.steps,
                args.delta,
                human(args.span),
                human(args.diameter),
                inputs.log_symbol
            );
            for (name, r) in &rows {
                match r {
                    Ok(x) => println!("{name:<15} {}", human(*x)),
                    Err(e) => println!("{name:<15} {e}"),
                }
            }
        }
    }
    Ok(if failed { 2 } else { 0 })
}

fn print_audit(report: &DirectoryAudit, verbose: bool) {
    for run in &report.runs {
        let status = if run.passed { "ok" } else { "FAIL" };
        println!("seed {}: {status}", run.seed);
        for c in &run.width_checks {
            if verbose || !c.audit.holds() {
                println!(
                    "  {} factor {}: width sum {} vs bound {} over {} steps{}",
                    c.kind,
                    c.factor,
                    human(c.audit.empirical),
                    human(c.audit.bound),
                    c.audit.steps,
                    if c.audit.holds() { "" } else { "  VIOLATED" }
                );
            }
        }
        for m in &run.mismatches {
            println!(
                "  episode {}: {} recorded {} but replay gives {}",
                m.episode,
                m.column,
                m.recorded,
                m.replayed
            );
        }
    }
    if let Some(c) = &report.coverage {
        println!(
            "coverage: {}/{} runs kept the true model in every confidence set ({}; 95% lower limit {})",
            c.covered,
            c.runs,
            human(c.fraction),
            human(c.lower_limit)
        );
    }
}

fn cmd_audit(cli: &Cli, dir: &Path) -> Result<u8, Failure> {
    if !dir.is_dir() {
        return Err(Failure {
            code: 1,
            message: format!("{} is not a directory", dir.display()),
        });
    }
    let report = match audit_directory(dir) {
        Ok(r) => r,
        Err(FrlError::Audit(msg)) if msg.starts_with("no runs found") => {
            return Err(Failure { code: 1, message: msg });
        }
        Err(e) => return Err(e.into()),
    };
    match cli.format {
        Format::Json => println!("{}", serde_json::to_string(&report).map_err(FrlError::from)?),
        Format::Csv => print_audit(&report, cli.verbose),
    }
    Ok(if report.passed { 0 } else { 2 })
}

fn cmd_validate(config: Option<&Path>, model: Option<&Path>) -> Result<u8, Failure> {
    if let Some(path) = config {
        let c = load_config(path)?;
        println!("{}: ok (config {})", path.display(), c.hash());
    }
    if let Some(path) = model {
        let text = std::fs::read_to_string(path).map_err(|e| FrlError::io(path, e))?;
        let mdp: FactoredMdp = serde_json::from_str(&text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        })?;
        let violations = fmdp::validate(&mdp);
        if violations.is_empty() {
            println!("{}: ok", path.display());
        } else {
            for v in &violations {
                println!("{}: {v}", path.display());
            }
            return Ok(1);
        }
    }
    Ok(0)
}
