use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use elicit_core::acquisition::Optimizer;
use elicit_core::dm::{calibrate_noise, CalibrationConfig};
use elicit_core::engine::experiment::ProblemEntry;
use elicit_core::engine::regret::replay_trace;
use elicit_core::engine::session::read_events;
use elicit_core::engine::{
    estimate_optimum, run_experiment, ExperimentConfig, Monotonicity, NoiseSetting, RegretCandidates, Session,
    VariantConfig,
};
use elicit_core::pareto::{approximate_pareto, Generator, ParetoSettings};
use elicit_core::problems::{catalog, ProblemSpec, UtilitySpec};

#[derive(Parser)]
#[command(name = "elicit", version, about = "Bayesian preference elicitation for multi-objective problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated elicitation experiments and write regret CSVs.
    Run(RunArgs),
    /// Approximate a problem's Pareto set and write it as CSV.
    Pareto(ParetoArgs),
    /// Rebuild a session from its event log, verifying every step.
    Replay(ReplayArgs),
    /// Calibrate logistic response noise to a target error rate.
    Calibrate(CalibrateArgs),
    /// List the benchmark problems.
    Problems,
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name such as dtlz2-9-6 (repeatable).
    #[arg(long)]
    problem: Vec<String>,
    /// Variant label: int-obj, int-dec, post-obj, post-dec, optionally with
    /// a -random suffix (repeatable).
    #[arg(long)]
    variant: Vec<String>,
    /// Elicitation queries per session
    #[arg(long)]
    budget: Option<usize>,
    /// Random pairs before the first fit; default 2(d+1)
    #[arg(long)]
    initial_pairs: Option<usize>,
    /// Menu sizes, comma-separated.
    #[arg(long, value_delimiter = ',')]
    menu_size: Vec<usize>,
    /// Target error rate among near-optimal pairs, or "none".
    #[arg(long)]
    noise: Option<String>,
    /// Fixed logistic noise level instead of a calibrated one.
    #[arg(long, conflicts_with = "noise")]
    noise_lambda: Option<f64>,
    /// Monotonicity pairs as count:delta, or "off".
    #[arg(long)]
    mono: Option<Monotonicity>,
    /// Virtual monotonicity pairs per refit
    #[arg(long, requires = "mono_delta")]
    mono_pairs: Option<usize>,
    /// Sampling box margin for monotonicity pairs
    #[arg(long, requires = "mono_pairs")]
    mono_delta: Option<f64>,
    /// Seeds as an inclusive range a..b or a comma-separated list.
    #[arg(long)]
    seeds: Option<String>,
    /// Monte Carlo samples during acquisition search
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Acquisition search restarts
    #[arg(long)]
    restarts: Option<usize>,
    /// Acquisition optimizer: pattern or evolutionary.
    #[arg(long)]
    optimizer: Option<String>,
    /// Regret candidates: queried or full.
    #[arg(long)]
    regret_candidates: Option<String>,
    /// Externally generated Pareto set CSV, as problem=path (repeatable).
    #[arg(long)]
    pareto_file: Vec<String>,
    /// Evaluations for the ground-truth optimum search
    #[arg(long)]
    truth_budget: Option<usize>,
    /// Leave the walltime column empty so reruns produce identical files.
    #[arg(long)]
    no_walltime: bool,
    /// Skip writing per-session event logs
    #[arg(long)]
    no_session_logs: bool,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParetoArgs {
    #[arg(long)]
    problem: String,
    /// nsga2 or nsga3; defaults by objective count.
    #[arg(long)]
    algo: Option<Generator>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; defaults to <problem>_pareto.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Skip recomputing logged queries and menus.
    #[arg(long)]
    no_verify: bool,
    /// Also print the regret trace against the simulated decision-maker.
    #[arg(long)]
    regret: bool,
    #[arg(long, default_value_t = 1_000_000)]
    truth_budget: usize,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    target: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    /// Defaults to PP_BIND_ADDR, then 127.0.0.1:8080.
    #[arg(long)]
    bind: Option<String>,
    /// Defaults to PP_DATA_DIR, then ./elicit-data.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad seed {v:?}")))
        .collect()
}

fn problem(name: &str) -> Result<ProblemSpec> {
    ProblemSpec::from_str(name).with_context(|| format!("unknown problem {name:?}"))
}

fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::new(Vec::new(), Vec::new(), PathBuf::from("results")),
    };
    if !args.problem.is_empty() {
        config.problems = args
            .problem
            .iter()
            .map(|p| {
                Ok(ProblemEntry {
                    problem: problem(p)?,
                    utility: None,
                })
            })
            .collect::<Result<_>>()?;
    }
    if !args.variant.is_empty() {
        config.variants = args.variant.iter().map(|v| VariantConfig::from_label(v)).collect::<Result<_, _>>()?;
    }
    if config.problems.is_empty() {
        bail!("no problems given (use --problem or a config file)");
    }
    if config.variants.is_empty() {
        config.variants.push(VariantConfig::default());
    }
    let seeds = args.seeds.as_deref().map(parse_seeds).transpose()?;
    let mono = match (args.mono, args.mono_pairs, args.mono_delta) {
        (Some(m), None, None) => Some(m),
        (None, Some(count), Some(delta)) => Some(Monotonicity::On { count, delta }),
        (None, None, None) => None,
        _ => bail!("use either --mono or --mono-pairs with --mono-delta"),
    };
    let optimizer = args
        .optimizer
        .as_deref()
        .map(|o| match o {
            "pattern" => Ok(Optimizer::PatternSearchRestarts),
            "evolutionary" | "de" => Ok(Optimizer::Evolutionary),
            _ => bail!("unknown optimizer {o:?}"),
        })
        .transpose()?;
    let regret_candidates = args
        .regret_candidates
        .as_deref()
        .map(|c| match c {
            "queried" => Ok(RegretCandidates::QueriedPoints),
            "full" => Ok(RegretCandidates::FullSpace),
            _ => bail!("unknown regret candidates {c:?}"),
        })
        .transpose()?;
    for v in &mut config.variants {
        if let Some(b) = args.budget {
            v.budget = b;
        }
        if args.initial_pairs.is_some() {
            v.initial_pairs = args.initial_pairs;
        }
        if !args.menu_size.is_empty() {
            v.menu_k.clone_from(&args.menu_size);
        }
        if let Some(m) = mono {
            v.monotonicity = m;
        }
        if let Some(s) = &seeds {
            v.seeds.clone_from(s);
        }
        if let Some(n) = args.mc_samples {
            v.acquisition.mc_samples = n;
            v.menu.search.mc_samples = n;
        }
        if let Some(r) = args.restarts {
            v.acquisition.restarts = r;
            v.menu.search.restarts = r;
        }
        if let Some(o) = optimizer {
            v.acquisition.optimizer = o;
            v.menu.search.optimizer = o;
        }
        if let Some(c) = regret_candidates {
            v.regret_candidates = c;
        }
    }
    match (args.noise.as_deref(), args.noise_lambda) {
        (Some("none") | Some("0"), _) => config.noise = NoiseSetting::None,
        (Some(t), _) => config.noise = NoiseSetting::ErrorRate { target: t.parse().context("--noise")? },
        (None, Some(lambda)) => config.noise = NoiseSetting::Lambda { lambda },
        (None, None) => {}
    }
    for spec in &args.pareto_file {
        let (name, path) = spec.split_once('=').context("--pareto-file expects problem=path")?;
        config.pareto_files.insert(problem(name)?.name(), PathBuf::from(path));
    }
    if let Some(b) = args.truth_budget {
        config.ground_truth_budget = b;
    }
    if args.no_walltime {
        config.record_walltime = false;
    }
    if args.no_session_logs {
        config.write_session_logs = false;
    }
    if let Some(out) = &args.out {
        config.out_dir.clone_from(out);
    }
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<()> {
    let config = experiment_config(&args)?;
    let summary = run_experiment(&config)?;
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    for f in &summary.failures {
        eprintln!("failed: {} {} seed {}: {}", f.problem, f.variant, f.seed, f.error);
    }
    println!(
        "{} replications, {} failures",
        summary.replications.len(),
        summary.failures.len()
    );
    if !summary.failures.is_empty() {
        std::process::exit(2);
    }
    Ok(())
}

fn pareto(args: ParetoArgs) -> Result<()> {
    let p = problem(&args.problem)?;
    let mut settings = ParetoSettings::standard(p.m);
    if let Some(a) = args.algo {
        settings.algorithm = a;
    }
    if let Some(n) = args.pop {
        settings.population = n;
    }
    if let Some(g) = args.gens {
        settings.generations = g;
    }
    let approx = approximate_pareto(&p, &settings, args.seed)?;
    let out = args.out.unwrap_or_else(|| PathBuf::from(format!("{}_pareto.csv", p.name())));
    approx.save(&p, &out)?;
    println!("{} non-dominated points written to {}", approx.len(), out.display());
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<()> {
    let file = std::fs::File::open(&args.log).with_context(|| format!("opening {}", args.log.display()))?;
    let events = read_events(std::io::BufReader::new(file))?;
    let session = Session::from_events(events.clone(), !args.no_verify)?;
    let report = session.fit_report();
    println!(
        "{} {} seed {}: {} events, {} elicited comparisons, status {:?}",
        session.problem().name(),
        session.variant().label(),
        session.seed(),
        session.events().len(),
        session.interaction_index(),
        session.status()
    );
    if let Some(r) = report {
        println!("final fit: {}", serde_json::to_string(&r.hyperparams)?);
    }
    if !args.no_verify {
        println!("replay verified");
    }
    if args.regret {
        let utility = session
            .dm()
            .map(|d| d.utility.clone())
            .context("the session has no simulated decision-maker to score against")?;
        let truth = estimate_optimum(session.problem(), &utility, args.truth_budget, 0)?;
        let trace = replay_trace(events, &truth, &utility)?;
        println!("n,k,regret");
        for r in &trace.records {
            for m in &r.regrets {
                println!("{},{},{:?}", r.n, m.k, m.regret);
            }
        }
    }
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let p = problem(&args.problem)?;
    let u = UtilitySpec::paired_with(&p);
    let c = calibrate_noise(&p, &u, args.target, &CalibrationConfig::default(), args.seed)?;
    println!("{}", serde_json::to_string_pretty(&c)?);
    Ok(())
}

fn problems() {
    for (p, u) in catalog() {
        println!("{:<12} d={:<3} m={:<3} utility={}", p.name(), p.d, p.m, u.label());
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let mut config = elicit_service::ServiceConfig::from_env();
    if let Some(b) = args.bind {
        config.bind = b;
    }
    if let Some(d) = args.data_dir {
        config.data_dir = d;
    }
    tokio::runtime::Runtime::new()?.block_on(elicit_service::serve(config))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Pareto(a) => pareto(a),
        Command::Replay(a) => replay(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Problems => {
            problems();
            Ok(())
        }
        Command::Serve(a) => serve(a),
    }
}
