//! `robust-moo`: quantile-based robust multi-objective optimization from the
//! command line.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use robust_moo::adaptive::{self, Checkpoint, RunOptions, RunResult, SurrogateMode};
use robust_moo::bench::{self, ReferenceArtifact, ReferenceConfig};
use robust_moo::metrics::{delta_hv, delta_hv_prime, Front2D};
use robust_moo::sampling::CrnContext;

use config::{resolve_problem, resolve_reference, Problem, RunConfig};
use output::Summary;

#[derive(Parser)]
#[command(name = "robust-moo", version, about = "Robust multi-objective optimization of quantiles")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive optimizer, optionally over several targets and repetitions.
    Run(RunArgs),
    /// Built-in benchmark problems.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Same as `run`, restricted to built-in problems.
    Run(RunArgs),
    /// Solve a benchmark on the true model and write its reference artifact.
    Reference(ReferenceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in problem (example1, example2) or problem file.
    problem: Option<String>,
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated convergence targets.
    #[arg(long, value_delimiter = ',')]
    eta_bar: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Monte Carlo sample size per quantile.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, env = "ROBUST_MOO_OUT")]
    out: Option<PathBuf>,
    /// Reference artifact for the hypervolume metrics.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Optimize true-model quantiles directly, without surrogates.
    #[arg(long)]
    true_model: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Pause after this many completed cycles.
    #[arg(long)]
    stop_after_cycles: Option<usize>,
}

#[derive(Args)]
struct ReferenceArgs {
    problem: String,
    /// Output file (default: the shipped artifact location).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    population: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn config_error(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn runtime_error(error: anyhow::Error) -> Failure {
    let is_config = error.chain().any(|e| {
        matches!(
            e.downcast_ref::<robust_moo::Error>(),
            Some(robust_moo::Error::InvalidConfig(_) | robust_moo::Error::InvalidProblem(_))
        )
    });
    Failure {
        code: if is_config { 2 } else { 3 },
        error,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Run(args) => run_command(args),
        Command::Bench {
            command: BenchCommand::Run(args),
        } => match args.problem.as_deref() {
            Some(p) if bench::BENCHMARK_NAMES.contains(&p) => run_command(args),
            other => Err(config_error(anyhow::anyhow!(
                "bench run needs one of {}, got {:?}",
                bench::BENCHMARK_NAMES.join(", "),
                other.unwrap_or("nothing")
            ))),
        },
        Command::Bench {
            command: BenchCommand::Reference(args),
        } => reference_command(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn build_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut c = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.problem {
        c.problem = Some(p.clone());
    }
    if let Some(e) = &args.eta_bar {
        if e.len() == 1 {
            c.algorithm.target = e[0];
            c.eta_bar.clear();
        } else {
            c.eta_bar = e.clone();
        }
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(r) = args.reps {
        c.reps = r;
    }
    if let Some(n) = args.samples {
        c.algorithm.n_samples = n;
    }
    if let Some(o) = &args.out {
        c.out = Some(o.clone());
    }
    if let Some(r) = &args.reference {
        c.reference = Some(r.clone());
    }
    if args.true_model {
        c.algorithm.surrogate = SurrogateMode::TrueModel;
    }
    if c.problem.is_none() {
        bail!("no problem given (positional argument or \"problem\" in the config)");
    }
    c.validate()?;
    Ok(c)
}

fn run_command(args: RunArgs) -> Result<(), Failure> {
    let config = build_config(&args).map_err(config_error)?;
    let name = config.problem.clone().unwrap_or_default();
    let problem = resolve_problem(&name, config.example1_constraints).map_err(config_error)?;
    let reference = resolve_reference(&config, &problem).map_err(config_error)?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("robust-moo-out"));
    let targets = config.targets();
    let sweep = targets.len() > 1 || config.reps > 1;
    if sweep && (args.resume.is_some() || args.stop_after_cycles.is_some()) {
        return Err(config_error(anyhow::anyhow!(
            "--resume and --stop-after-cycles need a single target and repetition"
        )));
    }
    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("cannot load checkpoint {}", p.display())).map_err(config_error)?),
        None => None,
    };

    let mut rows = Vec::new();
    for &target in &targets {
        for rep in 0..config.reps {
            let seed = config.seed + rep as u64;
            let dir = if sweep {
                out.join(format!("eta_{target}")).join(format!("rep_{rep}"))
            } else {
                out.clone()
            };
            let mut run_config = config.clone();
            run_config.algorithm.target = target;
            run_config.eta_bar.clear();
            run_config.reps = 1;
            run_config.seed = seed;
            let options = RunOptions {
                checkpoint_path: Some(dir.join("checkpoint.json")),
                resume: resume.clone(),
                stop_after_cycles: args.stop_after_cycles,
            };
            let summary = single_run(&problem, &run_config, reference.as_ref(), &dir, &options)?;
            rows.push((target, rep, seed, summary));
        }
    }
    if sweep {
        write_sweep(&out.join("delta_hv.csv"), &rows).map_err(runtime_error)?;
    }
    Ok(())
}

struct RunOutcome {
    status: String,
    cycles: usize,
    evaluations: u64,
    delta_hv: Option<f64>,
    delta_hv_prime: Option<f64>,
}

fn single_run(
    problem: &Problem,
    config: &RunConfig,
    reference: Option<&ReferenceArtifact>,
    dir: &Path,
    options: &RunOptions,
) -> Result<RunOutcome, Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(runtime_error)?;
    let start = Instant::now();
    let result = adaptive::run(&problem.spec, problem.model.as_ref(), &config.algorithm, config.seed, options)
        .map_err(|e| runtime_error(e.into()))?;
    let elapsed = start.elapsed().as_secs_f64();
    let (dhv, dhv_prime) = metrics(problem, reference, &result).map_err(runtime_error)?;
    write_run(problem, config, reference, dir, &result, elapsed, dhv, dhv_prime).map_err(runtime_error)?;
    log::info!(
        "{}: {:?} after {} cycles, {} evaluations{}",
        dir.display(),
        result.status,
        result.cycles,
        result.evaluations,
        dhv.map(|v| format!(", delta HV {v:.4}")).unwrap_or_default()
    );
    Ok(RunOutcome {
        status: serde_json::to_value(result.status)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        cycles: result.cycles,
        evaluations: result.evaluations,
        delta_hv: dhv,
        delta_hv_prime: dhv_prime,
    })
}

fn metrics(
    problem: &Problem,
    reference: Option<&ReferenceArtifact>,
    result: &RunResult,
) -> anyhow::Result<(Option<f64>, Option<f64>)> {
    let Some(reference) = reference else {
        return Ok((None, None));
    };
    if problem.spec.n_objectives != 2 || result.pareto_front.is_empty() {
        return Ok((None, None));
    }
    let ref_front = Front2D::from_rows(&reference.front)?;
    let dhv = delta_hv(&Front2D::from_rows(&result.pareto_front)?, &ref_front)?;
    // True quantiles under the reference's own random numbers; only cheap for
    // the analytic benchmarks.
    let prime = if problem.builtin.is_some() {
        let crn = CrnContext::new(&problem.spec, reference.config.n_samples, reference.config.seed)?;
        Some(delta_hv_prime(&result.pareto_set, problem.model.as_ref(), &problem.spec, &crn, &ref_front)?)
    } else {
        None
    };
    Ok((Some(dhv), prime))
}

#[allow(clippy::too_many_arguments)]
fn write_run(
    problem: &Problem,
    config: &RunConfig,
    reference: Option<&ReferenceArtifact>,
    dir: &Path,
    result: &RunResult,
    elapsed: f64,
    dhv: Option<f64>,
    dhv_prime: Option<f64>,
) -> anyhow::Result<()> {
    let spec = &problem.spec;
    output::write_front(&dir.join("pareto_front.csv"), spec, result)?;
    output::write_set(&dir.join("pareto_set.csv"), spec, result)?;
    output::write_history(&dir.join("history.csv"), spec.n_objectives, &result.history)?;
    let summary = Summary {
        problem: &spec.name,
        status: result.status,
        converged: result.converged(),
        seed: config.seed,
        target: config.algorithm.target,
        cycles: result.cycles,
        evaluations: result.evaluations,
        n_samples: result.n_samples,
        front_size: result.pareto_set.len(),
        delta_hv: dhv,
        delta_hv_prime: dhv_prime,
        reference: reference.map(|r| r.problem.clone()),
        elapsed_seconds: elapsed,
        config,
    };
    output::write_summary(&dir.join("summary.json"), &summary)?;
    let svg = output::front_svg(
        &result.pareto_front,
        reference.map(|r| r.front.as_slice()),
        &format!("{} (target {})", spec.name, config.algorithm.target),
    );
    std::fs::write(dir.join("front.svg"), svg)?;
    Ok(())
}

fn write_sweep(path: &Path, rows: &[(f64, usize, u64, RunOutcome)]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eta_bar", "rep", "seed", "status", "cycles", "evaluations", "delta_hv", "delta_hv_prime"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (target, rep, seed, o) in rows {
        w.write_record([
            target.to_string(),
            rep.to_string(),
            seed.to_string(),
            o.status.clone(),
            o.cycles.to_string(),
            o.evaluations.to_string(),
            opt(o.delta_hv),
            opt(o.delta_hv_prime),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn reference_command(args: ReferenceArgs) -> Result<(), Failure> {
    let problem = bench::benchmark(&args.problem).map_err(|e| config_error(e.into()))?;
    let defaults = problem.reference;
    let config = ReferenceConfig {
        population: args.population.unwrap_or(defaults.population),
        generations: args.generations.unwrap_or(defaults.generations),
        n_samples: args.samples.unwrap_or(defaults.n_samples),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let artifact = bench::reference_solve(&problem, &config).map_err(|e| runtime_error(e.into()))?;
    let path = args.out.unwrap_or_else(|| bench::reference_path(&args.problem));
    artifact.save(&path).map_err(|e| runtime_error(e.into()))?;
    println!("{} front points written to {}", artifact.front.len(), path.display());
    Ok(())
}
