//! `coinfer` command-line driver.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coinfer::agent::PpoHyper;
use coinfer::allocators::{allocate_all, total_objective, AllocProblem};
use coinfer::environment::SystemConfig;
use coinfer::exec::Exec;
use coinfer::harness::{
    emit_episodes, emit_metrics, emit_summary, run_baseline, train, Checkpoint, EvalRun,
    ExperimentSpec, MetricsWriter, PolicyKind, DEFAULT_LAMBDA_SWEEP,
};
use coinfer::queue_sim::simulate_md1;
use coinfer::system_model::local_sojourn;
use coinfer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "coinfer",
    version,
    about = "Cooperative edge inference simulator and optimizer"
)]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train LyMDO or the joint PPO baseline.
    Train(TrainArgs),
    /// Evaluate a checkpoint over an arrival-rate sweep.
    Eval(EvalArgs),
    /// Run the local, edge or random baseline over an arrival-rate sweep.
    Baseline(BaselineArgs),
    /// Solve one allocation problem given as JSON and print the result.
    Solve(SolveArgs),
    /// Simulate an M/D/1 queue and compare with the closed form.
    SimulateQueue(QueueArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// System configuration JSON; defaults to the bundled five-UE scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Slots per episode; defaults to the configuration's value.
    #[arg(long)]
    slots: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_parser = learned_policy)]
    policy: PolicyKind,
    #[arg(long, default_value_t = 400)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// PPO hyperparameter JSON; missing fields keep their defaults.
    #[arg(long)]
    ppo: Option<PathBuf>,
    /// Skip the per-slot metrics CSV.
    #[arg(long)]
    no_slot_metrics: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDA_SWEEP)]
    lambda_sweep: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64])]
    seeds: Vec<u64>,
    /// Episodes per sweep point.
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    /// Skip the per-slot metrics CSV.
    #[arg(long)]
    no_slot_metrics: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    slots: Option<usize>,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_parser = fixed_policy)]
    policy: PolicyKind,
    #[command(flatten)]
    sweep: SweepArgs,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueueArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    service_time: f64,
    #[arg(long, default_value_t = 1_000_000)]
    arrivals: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn learned_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    match s.parse::<PolicyKind>() {
        Ok(p) if p.is_learned() => Ok(p),
        _ => Err("expected lymdo or ppo-joint".into()),
    }
}

fn fixed_policy(s: &str) -> std::result::Result<PolicyKind, String> {
    match s.parse::<PolicyKind>() {
        Ok(p) if !p.is_learned() => Ok(p),
        _ => Err("expected local, edge or random".into()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Baseline(a) => cmd_baseline(a, exec),
        Command::Solve(a) => cmd_solve(a),
        Command::SimulateQueue(a) => cmd_queue(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &ScenarioArgs) -> Result<(String, SystemConfig)> {
    let (name, mut config) = match &args.config {
        Some(p) => (p.display().to_string(), SystemConfig::load(p)?),
        None => ("table1".to_string(), SystemConfig::table1()),
    };
    if let Some(k) = args.slots {
        config.slots_per_episode = k;
    }
    Ok((name, config))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_train(a: TrainArgs, exec: Exec) -> Result<()> {
    let (name, config) = load_config(&a.scenario)?;
    let mut spec = ExperimentSpec::new(name, config, a.policy);
    spec.episodes = a.episodes;
    spec.seeds = vec![a.seed];
    spec.out_dir = a.out.clone();
    if let Some(p) = &a.ppo {
        let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
        spec.ppo = serde_json::from_str::<PpoHyper>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    spec.validate()?;
    create_dir(&a.out)?;
    write_text(
        &a.out.join("config.json"),
        &(spec.system_config().to_json_string() + "\n"),
    )?;

    let n = spec.config.ues.len();
    let mut writer = if a.no_slot_metrics {
        None
    } else {
        Some(MetricsWriter::create(a.out.join("metrics.csv"), n)?)
    };
    let outcome = train(&spec, a.seed, exec, &mut |row| match writer.as_mut() {
        Some(w) => w.write(row),
        None => Ok(()),
    })?;
    if let Some(w) = writer {
        w.finish()?;
    }
    emit_episodes(&outcome.episodes, a.out.join("episodes.csv"))?;
    Checkpoint::new(&spec, a.seed, outcome.agent).save(a.out.join("checkpoint.json"))?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn emit_run(run: &EvalRun, n_ues: usize, sweep: &SweepArgs) -> Result<()> {
    emit_summary(&run.summary, &sweep.out)?;
    if !sweep.no_slot_metrics {
        emit_metrics(&run.rows, n_ues, sweep.out.join("metrics.csv"))?;
    }
    Ok(())
}

fn sweep_spec(spec: &mut ExperimentSpec, sweep: &SweepArgs) {
    spec.episodes = sweep.episodes;
    spec.lambda_sweep = sweep.lambda_sweep.clone();
    spec.seeds = sweep.seeds.clone();
    spec.out_dir = sweep.out.clone();
}

fn cmd_eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut config = ck.config.clone();
    if let Some(k) = a.slots {
        config.slots_per_episode = k;
    }
    let mut spec = ExperimentSpec::new(ck.scenario.clone(), config, ck.policy);
    sweep_spec(&mut spec, &a.sweep);
    create_dir(&a.sweep.out)?;
    let run = coinfer::harness::evaluate(&spec, Some(&ck.agent), exec, !a.sweep.no_slot_metrics)?;
    emit_run(&run, spec.config.ues.len(), &a.sweep)
}

fn cmd_baseline(a: BaselineArgs, exec: Exec) -> Result<()> {
    let (name, config) = load_config(&a.scenario)?;
    let mut spec = ExperimentSpec::new(name, config, a.policy);
    sweep_spec(&mut spec, &a.sweep);
    create_dir(&a.sweep.out)?;
    let run = run_baseline(&spec, exec, !a.sweep.no_slot_metrics)?;
    emit_run(&run, spec.config.ues.len(), &a.sweep)
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json value serializes") + "\n";
    match out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_solve(a: SolveArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.problem).map_err(|e| io_err(&a.problem, e))?;
    let prob: AllocProblem = serde_json::from_str(&text).map_err(|e| Error::Parse {
        layer: None,
        message: format!("{}: {e}", a.problem.display()),
    })?;
    prob.validate()?;
    let out = allocate_all(&prob);
    let value = serde_json::json!({
        "alpha": out.allocation.alpha,
        "f_ue": out.allocation.f_ue,
        "f_es": out.allocation.f_es,
        "local_stable": out.local_stable,
        "objective": total_objective(&prob, &out.allocation),
    });
    emit_json(&value, a.out.as_deref())
}

fn cmd_queue(a: QueueArgs) -> Result<()> {
    if !(a.lambda > 0.0 && a.service_time > 0.0) || a.arrivals == 0 {
        return Err(Error::Config(
            "lambda, service time and arrivals must be positive".into(),
        ));
    }
    let analytic = local_sojourn(a.lambda, 1.0, a.service_time)?;
    let s = simulate_md1(a.lambda, a.service_time, a.arrivals, a.seed);
    let value = serde_json::json!({
        "arrival_rate": a.lambda,
        "service_time": a.service_time,
        "utilization": a.lambda * a.service_time,
        "arrivals": a.arrivals,
        "seed": a.seed,
        "simulated_sojourn": s.mean_sojourn,
        "simulated_wait": s.mean_wait,
        "analytic_sojourn": analytic,
        "relative_error": (s.mean_sojourn - analytic).abs() / analytic,
    });
    emit_json(&value, a.out.as_deref())
}
