use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fedrep_core::harness::run::{plot_script, threads_from_env, write_atomic};
use fedrep_core::harness::{self, Algo, Engine, ExperimentConfig, VerifyOptions};
use fedrep_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fedrep-lab",
    version,
    about = "Shared linear representation learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated alternating minimization-descent.
    Fedrep(RunArgs),
    /// Full-measurement alternating minimization-descent.
    Fullmeas(RunArgs),
    /// Baselines selected with --algo (default gdgd).
    Baseline(RunArgs),
    /// New-client head fine-tuning on a learned representation.
    Newclient(RunArgs),
    /// Acceptance battery with a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Fedrep,
    Gdgd,
    #[value(name = "10gd")]
    TenGd,
    Local,
    Global,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long = "noise-var")]
    noise_var: Option<String>,
    #[arg(long, value_enum)]
    ortho: Option<OnOff>,
    #[arg(long = "data-mode", value_parser = ["fresh", "fixed"])]
    data_mode: Option<String>,
    #[arg(long = "grad-mode", value_parser = ["empirical", "population"])]
    grad_mode: Option<String>,
    #[arg(long, value_parser = ["random", "spectral"])]
    init: Option<String>,
    #[arg(long, value_enum)]
    algo: Option<AlgoArg>,
    #[arg(long = "check-theorem")]
    check_theorem: bool,
    /// Also write a matplotlib script plotting the CSV.
    #[arg(long = "plot-script")]
    plot_script: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Step-size multiplier for the contraction checks; above 1 they are
    /// reported as expected failures.
    #[arg(long = "eta-scale", default_value_t = 1.0)]
    eta_scale: f64,
}

fn quoted(v: &str) -> String {
    format!("{v:?}")
}

fn build_config(args: &RunArgs, engine: Engine, default_algo: Algo) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    // `baseline` keeps a baseline algo from the file; other subcommands pin theirs
    let keep = default_algo == Algo::GdGd && cfg.run.algo != Algo::FedRep;
    if !keep {
        cfg.run.algo = default_algo;
    }
    let sec = if engine == Engine::FullMeas {
        "fullmeas"
    } else {
        "fed"
    };
    let dims = [
        ("n", &args.n),
        ("d", &args.d),
        ("k", &args.k),
        ("rounds", &args.rounds),
        ("eta", &args.eta),
    ];
    for (key, val) in dims {
        if let Some(v) = val {
            cfg.set(&format!("{sec}.{key}"), v)?;
        }
    }
    let fed = [
        ("m", args.m.clone()),
        ("r", args.r.clone()),
        ("noise_var", args.noise_var.clone()),
        ("data_mode", args.data_mode.as_deref().map(quoted)),
        ("grad_mode", args.grad_mode.as_deref().map(quoted)),
        ("init", args.init.as_deref().map(quoted)),
        (
            "ortho",
            args.ortho.map(|o| matches!(o, OnOff::On).to_string()),
        ),
    ];
    for (key, val) in fed {
        if let Some(v) = val {
            cfg.set(&format!("fed.{key}"), &v)?;
        }
    }
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.run.replicates = r;
    }
    if let Some(a) = args.algo {
        cfg.run.algo = match a {
            AlgoArg::Fedrep => Algo::FedRep,
            AlgoArg::Gdgd => Algo::GdGd,
            AlgoArg::TenGd => Algo::TenGdGd,
            AlgoArg::Local => Algo::Local,
            AlgoArg::Global => Algo::Global,
        };
    }
    if args.check_theorem {
        cfg.run.check_theorem = true;
    }
    if let Some(out) = &args.out {
        cfg.run.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs, engine: Engine, default_algo: Algo) -> Result<bool> {
    let cfg = build_config(&args, engine, default_algo)?;
    let outcome = harness::run_experiment(&cfg, engine, threads_from_env()?)?;
    let csv_path = PathBuf::from(&cfg.run.out);
    harness::write_outputs(&outcome, &csv_path)?;
    if let Some(p) = &args.plot_script {
        write_atomic(p, plot_script(&csv_path, engine).as_bytes())?;
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "wrote {} ({:.2}s)",
        csv_path.display(),
        outcome.wall_time_secs
    );
    for c in &outcome.checks {
        println!(
            "{} {} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(outcome.all_checks_passed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fedrep(a) => run(a, Engine::Fed, Algo::FedRep),
        Command::Baseline(a) => run(a, Engine::Fed, Algo::GdGd),
        Command::Fullmeas(a) => run(a, Engine::FullMeas, Algo::FedRep),
        Command::Newclient(a) => run(a, Engine::NewClient, Algo::FedRep),
        Command::Verify(v) => threads_from_env().map(|threads| {
            let report = harness::verify_suite(&VerifyOptions {
                eta_scale: v.eta_scale,
                threads,
            });
            print!("{}", report.render());
            report.all_ok()
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Replicate { source, .. } = &e {
                eprintln!("  caused by: {source}");
            }
            ExitCode::from(2)
        }
    }
}
