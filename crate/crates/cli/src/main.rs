//! `stratadj`: simulate, analyze, truth and generate subcommands.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use stratadj::datagen::{true_ate, Generator, ModelSpec, TruthMethod};
use stratadj::sim::{analyze, emit_table, load_config, replicate_dataset, run_scenario, AnalysisOptions, TableFormat};
use stratadj::{AdjusterKind, AdjusterSpec, CsvSchema, Error, RandomizerConfig, RandomizerKind, Result};

#[derive(Parser)]
#[command(name = "stratadj", version, about = "Covariate-adjusted treatment effects under stratified randomization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo scenarios of a config file and print a summary table.
    Simulate(SimulateArgs),
    /// Estimate the treatment effect on a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Report the population average treatment effect of a synthetic model.
    Truth(TruthArgs),
    /// Write one simulated trial to CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output file; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the replication count of every scenario.
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "ols")]
    adjuster: String,
    /// Fit the adjuster separately in each stratum.
    #[arg(long)]
    stratum_specific: bool,
    /// Number of cross-fitting folds.
    #[arg(long)]
    crossfit: Option<usize>,
    /// Target treated proportion (defaults to the realized share).
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long, default_value = "a")]
    arm: String,
    #[arg(long, default_value = "stratum")]
    stratum: String,
    /// Columns to drop from the covariates (repeatable).
    #[arg(long)]
    exclude: Vec<String>,
    /// Adjuster hyperparameter as key=value (repeatable).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TruthArgs {
    #[arg(long)]
    model: u8,
    /// Monte Carlo draws; the closed form is used when available and this is omitted.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: u8,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Covariate count for Models 5-8.
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pi: f64,
    #[arg(long, default_value = "stratified_block")]
    randomizer: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also write the potential outcomes as columns y0 and y1.
    #[arg(long)]
    potential: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_output(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let format = TableFormat::parse(&args.format)?;
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut scenarios = load_config(&args.config)?;
    let mut summaries = Vec::with_capacity(scenarios.len());
    for cfg in &mut scenarios {
        if let Some(r) = args.replications {
            cfg.replications = r;
        }
        let s = run_scenario(cfg)?;
        info!("[{}] {} replications in {:.1}s", cfg.name, s.replications, s.runtime_secs);
        summaries.push(s);
    }
    write_output(&emit_table(&summaries, format)?, args.out.as_ref())
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let schema = CsvSchema {
        outcome: args.outcome.clone(),
        arm: args.arm.clone(),
        stratum: args.stratum.clone(),
        pi_target: args.pi,
        potential: None,
        exclude: args.exclude.clone(),
    };
    let ds = stratadj::data::load_csv(&args.data, &schema)?;
    let mut adjuster = AdjusterSpec::new(AdjusterKind::parse(&args.adjuster)?).stratum_specific(args.stratum_specific);
    if adjuster.kind == AdjusterKind::Oracle {
        return Err(Error::Config("the oracle adjuster is only available in simulations".into()));
    }
    for kv in &args.params {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
        adjuster.params.set(k, v)?;
    }
    let mut opts = AnalysisOptions::new(adjuster);
    opts.crossfit = args.crossfit;
    opts.level = args.level;
    opts.seed = args.seed;
    let report = analyze(&ds, &opts)?;
    println!("{report}");
    Ok(())
}

fn truth(args: &TruthArgs) -> Result<()> {
    let spec = ModelSpec::new(args.model, 1)?;
    let t = match args.mc {
        Some(draws) => true_ate(spec, TruthMethod::MonteCarlo { draws, seed: args.seed })?,
        None => match true_ate(spec, TruthMethod::ClosedForm) {
            Ok(t) => t,
            Err(_) => true_ate(spec, TruthMethod::MonteCarlo { draws: 1_000_000, seed: args.seed })?,
        },
    };
    if t.draws == 0 {
        println!("model {}: tau = {:.6} (closed form)", args.model, t.tau);
    } else {
        println!("model {}: tau = {:.6} (Monte Carlo, {} draws, se {:.6})", args.model, t.tau, t.draws, t.se);
    }
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let spec = match args.p {
        Some(p) => ModelSpec::with_dim(args.model, args.n, p)?,
        None => ModelSpec::new(args.model, args.n)?,
    };
    let randomizer = RandomizerConfig::new(RandomizerKind::parse(&args.randomizer)?, args.pi);
    randomizer.validate()?;
    let gen = Generator::new(spec)?;
    let (ds, _) = replicate_dataset(&gen, &randomizer, args.seed, 0)?;
    let mut buf = Vec::new();
    stratadj::data::write_csv(&ds, &mut buf, args.potential)?;
    write_output(&String::from_utf8_lossy(&buf), args.out.as_ref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Truth(a) => truth(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
