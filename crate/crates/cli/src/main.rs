//! `hygo-opt`: run, resume, repeat and report hybrid optimisations.

mod artifacts;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hygo_core::driver::{resume, CheckpointConfig};
use hygo_core::harness::{align, fold_seeds, run_kfold, summary_text, write_runs_csv, write_summary_csv};
use hygo_core::{run, ProblemSpec, RunResult};

use artifacts::{log_csv, read_log, scatter_csv, series_csv, series_from_log, series_of, write_atomic};
use config::ConfigFile;

#[derive(Parser)]
#[command(name = "hygo-opt", version, about = "Hybrid genetic optimisation with simplex exploitation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimisation and write its evaluation log.
    Run(RunArgs),
    /// Repeat a configuration over several seeds and aggregate the runs.
    Kfold(KfoldArgs),
    /// Continue a run from its checkpoint.
    Resume(ResumeArgs),
    /// Summarise evaluation logs and export plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Set a configuration key, e.g. `ga.pm=0.45` or `problem.dim=5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (defaults to `output.dir` of the configuration).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Write a checkpoint into this directory after every generation.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct KfoldArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Number of runs (defaults to `kfold.runs`).
    #[arg(short, long, value_parser = clap::value_parser!(u64).range(1..))]
    k: Option<u64>,
    /// Seed of the first run (defaults to `kfold.base_seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Runs executed concurrently.
    #[arg(long, env = "HYGO_OPT_JOBS", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

#[derive(Args)]
struct ResumeArgs {
    checkpoint: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Artifact name prefix (defaults to the checkpoint file stem).
    #[arg(long)]
    label: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Kfold(args) => cmd_kfold(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &ConfigArgs) -> Result<(ConfigFile, PathBuf)> {
    let config = ConfigFile::load(&common.config, &common.overrides)?;
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn echo(config: &ConfigFile) -> Result<String> {
    let text = config.to_toml()?;
    println!("# effective configuration\n{text}");
    Ok(text)
}

fn problem_label(spec: &ProblemSpec) -> String {
    match spec {
        ProblemSpec::Benchmark { function, dim, .. } => format!("{function}-{dim}d"),
        ProblemSpec::Landau(_) => "landau".into(),
        ProblemSpec::External(c) => format!("external:{}", c.command),
    }
}

fn write_run(out: &Path, label: &str, result: &RunResult) -> Result<()> {
    write_atomic(&out.join(format!("{label}.log.csv")), &log_csv(&result.log)?)?;
    write_atomic(&out.join(format!("{label}.series.csv")), &series_csv(&series_of(result))?)?;
    println!(
        "{label}: {} after {} evaluations in {} generations, best cost {}",
        result.termination,
        result.evaluations(),
        result.generations.len(),
        result.best_cost()
    );
    if let Some(program) = result.best.genome.as_program() {
        for (k, expr) in program.expressions().iter().enumerate() {
            println!("{label}: b{k} = {expr}");
        }
    } else {
        println!("{label}: best parameters {:?}", result.best.phenotype);
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let (mut config, out) = load(&args.common)?;
    if let Some(seed) = args.seed {
        config.run.seed = seed;
    }
    if let Some(dir) = &args.checkpoint_dir {
        let every = config.run.checkpoint.as_ref().map_or(1, |c| c.every);
        config.run.checkpoint = Some(CheckpointConfig {
            path: dir.join(format!("{}.ckpt", config.label)),
            every,
        });
    }
    let run_config = config.effective_run()?;
    let text = echo(&config)?;
    write_atomic(&out.join(format!("{}.config.toml", config.label)), text.as_bytes())?;
    let result = run(&run_config, None)?;
    write_run(&out, &config.label, &result)
}

fn cmd_kfold(args: KfoldArgs) -> Result<()> {
    let (mut config, out) = load(&args.common)?;
    if let Some(k) = args.k {
        config.kfold.runs = k as usize;
    }
    if let Some(seed) = args.seed {
        config.kfold.base_seed = seed;
    }
    if config.kfold.runs == 0 {
        bail!("k-fold needs at least one run");
    }
    let run_config = config.effective_run()?;
    let spec = run_config.problem.clone().expect("effective config has a problem");
    let problem = spec.build()?;
    let jobs = args
        .jobs
        .map(|j| j as usize)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let text = echo(&config)?;
    write_atomic(&out.join(format!("{}.config.toml", config.label)), text.as_bytes())?;
    let seeds = fold_seeds(config.kfold.base_seed, config.kfold.runs);
    let report = run_kfold(&config.label, &problem_label(&spec), &run_config, &problem, &seeds, jobs)?;
    let mut runs = Vec::new();
    write_runs_csv(&[&report], &mut runs)?;
    write_atomic(&out.join(format!("{}.runs.csv", config.label)), &runs)?;
    let mut summary = Vec::new();
    write_summary_csv(&[&report], &mut summary)?;
    write_atomic(&out.join(format!("{}.summary.csv", config.label)), &summary)?;
    print!("{}", summary_text(&[&report]));
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        eprintln!("run with seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> Result<()> {
    let label = match &args.label {
        Some(l) => l.clone(),
        None => args
            .checkpoint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .context("checkpoint path has no file name")?,
    };
    let resumed = resume(&args.checkpoint, None)?;
    if resumed.already_terminated {
        println!("{label}: run already terminated; nothing to resume");
    }
    write_run(&args.out, &label, &resumed.result)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut table = vec![vec![
        "log".to_string(),
        "evaluations".into(),
        "generations".into(),
        "best_cost".into(),
        "best_index".into(),
        "best_origin".into(),
    ]];
    let mut laws = Vec::new();
    for path in &args.logs {
        let rows = read_log(path)?;
        let stem = path
            .file_name()
            .map(|s| s.to_string_lossy().trim_end_matches(".csv").trim_end_matches(".log").to_string())
            .unwrap_or_else(|| "log".into());
        let series = series_from_log(&rows);
        write_atomic(&args.out.join(format!("{stem}.series.csv")), &series_csv(&series)?)?;
        write_atomic(&args.out.join(format!("{stem}.scatter.csv")), &scatter_csv(&rows)?)?;
        let best = rows
            .iter()
            .min_by(|a, b| a.cost.total_cmp(&b.cost))
            .expect("logs are non-empty");
        table.push(vec![
            path.display().to_string(),
            rows.len().to_string(),
            series.len().to_string(),
            best.cost.to_string(),
            best.index.to_string(),
            best.origin.clone(),
        ]);
        if let Some(program) = best.program() {
            let exprs = program.expressions();
            for (k, expr) in exprs.iter().enumerate() {
                laws.push(format!("{}: b{k} = {expr}", path.display()));
            }
        }
    }
    print!("{}", align(&table));
    for law in laws {
        println!("{law}");
    }
    Ok(())
}
