use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nonlocal_fronts::config::ExperimentConfig;
use nonlocal_fronts::entire::Case;
use nonlocal_fronts::kernel::EXAMPLE_PRESET;
use nonlocal_fronts::pipeline::{run_pipeline, run_stages, run_sweep, PipelineOutcome, Stage, StageStatus, SweepAxis};
use nonlocal_fronts::{Error, Result};
use serde_json::Value;

/// Traveling fronts and entire solutions of `u_t = J*u - u + f(u)`.
#[derive(Parser, Debug)]
#[command(name = "nlfronts", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration; may name a `"preset"` to override.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Built-in configuration used when no file is given.
    #[arg(long, global = true, default_value = EXAMPLE_PRESET)]
    preset: String,

    /// Override a field, e.g. `--set kernel.shift=0.5`; the value is read as
    /// JSON, falling back to a string.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,

    /// Run directory, relative to the output root.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Directory that run directories are created under.
    #[arg(long, global = true, env = "NLFRONTS_OUTPUT_ROOT")]
    output_root: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,

    /// Print the stage reports as JSON instead of a summary.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mass, moments and hypothesis checks of the kernel.
    KernelCheck,
    /// Both fronts, speed identities and the sign classification.
    Wave,
    /// Characteristic roots, tail fits and the tail-ratio branch.
    Spectral,
    /// The front-like entire solution and its diagnostics.
    Entire(EntireArgs),
    /// Every stage, including the comparison suite.
    Pipeline,
    /// One pipeline per point of a cartesian product of overrides.
    Sweep(SweepArgs),
    /// Prints the resolved configuration.
    ShowConfig,
}

#[derive(Args, Debug)]
struct EntireArgs {
    /// Phase of the construction; defaults to ω.
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    /// Start times of the ladder, e.g. `5,10,20`.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<u32>>,
    #[arg(long)]
    t_forward: Option<f64>,
    /// Fail unless the speeds fall in this case (a, b or c).
    #[arg(long, value_parser = parse_case)]
    case_expect: Option<Case>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Axis as `PATH=V1,V2,...`; repeat for a product.
    #[arg(long = "axis", value_name = "PATH=VALUES", required = true)]
    axes: Vec<String>,
}

fn parse_case(s: &str) -> std::result::Result<Case, String> {
    Case::parse(s).map_err(|e| e.to_string())
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn split_assignment(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .ok_or_else(|| Error::Config(format!("expected PATH=VALUE, got '{s}'")))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::preset(&common.preset)?,
    };
    for o in &common.overrides {
        let (path, raw) = split_assignment(o)?;
        cfg = cfg.with_override(path, parse_value(raw))?;
    }
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn report(outcome: &PipelineOutcome, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(&outcome.diagnostics)?);
        return Ok(());
    }
    for stage in &outcome.diagnostics.stages {
        match &stage.status {
            StageStatus::Ok => println!("[{}] ok", stage.stage.name()),
            StageStatus::Failed { exit_code, error } => {
                println!("[{}] FAILED (exit {exit_code}): {error}", stage.stage.name())
            }
            StageStatus::Skipped => println!("[{}] skipped", stage.stage.name()),
        }
        for c in &stage.claims {
            let rel = serde_json::to_value(c.relation)?;
            println!(
                "    {} {:<34} {:>13.6e} {} {:e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                rel.as_str().unwrap_or("?"),
                c.tolerance
            );
        }
    }
    println!("manifest: {}", outcome.dir.join("manifest.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = load_config(&cli.common)?;
    let root = cli.common.output_root.as_deref();
    let stages: &[Stage] = match &cli.command {
        Command::KernelCheck => &[Stage::Kernel],
        Command::Wave => &[Stage::Kernel, Stage::Waves, Stage::Identities],
        Command::Spectral => &[Stage::Kernel, Stage::Waves, Stage::Identities, Stage::Spectral],
        Command::Entire(args) => {
            if let Some(t) = args.theta {
                cfg.entire.run.theta = Some(t);
            }
            if let Some(n) = &args.n_list {
                cfg.entire.run.n_list = n.clone();
            }
            if let Some(t) = args.t_forward {
                cfg.entire.run.t_forward = Some(t);
            }
            if args.case_expect.is_some() {
                cfg.entire.case_expect = args.case_expect;
            }
            cfg.entire.enabled = true;
            &[Stage::Kernel, Stage::Waves, Stage::Identities, Stage::Spectral, Stage::Entire]
        }
        Command::Pipeline => {
            let outcome = run_pipeline(&cfg, root)?;
            report(&outcome, cli.common.json)?;
            return Ok(outcome.exit_code());
        }
        Command::Sweep(args) => {
            let axes = args
                .axes
                .iter()
                .map(|a| {
                    let (path, raw) = split_assignment(a)?;
                    Ok(SweepAxis {
                        path: path.to_string(),
                        values: raw.split(',').map(parse_value).collect(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let summary = run_sweep(&cfg, &axes, root)?;
            for p in &summary.points {
                let over: Vec<String> = p.overrides.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("point {:03} [{}] exit {} -> {}", p.index, over.join(" "), p.exit_code, p.output_dir.display());
            }
            return Ok(summary.points.iter().map(|p| p.exit_code).max().unwrap_or(0));
        }
        Command::ShowConfig => {
            cfg.validate()?;
            println!("{}", cfg.to_json()?);
            return Ok(0);
        }
    };
    let outcome = run_stages(&cfg, root, stages)?;
    report(&outcome, cli.common.json)?;
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
