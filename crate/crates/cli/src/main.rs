use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use basecagg_core::sim::{self, RunMetrics, Scheme, SimConfig};
use basecagg_core::verify::{self, VerifyOptions};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "basecagg", version, about = "Buffered asynchronous secure aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write metrics.csv and manifest.toml.
    Run(RunArgs),
    /// Run every point of the config's [sweep] grid in parallel.
    Sweep(RunArgs),
    /// Run the protocol self-check batteries.
    Verify(VerifyArgs),
    /// Run basecagg and fedbuff-float on the same seed and schedule.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// basecagg or fedbuff-float
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Minimum number of randomized protocol rounds in the exactness battery.
    #[arg(long, default_value_t = 1000)]
    rounds: usize,
    /// Draws per point in the quantizer battery.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Corrupt one stored share; the exactness battery must then fail.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'a str,
    scheme: &'a str,
    seed: u64,
    rounds_completed: usize,
    final_accuracy: f64,
    config: &'a SimConfig,
}

fn load_config(args: &RunArgs) -> Result<SimConfig> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(scheme) = args.scheme {
        cfg.scheme = scheme;
    }
    Ok(cfg)
}

/// Creates `dir`, refusing to reuse a non-empty one without `--force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            bail!("{} already exists and is not empty; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_outputs(dir: &Path, cfg: &SimConfig, scheme: Scheme, metrics: &RunMetrics, name: &str) -> Result<()> {
    let csv_path = dir.join(format!("{name}.csv"));
    let file = fs::File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    metrics.write_csv(file)?;
    let mut resolved = cfg.clone();
    resolved.scheme = scheme;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        scheme: scheme.name(),
        seed: cfg.seed,
        rounds_completed: metrics.rows.len(),
        final_accuracy: metrics.final_accuracy().unwrap_or(f64::NAN),
        config: &resolved,
    };
    let manifest_name = if name == "metrics" {
        "manifest.toml".to_string()
    } else {
        format!("{name}.manifest.toml")
    };
    fs::write(dir.join(manifest_name), toml::to_string(&manifest)?)?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    prepare_dir(&args.out, args.force)?;
    let metrics = sim::run(&cfg)?;
    write_outputs(&args.out, &cfg, cfg.scheme, &metrics, "metrics")?;
    println!(
        "{}: {} rounds, final accuracy {:.4}, wrote {}",
        cfg.scheme.name(),
        metrics.rows.len(),
        metrics.final_accuracy().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    index: usize,
    label: String,
    value: f64,
    seed: u64,
    status: String,
    final_accuracy: Option<f64>,
}

fn cmd_sweep(args: &RunArgs) -> Result<bool> {
    let cfg = load_config(args)?;
    let children = cfg.sweep_children()?;
    prepare_dir(&args.out, args.force)?;
    let results: Vec<SweepRow> = children
        .par_iter()
        .map(|child| {
            let dir = args.out.join(&child.label);
            let outcome = (|| -> Result<f64> {
                fs::create_dir_all(&dir)?;
                let m = sim::run(&child.config)?;
                write_outputs(&dir, &child.config, child.config.scheme, &m, "metrics")?;
                Ok(m.final_accuracy().unwrap_or(f64::NAN))
            })();
            let (status, final_accuracy) = match outcome {
                Ok(acc) => ("ok".to_string(), Some(acc)),
                Err(e) => (format!("failed: {e:#}"), None),
            };
            SweepRow {
                index: child.index,
                label: child.label.clone(),
                value: child.value,
                seed: child.config.seed,
                status,
                final_accuracy,
            }
        })
        .collect();
    let mut w = csv::Writer::from_path(args.out.join("sweep_summary.csv"))?;
    for r in &results {
        w.serialize(r)?;
    }
    w.flush()?;
    let failed: Vec<&SweepRow> = results.iter().filter(|r| r.status != "ok").collect();
    for r in &results {
        match r.final_accuracy {
            Some(acc) => println!("{:<28} ok      accuracy {acc:.4}", r.label),
            None => println!("{:<28} FAILED  {}", r.label, r.status),
        }
    }
    if !failed.is_empty() {
        eprintln!("{} of {} sweep points failed", failed.len(), results.len());
    }
    Ok(failed.is_empty())
}

fn cmd_verify(args: &VerifyArgs) -> bool {
    let opts = VerifyOptions {
        seed: args.seed,
        exactness_rounds: args.rounds,
        quant_samples: args.samples,
        inject_fault: args.inject_fault,
        ..VerifyOptions::default()
    };
    let results = verify::run_all(&opts);
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} properties passed", results.len() - failed, results.len());
    failed == 0
}

fn cmd_compare(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    prepare_dir(&args.out, args.force)?;
    let (secure, float) = rayon::join(
        || sim::run_scheme(&cfg, Scheme::Basecagg),
        || sim::run_scheme(&cfg, Scheme::FedbuffFloat),
    );
    let (secure, float) = (secure?, float?);
    write_outputs(&args.out, &cfg, Scheme::Basecagg, &secure, Scheme::Basecagg.name())?;
    write_outputs(&args.out, &cfg, Scheme::FedbuffFloat, &float, Scheme::FedbuffFloat.name())?;
    let a = secure.final_accuracy().unwrap_or(f64::NAN);
    let b = float.final_accuracy().unwrap_or(f64::NAN);
    println!("basecagg       final accuracy {a:.4}");
    println!("fedbuff-float  final accuracy {b:.4}");
    println!("difference     {:+.2} points", 100.0 * (a - b));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|()| true),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => Ok(cmd_verify(a)),
        Command::Compare(a) => cmd_compare(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
