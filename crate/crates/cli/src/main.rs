use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use ebus_core::experiment::{self, apply_overrides, ExperimentConfig, ExperimentError};
use ebus_core::numeric::gradcheck::TOLERANCE;
use ebus_core::train::{codes_csv, metrics_csv, noise_metrics_csv};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Synth,
    Train,
    Eval,
    NoiseEval,
    ExportCodes,
    Gradcheck,
}

/// Ultrasound clip classification experiments.
///
/// Any config key can be overridden with `--key=value`.
#[derive(Debug, Parser)]
#[command(name = "ebus", version)]
struct Cli {
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded execution for byte-identical outputs.
    #[arg(long)]
    deterministic: bool,
}

const RESERVED: [&str; 3] = ["config", "seed", "deterministic"];

/// Pulls `--key=value` overrides out of the raw arguments, leaving the rest
/// for clap.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if !RESERVED.contains(&k) => overrides.push((k.replace('-', "_"), v.to_string())),
            _ => rest.push(a),
        }
    }
    (rest, overrides)
}

fn load_config(cli: &Cli, overrides: &[(String, String)]) -> Result<ExperimentConfig, ExperimentError> {
    let base = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = apply_overrides(&base, overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    match cli.command {
        Command::Synth => {
            let n = experiment::run_synth(cfg)?;
            println!("wrote {n} cases to {}", cfg.data_dir.display());
        }
        Command::Train => {
            let out = experiment::run_train(cfg)?;
            if let Some(last) = out.stats.last() {
                println!("final epoch {}: total loss {:.4}", last.epoch, last.total_loss);
            }
            println!("checkpoint {}", cfg.checkpoint_path().display());
        }
        Command::Eval => {
            let out = experiment::run_eval(cfg)?;
            print!("{}", metrics_csv(&[(cfg.model.clone(), out.metrics)]));
        }
        Command::NoiseEval => {
            let out = experiment::run_noise_eval(cfg)?;
            print!("{}", noise_metrics_csv(&[(cfg.model.clone(), out.clean, out.noisy)]));
        }
        Command::ExportCodes => {
            let dist = experiment::run_export_codes(cfg)?;
            print!("{}", codes_csv(&dist));
        }
        Command::Gradcheck => {
            let checks = experiment::run_gradcheck(cfg)?;
            let mut failed = Vec::new();
            for c in &checks {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                println!("{:<22} cases={:<3} max_rel_error={:.3e} {verdict}", c.op, c.cases, c.max_rel_error);
                if !c.passed() {
                    failed.push(c.op);
                }
            }
            if !failed.is_empty() {
                bail!("gradient check above {TOLERANCE:e} for: {}", failed.join(", "));
            }
        }
    }
    Ok(())
}

fn fail(kind: &str, err: &anyhow::Error) -> ExitCode {
    let message = format!("{err:#}").replace('"', "'");
    eprintln!("error kind={kind} message=\"{message}\"");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let cfg = match load_config(&cli, &overrides) {
        Ok(c) => c,
        Err(e) => return fail(e.kind(), &e.into()),
    };
    if cfg.deterministic {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .context("configuring single-threaded pool")
        {
            return fail("runtime", &e);
        }
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<ExperimentError>().map_or("check", |x| x.kind());
            fail(kind, &e)
        }
    }
}
