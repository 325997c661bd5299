use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use did_core::harness::{self, DetectorKind, ExperimentConfig, RunOptions};
use did_core::Result;

#[derive(Parser)]
#[command(
    name = "did",
    version,
    about = "Difference-in-differences detection of generated samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a labelled dataset and write samples.csv.
    Generate(Common),
    /// Train and evaluate the detectors on one configuration.
    Run(WithData),
    /// Evaluate over the signal, noise and seed grid.
    Sweep(Common),
    /// Write residual rasters of test samples as NetPBM files.
    Render(WithData),
    /// Fit a percentile threshold on real samples and report held-out rates.
    Calibrate(WithData),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Restrict output to one detector.
    #[arg(long, value_parser = parse_detector)]
    detector: Option<DetectorKind>,
}

#[derive(Args)]
struct WithData {
    #[command(flatten)]
    common: Common,
    /// Use this samples.csv instead of generating data.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn parse_detector(s: &str) -> std::result::Result<DetectorKind, String> {
    s.parse().map_err(|e: did_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self, data: Option<PathBuf>) -> Result<(ExperimentConfig, RunOptions)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        let opts = RunOptions {
            threads: self.threads,
            data,
            detector: self.detector,
        };
        Ok((cfg, opts))
    }
}

fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, _) = c.resolve(None)?;
            harness::cmd_generate(&cfg)
        }
        Command::Run(w) => {
            let (cfg, opts) = w.common.resolve(w.data)?;
            let (outcome, files) = harness::cmd_run(&cfg, &opts)?;
            for (kind, r) in &outcome.reports {
                if opts.detector.is_none_or(|d| d == *kind) {
                    println!(
                        "{:<7} acc={:.4} auroc={:.4} fpr@tpr95={:.4}",
                        kind.as_str(),
                        r.accuracy,
                        r.auroc,
                        r.fpr_at_tpr95
                    );
                }
            }
            Ok(files)
        }
        Command::Sweep(c) => {
            let (cfg, opts) = c.resolve(None)?;
            let (result, files) = harness::cmd_sweep(&cfg, &opts)?;
            for r in &result.summary {
                println!(
                    "s={:<6} tau={:<6} {:<7} acc={:.4} auroc={:.4} ok={}",
                    r.s,
                    r.tau,
                    r.detector.as_str(),
                    r.mean_acc,
                    r.mean_auroc,
                    r.ok
                );
            }
            Ok(files)
        }
        Command::Render(w) => {
            let (cfg, opts) = w.common.resolve(w.data)?;
            harness::cmd_render(&cfg, &opts)
        }
        Command::Calibrate(w) => {
            let (cfg, opts) = w.common.resolve(w.data)?;
            let (cal, files) = harness::cmd_calibrate(&cfg, &opts)?;
            println!(
                "{} threshold={:.6} heldout_fpr={:.4} heldout_tpr={:.4}",
                cal.detector.as_str(),
                cal.threshold,
                cal.heldout_fpr,
                cal.heldout_tpr
            );
            Ok(files)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(files) => {
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} msg={:?}", e.kind(), e.to_string());
            ExitCode::FAILURE
        }
    }
}
