use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedsim_harness::{cmd_gradcheck, cmd_partition, cmd_report, cmd_run, load_config, ExperimentConfig, GradcheckOptions};

#[derive(Parser)]
#[command(name = "fedsim", version, about = "Federated learning simulation on non-IID partitions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured partitions and write index and class-count files.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every configured experiment and write results.jsonl and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for party training (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render the comparison table and per-run curves from a results directory.
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Take the results directory from this config's out_dir.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare backprop gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negate one layer's weight gradient to confirm the check can fail.
        #[arg(long, hide = true)]
        sabotage_layer: Option<usize>,
    },
}

fn configured(path: &PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Partition { config, out, seed } => {
            let cfg = configured(&config, out, seed)?;
            let result = cmd_partition(&cfg, &cfg.out_dir)?;
            for (label, pf, sf, summary) in &result.files {
                println!("{label}: {summary}");
                println!("  wrote {} and {}", pf.display(), sf.display());
            }
        }
        Command::Run {
            config,
            out,
            seed,
            threads,
        } => {
            let cfg = configured(&config, out, seed)?;
            let result = cmd_run(&cfg, threads)?;
            for row in &result.summary {
                let std = row.std_accuracy.map_or(String::new(), |s| format!(" ± {s:.4}"));
                let variant = if row.variant.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", row.variant)
                };
                println!(
                    "{:<24} {}{}: {:.4}{std}{}",
                    row.setting,
                    row.algorithm,
                    variant,
                    row.mean_accuracy,
                    if row.diverged_runs > 0 { " [diverged]" } else { "" }
                );
            }
            println!(
                "wrote {} and {}",
                result.results_path.display(),
                result.summary_path.display()
            );
        }
        Command::Report { out, config } => {
            let dir = match (out, config) {
                (Some(d), _) => d,
                (None, Some(c)) => configured(&c, None, None)?.out_dir,
                (None, None) => anyhow::bail!("report needs --out <dir> or --config <path>"),
            };
            let report = cmd_report(&dir)?;
            print!("{}", report.text);
        }
        Command::Gradcheck { seed, sabotage_layer } => {
            let report = cmd_gradcheck(&GradcheckOptions {
                seed,
                sabotage_layer,
                ..GradcheckOptions::default()
            })?;
            println!(
                "gradcheck: {} nets, max relative error {:e} (worst {:?})",
                report.nets, report.max_rel_error, report.worst_arch
            );
            if !report.passed {
                println!("FAIL: above {:e}", fedsim_harness::gradcheck::THRESHOLD);
                return Ok(ExitCode::from(1));
            }
            println!("PASS");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
