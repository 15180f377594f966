//! The `partition` and `run` subcommands.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedsim_core::engine::run_experiment;
use fedsim_core::partition::{self, ImbalanceSummary};
use fedsim_core::FedRunConfig;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::HarnessError;

/// Seed of trial `t`: trials differ in initialization, partition, and
/// minibatch order, never in the dataset itself.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone)]
pub struct PartitionOutput {
    /// `(setting label, partition file, stats file, summary)` per partition.
    pub files: Vec<(String, PathBuf, PathBuf, ImbalanceSummary)>,
}

/// Materializes every configured partition of the training set and writes
/// `partition.txt` / `stats.csv` (numbered when several are configured).
pub fn cmd_partition(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PartitionOutput, HarnessError> {
    create_dir(out_dir)?;
    let (train, _) = cfg.dataset.load(cfg.seed)?;
    let several = cfg.partitions.len() > 1;
    let mut files = Vec::new();
    for (i, spec) in cfg.partitions.iter().enumerate() {
        let map = partition::build_partition(&train, &spec.kind, cfg.run.parties, trial_seed(cfg.seed, 0))?;
        let stats = partition::partition_stats(&map, &train)?;
        let (pf, sf) = if several {
            (out_dir.join(format!("partition_{i}.txt")), out_dir.join(format!("stats_{i}.csv")))
        } else {
            (out_dir.join("partition.txt"), out_dir.join("stats.csv"))
        };
        partition::write_partition(&map, &pf)?;
        partition::write_stats_csv(&stats, &sf)?;
        files.push((spec.to_string(), pf, sf, stats.summary));
    }
    Ok(PartitionOutput { files })
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub trial: usize,
    pub round: usize,
    pub algorithm: String,
    /// Tuning knobs of the algorithm, e.g. `mu=0.01`; empty when none.
    pub variant: String,
    pub setting: String,
    pub test_accuracy: f64,
    pub mean_train_loss: Option<f64>,
    pub bytes: u64,
    pub wall_ms: f64,
    pub diverged: bool,
}

/// One line of `summary.csv`: final-round accuracy over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub variant: String,
    pub setting: String,
    pub trials: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; empty with a single trial.
    pub std_accuracy: Option<f64>,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Runs every (trial, setting, variant) combination, streaming records to
/// `results.jsonl` and writing `summary.csv` and the resolved `config.json`.
/// `threads` sizes a dedicated pool for party training; `None` uses the
/// global pool.
pub fn cmd_run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput, HarnessError> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| HarnessError::Io(format!("thread pool: {e}")))?;
            pool.install(|| run_all(cfg))
        }
        None => run_all(cfg),
    }
}

fn run_all(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let dir = &cfg.out_dir;
    create_dir(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;

    let (train, test) = cfg.dataset.load(cfg.seed)?;
    let arch = cfg.arch(train.n_features(), train.n_classes())?;
    let variants = cfg.variants();
    let settings = cfg.settings();

    let results_path = dir.join("results.jsonl");
    let mut out = BufWriter::new(File::create(&results_path)?);
    let mut records = Vec::new();
    for trial in 0..cfg.trials {
        for setting in &settings {
            for variant in &variants {
                let run_cfg = FedRunConfig {
                    algorithm: variant.algorithm,
                    local_epochs: setting.local_epochs,
                    master_seed: trial_seed(cfg.seed, trial),
                    ..cfg.run
                };
                let result = run_experiment(&train, &test, &setting.partition, &arch, &run_cfg)?;
                for r in result.records {
                    let rec = RunRecord {
                        trial,
                        round: r.round,
                        algorithm: variant.algorithm.name().to_string(),
                        variant: variant.label.clone(),
                        setting: setting.label.clone(),
                        test_accuracy: r.test_accuracy,
                        mean_train_loss: r.mean_train_loss,
                        bytes: r.bytes,
                        wall_ms: r.wall_ms,
                        diverged: r.diverged,
                    };
                    serde_json::to_writer(&mut out, &rec)?;
                    out.write_all(b"\n")?;
                    records.push(rec);
                }
            }
        }
    }
    out.flush()?;

    let summary = summarize(&records);
    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(RunOutput {
        records,
        summary,
        results_path,
        summary_path,
    })
}

/// Final-round accuracy per (algorithm, variant, setting), in order of first
/// appearance. A run's final record is its highest round.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    // (algorithm, variant, setting) -> per-trial (trial, round, accuracy, diverged)
    type Finals = Vec<(usize, usize, f64, bool)>;
    let mut groups: Vec<((String, String, String), Finals)> = Vec::new();
    for r in records {
        let key = (r.algorithm.clone(), r.variant.clone(), r.setting.clone());
        let idx = match groups.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                groups.push((key, Vec::new()));
                groups.len() - 1
            }
        };
        let finals = &mut groups[idx].1;
        match finals.iter_mut().find(|f| f.0 == r.trial) {
            Some(f) if r.round >= f.1 => *f = (r.trial, r.round, r.test_accuracy, f.3 || r.diverged),
            Some(f) => f.3 |= r.diverged,
            None => finals.push((r.trial, r.round, r.test_accuracy, r.diverged)),
        }
    }
    groups
        .into_iter()
        .map(|((algorithm, variant, setting), finals)| {
            let accs: Vec<f64> = finals.iter().map(|f| f.2).collect();
            let (mean, std) = mean_and_sample_std(&accs);
            SummaryRow {
                algorithm,
                variant,
                setting,
                trials: accs.len(),
                mean_accuracy: mean,
                std_accuracy: std,
                diverged_runs: finals.iter().filter(|f| f.3).count(),
            }
        })
        .collect()
}

/// Mean and sample standard deviation (`None` for fewer than two values).
pub fn mean_and_sample_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, Some((ss / (n - 1.0)).sqrt()))
}
