//! The `report` subcommand: comparison table, wins tally, and curves.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::commands::{summarize, RunRecord, SummaryRow};
use crate::HarnessError;

/// Best variant of one algorithm in one setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub variant: String,
    pub mean: f64,
    pub std: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub settings: Vec<String>,
    pub algorithms: Vec<String>,
    /// `cells[setting][algorithm]`; `None` when that pair was not run.
    pub cells: Vec<Vec<Option<Cell>>>,
    /// Rows won per algorithm, in `algorithms` order. Ties credit every tied
    /// algorithm.
    pub wins: Vec<usize>,
    pub text: String,
    pub table_path: PathBuf,
    pub csv_path: PathBuf,
    pub curve_paths: Vec<PathBuf>,
}

#[derive(Serialize)]
struct TableRow<'a> {
    setting: &'a str,
    algorithm: &'a str,
    variant: &'a str,
    mean_accuracy: f64,
    std_accuracy: Option<f64>,
    best: bool,
}

#[derive(Serialize)]
struct CurveRow {
    round: usize,
    test_accuracy: f64,
    mean_train_loss: Option<f64>,
    bytes: u64,
    diverged: bool,
}

pub fn read_results(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)
            .map_err(|e| HarnessError::Report(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-.=".contains(c) { c } else { '_' })
        .collect()
}

fn percent(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// `(settings, algorithms, cells[setting][algorithm], wins)`
pub type Pivot = (Vec<String>, Vec<String>, Vec<Vec<Option<Cell>>>, Vec<usize>);

/// Builds the pivot (settings × algorithms) from summary rows. For an
/// algorithm with several variants the best-scoring one fills the cell.
pub fn pivot(summary: &[SummaryRow]) -> Pivot {
    let settings = first_seen(summary.iter().map(|r| r.setting.clone()));
    let algorithms = first_seen(summary.iter().map(|r| r.algorithm.clone()));
    let mut cells = vec![vec![None::<Cell>; algorithms.len()]; settings.len()];
    for r in summary {
        let s = settings.iter().position(|x| *x == r.setting).unwrap();
        let a = algorithms.iter().position(|x| *x == r.algorithm).unwrap();
        let better = cells[s][a].as_ref().is_none_or(|c| r.mean_accuracy > c.mean);
        if better {
            cells[s][a] = Some(Cell {
                variant: r.variant.clone(),
                mean: r.mean_accuracy,
                std: r.std_accuracy,
                best: false,
            });
        }
    }
    let mut wins = vec![0; algorithms.len()];
    for row in &mut cells {
        let top = row
            .iter()
            .flatten()
            .map(|c| c.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for (a, cell) in row.iter_mut().enumerate() {
            if let Some(c) = cell {
                if c.mean == top {
                    c.best = true;
                    wins[a] += 1;
                }
            }
        }
    }
    (settings, algorithms, cells, wins)
}

fn render(settings: &[String], algorithms: &[String], cells: &[Vec<Option<Cell>>], wins: &[usize]) -> String {
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["setting".to_string()];
    header.extend(algorithms.iter().cloned());
    rows.push(header);
    for (s, row) in settings.iter().zip(cells) {
        let mut line = vec![s.clone()];
        for cell in row {
            line.push(match cell {
                None => "-".into(),
                Some(c) => {
                    let mut t = percent(c.mean);
                    if let Some(sd) = c.std {
                        t.push('±');
                        t.push_str(&percent(sd));
                    }
                    if !c.variant.is_empty() {
                        let _ = write!(t, " ({})", c.variant);
                    }
                    if c.best {
                        t.push_str(" *");
                    }
                    t
                }
            });
        }
        rows.push(line);
    }
    let mut tally = vec!["wins".to_string()];
    tally.extend(wins.iter().map(usize::to_string));
    rows.push(tally);

    let n_cols = rows[0].len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cols: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cols.join("  ").trim_end());
        out.push('\n');
        if i == 0 || i == rows.len() - 2 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (n_cols - 1)));
            out.push('\n');
        }
    }
    out.push_str("* best in row\n");
    out
}

/// Reads `results.jsonl` in `results_dir` and writes `report.txt`,
/// `report.csv`, and one `curves/*.csv` per run.
pub fn cmd_report(results_dir: &Path) -> Result<ReportOutput, HarnessError> {
    let records = read_results(&results_dir.join("results.jsonl"))?;
    if records.is_empty() {
        return Err(HarnessError::Report(format!(
            "no records in {}",
            results_dir.join("results.jsonl").display()
        )));
    }
    let summary = summarize(&records);
    let (settings, algorithms, cells, wins) = pivot(&summary);
    let text = render(&settings, &algorithms, &cells, &wins);
    let table_path = results_dir.join("report.txt");
    fs::write(&table_path, &text)?;

    let csv_path = results_dir.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (s, row) in settings.iter().zip(&cells) {
        for (a, cell) in algorithms.iter().zip(row) {
            if let Some(c) = cell {
                w.serialize(TableRow {
                    setting: s,
                    algorithm: a,
                    variant: &c.variant,
                    mean_accuracy: c.mean,
                    std_accuracy: c.std,
                    best: c.best,
                })?;
            }
        }
    }
    w.flush()?;

    let curve_dir = results_dir.join("curves");
    fs::create_dir_all(&curve_dir)?;
    type RunKey = (usize, String, String, String);
    let mut runs: Vec<(RunKey, Vec<&RunRecord>)> = Vec::new();
    for r in &records {
        let key = (r.trial, r.algorithm.clone(), r.variant.clone(), r.setting.clone());
        match runs.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => runs.push((key, vec![r])),
        }
    }
    let mut curve_paths = Vec::new();
    for (i, ((trial, alg, variant, setting), mut recs)) in runs.into_iter().enumerate() {
        recs.sort_by_key(|r| r.round);
        let mut name = format!("{i:03}_{alg}");
        if !variant.is_empty() {
            name.push('_');
            name.push_str(&variant);
        }
        let name = file_safe(&format!("{name}_{setting}_t{trial}.csv"));
        let path = curve_dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        for r in recs {
            w.serialize(CurveRow {
                round: r.round,
                test_accuracy: r.test_accuracy,
                mean_train_loss: r.mean_train_loss,
                bytes: r.bytes,
                diverged: r.diverged,
            })?;
        }
        w.flush()?;
        curve_paths.push(path);
    }

    Ok(ReportOutput {
        settings,
        algorithms,
        cells,
        wins,
        text,
        table_path,
        csv_path,
        curve_paths,
    })
}
