use std::fs;
use std::path::Path;
use std::process::Command;

use fedsim_core::partition::read_partition;
use fedsim_harness::commands::{summarize, RunRecord};
use fedsim_harness::report::read_results;
use fedsim_harness::{
    cmd_gradcheck, cmd_partition, cmd_report, cmd_run, parse_config, GradcheckOptions, HarnessError, SummaryRow,
};

fn small_fcube(out: &Path, extra: &str) -> fedsim_harness::ExperimentConfig {
    let text = format!(
        r#"{{"dataset": {{"kind": "fcube", "n_train": 400, "n_test": 200}},
            "hidden": [8], "run": {{"rounds": 3, "local_epochs": 1, "batch_size": 32}},
            "out_dir": {:?} {extra}}}"#,
        out.to_str().unwrap()
    );
    parse_config(&text).unwrap()
}

#[test]
fn fcube_octant_partition_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fcube(dir.path(), "");
    let out = cmd_partition(&cfg, dir.path()).unwrap();
    let (_, pf, sf, _) = &out.files[0];
    let map = read_partition(pf).unwrap();
    assert_eq!(map.n_parties(), 4);

    // party j holds exactly octants j and 7 - j
    let (train, _) = cfg.dataset.load(cfg.seed).unwrap();
    let octants = train.group_ids().unwrap();
    for p in 0..4 {
        assert!(map.party(p).iter().all(|&i| octants[i] == p || octants[i] == 7 - p));
    }

    // stats column sums equal class totals
    let mut rdr = csv::Reader::from_path(sf).unwrap();
    let mut sums = [0usize; 2];
    for row in rdr.records() {
        let row = row.unwrap();
        for c in 0..2 {
            sums[c] += row[c + 1].parse::<usize>().unwrap();
        }
    }
    assert_eq!(sums.to_vec(), train.class_counts());

    let first = (fs::read(pf).unwrap(), fs::read(sf).unwrap());
    cmd_partition(&cfg, dir.path()).unwrap();
    assert_eq!(first, (fs::read(pf).unwrap(), fs::read(sf).unwrap()));
}

fn masked(path: &Path) -> Vec<RunRecord> {
    let mut recs = read_results(path).unwrap();
    recs.iter_mut().for_each(|r| r.wall_ms = 0.0);
    recs
}

#[test]
fn run_writes_one_line_per_round_and_a_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fcube(
        dir.path(),
        r#", "trials": 3, "algorithms": ["fedavg", "fedprox"], "sweep": {"mu": [0],
            "partitions": [{"strategy": "iid"}, {"strategy": "octant_pairs"}]}"#,
    );
    let out = cmd_run(&cfg, Some(2)).unwrap();
    let text = fs::read_to_string(&out.results_path).unwrap();
    // trials x settings x variants x (T + 1)
    assert_eq!(text.lines().count(), 3 * 2 * 2 * (3 + 1));
    for r in &out.records {
        assert!((0.0..=1.0).contains(&r.test_accuracy));
        assert_eq!(r.bytes > 0, r.round > 0);
    }

    // FedProx with mu = 0 reproduces FedAvg exactly
    let acc = |alg: &str| -> Vec<f64> {
        out.records.iter().filter(|r| r.algorithm == alg).map(|r| r.test_accuracy).collect()
    };
    assert_eq!(acc("fedavg"), acc("fedprox"));

    // summary recomputed straight from the JSONL matches the CSV exactly
    let records = read_results(&out.results_path).unwrap();
    let mut rdr = csv::Reader::from_path(&out.summary_path).unwrap();
    let rows: Vec<SummaryRow> = rdr.deserialize().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for row in &rows {
        let finals: Vec<f64> = (0..3)
            .map(|t| {
                records
                    .iter()
                    .filter(|r| {
                        r.trial == t && r.algorithm == row.algorithm && r.variant == row.variant && r.setting == row.setting
                    })
                    .max_by_key(|r| r.round)
                    .unwrap()
                    .test_accuracy
            })
            .collect();
        let mean = (finals[0] + finals[1] + finals[2]) / 3.0;
        let var = finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 2.0;
        assert_eq!(row.trials, 3);
        assert_eq!(row.mean_accuracy, mean);
        assert_eq!(row.std_accuracy, Some(var.sqrt()));
    }
    assert_eq!(rows, summarize(&records));
}

#[test]
fn rerun_and_thread_count_leave_results_unchanged() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = r#", "algorithms": ["fedavg", "scaffold", "fednova"], "partition": {"strategy": "quantity_dirichlet", "beta": 0.5}"#;
    let ca = small_fcube(a.path(), extra);
    let cb = small_fcube(b.path(), extra);
    let ra = cmd_run(&ca, Some(1)).unwrap();
    let rb = cmd_run(&cb, Some(4)).unwrap();
    assert_eq!(masked(&ra.results_path), masked(&rb.results_path));
    assert_eq!(fs::read(&ra.summary_path).unwrap(), fs::read(&rb.summary_path).unwrap());
}

#[test]
fn diverging_runs_still_succeed_and_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_fcube(dir.path(), "");
    cfg.run.local_lr = 1e150;
    let out = cmd_run(&cfg, None).unwrap();
    assert!(out.records.iter().any(|r| r.diverged));
    assert_eq!(out.summary[0].diverged_runs, 1);
}

fn record(trial: usize, round: usize, alg: &str, variant: &str, setting: &str, acc: f64) -> RunRecord {
    RunRecord {
        trial,
        round,
        algorithm: alg.into(),
        variant: variant.into(),
        setting: setting.into(),
        test_accuracy: acc,
        mean_train_loss: Some(0.5),
        bytes: if round == 0 { 0 } else { 100 },
        wall_ms: 1.0,
        diverged: false,
    }
}

fn write_results(dir: &Path, records: &[RunRecord]) {
    let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
    fs::write(dir.join("results.jsonl"), lines.join("\n") + "\n").unwrap();
}

#[test]
fn report_tallies_known_winners() {
    let dir = tempfile::tempdir().unwrap();
    // final accuracies per setting: fedavg / fedprox (best mu) / scaffold
    //   s1: 0.90 / 0.95 / 0.80  -> fedprox
    //   s2: 0.70 / 0.60 / 0.75  -> scaffold
    //   s3: 0.50 / 0.50 / 0.40  -> fedavg and fedprox tie
    let table = [
        ("s1", [0.90, 0.95, 0.80]),
        ("s2", [0.70, 0.60, 0.75]),
        ("s3", [0.50, 0.50, 0.40]),
    ];
    let mut recs = Vec::new();
    for (s, accs) in table {
        for round in 0..=2 {
            let scale = round as f64 / 2.0;
            recs.push(record(0, round, "fedavg", "", s, accs[0] * scale));
            recs.push(record(0, round, "fedprox", "mu=0.1", s, accs[1] * scale));
            recs.push(record(0, round, "fedprox", "mu=1", s, 0.1 * scale));
            recs.push(record(0, round, "scaffold", "", s, accs[2] * scale));
        }
    }
    write_results(dir.path(), &recs);
    let rep = cmd_report(dir.path()).unwrap();
    assert_eq!(rep.algorithms, ["fedavg", "fedprox", "scaffold"]);
    assert_eq!(rep.wins, [1, 2, 1]);
    assert_eq!(rep.cells[0][1].as_ref().unwrap().variant, "mu=0.1");
    assert!(rep.text.contains("wins"));
    let csv_text = fs::read_to_string(&rep.csv_path).unwrap();
    assert_eq!(csv_text.lines().count(), 1 + 9);
    // one curve per (trial, algorithm, variant, setting), T + 1 rows each
    assert_eq!(rep.curve_paths.len(), 12);
    for p in &rep.curve_paths {
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1 + 3);
    }
}

#[test]
fn single_algorithm_wins_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_fcube(
        dir.path(),
        r#", "sweep": {"partitions": [{"strategy": "iid"}, {"strategy": "octant_pairs"}]}"#,
    );
    cmd_run(&cfg, None).unwrap();
    let rep = cmd_report(dir.path()).unwrap();
    assert_eq!(rep.wins, [2]);
    for p in &rep.curve_paths {
        assert_eq!(fs::read_to_string(p).unwrap().lines().count(), 1 + cfg.run.rounds + 1);
    }
}

#[test]
fn empty_results_are_a_report_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("results.jsonl"), "").unwrap();
    assert!(matches!(cmd_report(dir.path()), Err(HarnessError::Report(_))));
    assert!(cmd_report(&dir.path().join("missing")).is_err());
}

#[test]
fn gradcheck_passes_and_detects_sabotage() {
    let ok = cmd_gradcheck(&GradcheckOptions::default()).unwrap();
    assert!(ok.passed && ok.max_rel_error < 1e-4, "{ok:?}");
    assert_eq!(cmd_gradcheck(&GradcheckOptions::default()).unwrap(), ok);
    let bad = cmd_gradcheck(&GradcheckOptions {
        sabotage_layer: Some(0),
        ..GradcheckOptions::default()
    })
    .unwrap();
    assert!(!bad.passed, "{bad:?}");
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_fedsim");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let ok = status(&["gradcheck"]);
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));
    assert_eq!(status(&["gradcheck", "--sabotage-layer", "0"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("c.json");
    fs::write(
        &cfg_path,
        r#"{"dataset": {"kind": "blobs"}, "partition": {"strategy": "label_dirichlet", "beta": -1}}"#,
    )
    .unwrap();
    let bad = status(&["run", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("partition.beta"));

    let out_dir = dir.path().join("out");
    fs::write(
        &cfg_path,
        r#"{"dataset": {"kind": "fcube", "n_train": 200, "n_test": 100}, "hidden": [8],
            "run": {"rounds": 3, "local_epochs": 1, "batch_size": 32, "local_lr": 1e150}}"#,
    )
    .unwrap();
    let run = status(&[
        "run",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("[diverged]"));
    let report = status(&["report", "--out", out_dir.to_str().unwrap()]);
    assert!(report.status.success());
}
