//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedsim_core::data::{self, FcubeSpec};
use fedsim_core::engine::{self, run_experiment, run_round, ClientState, GlobalState};
use fedsim_core::nn::{self, init_mlp};
use fedsim_core::partition::{self, partition_stats};
use fedsim_core::{
    Algorithm, Batch, ControlUpdate, FedRunConfig, LabeledDataset, Matrix, MlpArch, ParamVector, PartitionKind,
    PartitionSpec,
};
use fedsim_harness::commands::RunRecord;
use fedsim_harness::report::read_results;
use fedsim_harness::{cmd_gradcheck, cmd_run, parse_config, ExperimentConfig, GradcheckOptions, SummaryRow};

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let ok = out.ok && took <= limit;
    println!(
        "[{}] {id}. {name}: {} ({:.2} s, limit {} s)",
        if ok { "PASS" } else { "FAIL" },
        out.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    ok
}

fn bits(p: &ParamVector) -> Vec<u64> {
    p.values().iter().map(|v| v.to_bits()).collect()
}

fn gradient_oracle() -> Outcome {
    let r = cmd_gradcheck(&GradcheckOptions::default()).unwrap();
    Outcome {
        ok: r.passed && r.nets == 100 && r.max_rel_error < 1e-4,
        detail: format!("max relative error {:.3e} over {} nets", r.max_rel_error, r.nets),
    }
}

fn fcube_default() -> data::Fcube {
    data::fcube_generate(&FcubeSpec::default()).unwrap()
}

fn fcube_arch() -> MlpArch {
    MlpArch::with_hidden(3, &[32, 16, 8], 2).unwrap()
}

fn fed_cfg(algorithm: Algorithm, parties: usize, rounds: usize, epochs: usize) -> FedRunConfig {
    FedRunConfig {
        algorithm,
        parties,
        rounds,
        local_epochs: epochs,
        master_seed: 11,
        ..FedRunConfig::default()
    }
}

/// Momentum SGD over the pooled data, velocity reset each round, visiting
/// samples in the engine's epoch order.
fn centralized(arch: &MlpArch, ds: &LabeledDataset, w0: &ParamVector, c: &FedRunConfig) -> ParamVector {
    let mut w = w0.clone();
    for round in 0..c.rounds {
        let mut v = w.zeros_like();
        for epoch in 0..c.local_epochs {
            for chunk in engine::epoch_order(c.master_seed, round, 0, epoch, ds.len()).chunks(c.batch_size) {
                let sub = ds.subset(chunk);
                let batch = Batch::new(sub.features().clone(), sub.labels().to_vec()).unwrap();
                let (_, g) = nn::backward(&w, arch, &batch, 0.0, None).unwrap();
                (w, v) = nn::sgd_momentum_step(&w, &g, &v, c.local_lr, c.momentum).unwrap();
            }
        }
    }
    w
}

fn algorithm_identities() -> Outcome {
    let f = fcube_default();
    let arch = fcube_arch();
    let mut failures = Vec::new();

    let octants = PartitionSpec::new(PartitionKind::OctantPairs);
    let avg = run_experiment(&f.train, &f.test, &octants, &arch, &fed_cfg(Algorithm::FedAvg, 4, 10, 10)).unwrap();
    let prox = run_experiment(
        &f.train,
        &f.test,
        &octants,
        &arch,
        &fed_cfg(Algorithm::FedProx { mu: 0.0 }, 4, 10, 10),
    )
    .unwrap();
    if bits(&avg.final_state.params) != bits(&prox.final_state.params) {
        failures.push("fedprox(0) != fedavg");
    }

    // IID over 4000 samples and 4 parties: every party takes the same number of steps
    let iid = PartitionSpec::new(PartitionKind::Iid);
    let a = run_experiment(&f.train, &f.test, &iid, &arch, &fed_cfg(Algorithm::FedAvg, 4, 5, 2)).unwrap();
    let b = run_experiment(&f.train, &f.test, &iid, &arch, &fed_cfg(Algorithm::FedNova, 4, 5, 2)).unwrap();
    if bits(&a.final_state.params) != bits(&b.final_state.params) {
        failures.push("fednova != fedavg at equal tau");
    }

    let views = partition::materialize(&f.train, &octants, 4, 3).unwrap().1;
    let w0 = init_mlp(&arch, 5);
    let c_avg = fed_cfg(Algorithm::FedAvg, 4, 3, 2);
    let c_sc = fed_cfg(
        Algorithm::Scaffold {
            c_update: ControlUpdate::Frozen,
        },
        4,
        3,
        2,
    );
    let (mut s_avg, mut s_sc) = (
        GlobalState::new(w0.clone(), &c_avg.algorithm),
        GlobalState::new(w0.clone(), &c_sc.algorithm),
    );
    let mut cl_avg: Vec<ClientState> = (0..4).map(|p| ClientState::new(p, &w0, &c_avg.algorithm)).collect();
    let mut cl_sc: Vec<ClientState> = (0..4).map(|p| ClientState::new(p, &w0, &c_sc.algorithm)).collect();
    let mut same = true;
    for _ in 0..3 {
        let x = run_round(&arch, &s_avg, &mut cl_avg, &views, &c_avg).unwrap();
        let y = run_round(&arch, &s_sc, &mut cl_sc, &views, &c_sc).unwrap();
        same &= x
            .updates
            .iter()
            .zip(&y.updates)
            .all(|(u, v)| bits(&u.local_params) == bits(&v.local_params));
        same &= bits(&x.state.params) == bits(&y.state.params);
        s_avg = x.state;
        s_sc = y.state;
    }
    if !same {
        failures.push("frozen scaffold != fedavg");
    }

    let single = partition::materialize(&f.train, &iid, 1, 3).unwrap().1;
    let c1 = fed_cfg(Algorithm::FedAvg, 1, 3, 2);
    let central = centralized(&arch, &single[0].data, &w0, &c1);
    let mut state = GlobalState::new(w0.clone(), &c1.algorithm);
    let mut clients = vec![ClientState::new(0, &w0, &c1.algorithm)];
    for _ in 0..c1.rounds {
        state = run_round(&arch, &state, &mut clients, &single, &c1).unwrap().state;
    }
    if bits(&state.params) != bits(&central) {
        failures.push("N=1 != centralized");
    }

    Outcome {
        ok: failures.is_empty(),
        detail: if failures.is_empty() {
            "fedprox(0)=fedavg, fednova=fedavg, frozen scaffold=fedavg, N=1=centralized, all bit-exact".into()
        } else {
            failures.join("; ")
        },
    }
}

fn partition_suite() -> Outcome {
    let n = 1000;
    let ds = LabeledDataset::new(Matrix::zeros(n, 1), (0..n).map(|i| i % 10).collect(), 10)
        .unwrap()
        .with_groups((0..n).map(|i| i % 40).collect())
        .unwrap();
    let kinds = [
        PartitionKind::Iid,
        PartitionKind::LabelQuantity { k: 1 },
        PartitionKind::LabelQuantity { k: 2 },
        PartitionKind::LabelQuantity { k: 3 },
        PartitionKind::LabelDirichlet { beta: 0.1, min_size: 1 },
        PartitionKind::LabelDirichlet { beta: 0.5, min_size: 1 },
        PartitionKind::QuantityDirichlet { beta: 0.5, min_size: 1 },
        PartitionKind::ByGroup,
    ];
    let totals = ds.class_counts();
    let mut violations = 0;
    let mut maps = 0;
    for kind in &kinds {
        for seed in 0..100 {
            let map = partition::build_partition(&ds, kind, 10, seed).unwrap();
            maps += 1;
            let mut seen = vec![0u8; n];
            map.assignments().iter().flatten().for_each(|&i| seen[i] += 1);
            let disjoint_exhaustive = seen.iter().all(|&s| s == 1);
            let nonempty = map.sizes().iter().all(|&s| s > 0);
            let stats = partition_stats(&map, &ds).unwrap();
            let conserved = (0..10).all(|c| stats.class_counts.iter().map(|r| r[c]).sum::<usize>() == totals[c]);
            let support = match kind {
                PartitionKind::LabelQuantity { k } => stats
                    .class_counts
                    .iter()
                    .all(|r| r.iter().filter(|&&c| c > 0).count() == *k),
                _ => true,
            };
            if !(disjoint_exhaustive && nonempty && conserved && support) {
                violations += 1;
            }
        }
    }
    let tv = |beta: f64| -> f64 {
        (0..100)
            .map(|s| {
                let map = partition::partition_label_dirichlet(&ds, 10, beta, 1, s).unwrap();
                partition_stats(&map, &ds).unwrap().summary.mean_label_tv
            })
            .sum::<f64>()
            / 100.0
    };
    let (sharp, flat) = (tv(0.1), tv(5.0));
    Outcome {
        ok: violations == 0 && sharp > flat,
        detail: format!("{maps} partitions, {violations} violations; mean TV beta=0.1 {sharp:.3} > beta=5 {flat:.3}"),
    }
}

fn config_in(dir: &Path, body: &str) -> ExperimentConfig {
    let text = format!(r#"{{"out_dir": {:?}, {body}}}"#, dir.to_str().unwrap());
    parse_config(&text).unwrap()
}

fn final_mean(rows: &[SummaryRow], algorithm: &str, setting: &str) -> f64 {
    rows.iter()
        .find(|r| r.algorithm == algorithm && r.setting == setting)
        .unwrap_or_else(|| panic!("no row for {algorithm} / {setting}"))
        .mean_accuracy
}

fn fcube_reproduction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#""dataset": {"kind": "fcube"}, "algorithms": ["fedavg", "fedprox"],
           "sweep": {"partitions": [{"strategy": "iid"}, {"strategy": "octant_pairs"}]}"#,
    );
    let out = cmd_run(&cfg, None).unwrap();
    let accs: Vec<(String, f64)> = out
        .summary
        .iter()
        .map(|r| (format!("{}/{}", r.algorithm, r.setting), r.mean_accuracy))
        .collect();
    Outcome {
        ok: accs.len() == 4 && accs.iter().all(|(_, a)| *a >= 0.99),
        detail: accs
            .iter()
            .map(|(k, a)| format!("{k} {a:.4}"))
            .collect::<Vec<_>>()
            .join(", "),
    }
}

fn label_vs_quantity_skew() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#""dataset": {"kind": "blobs", "n_classes": 10, "n_per_class": 500, "dim": 20, "spread": 0.2},
           "run": {"rounds": 20, "parties": 10},
           "sweep": {"partitions": [{"strategy": "iid"}, {"strategy": "label_quantity", "k": 1},
                                    {"strategy": "quantity_dirichlet", "beta": 0.5}]}"#,
    );
    let out = cmd_run(&cfg, None).unwrap();
    let iid = final_mean(&out.summary, "fedavg", "iid");
    let c1 = final_mean(&out.summary, "fedavg", "#C=1");
    let q = final_mean(&out.summary, "fedavg", "q~Dir(0.5)");
    Outcome {
        ok: iid - c1 >= 0.30 && iid - q <= 0.05,
        detail: format!(
            "iid {iid:.4}, #C=1 {c1:.4} (gap {:.4} >= 0.30), q~Dir(0.5) {q:.4} (gap {:.4} <= 0.05)",
            iid - c1,
            iid - q
        ),
    }
}

fn communication_accounting() -> Outcome {
    let f = data::fcube_generate(&FcubeSpec {
        n_train: 400,
        n_test: 100,
        seed: 1,
    })
    .unwrap();
    let arch = fcube_arch();
    let spec = PartitionSpec::new(PartitionKind::OctantPairs);
    let avg = run_experiment(&f.train, &f.test, &spec, &arch, &fed_cfg(Algorithm::FedAvg, 4, 3, 1)).unwrap();
    let sc = run_experiment(
        &f.train,
        &f.test,
        &spec,
        &arch,
        &fed_cfg(
            Algorithm::Scaffold {
                c_update: ControlUpdate::Reuse,
            },
            4,
            3,
            1,
        ),
    )
    .unwrap();
    let pairs: Vec<(u64, u64)> = avg.records[1..]
        .iter()
        .zip(&sc.records[1..])
        .map(|(a, s)| (a.bytes, s.bytes))
        .collect();
    Outcome {
        ok: pairs.iter().all(|&(a, s)| a > 0 && s == 2 * a),
        detail: format!("per-round bytes fedavg {} vs scaffold {} (ratio 2)", pairs[0].0, pairs[0].1),
    }
}

fn masked(path: &Path) -> Vec<RunRecord> {
    let mut recs = read_results(path).unwrap();
    recs.iter_mut().for_each(|r| r.wall_ms = 0.0);
    recs
}

fn determinism() -> Outcome {
    let body = r#""dataset": {"kind": "blobs", "n_classes": 5, "n_per_class": 200, "dim": 10},
                  "algorithms": ["fedavg", "fedprox", "scaffold", "fednova"],
                  "partition": {"strategy": "label_dirichlet", "beta": 0.5},
                  "run": {"rounds": 5, "local_epochs": 2}, "trials": 2"#;
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let runs: Vec<Vec<RunRecord>> = [Some(8), Some(8), Some(1)]
        .into_iter()
        .zip(&dirs)
        .map(|(threads, d)| {
            let cfg = config_in(d.path(), body);
            masked(&cmd_run(&cfg, threads).unwrap().results_path)
        })
        .collect();
    Outcome {
        ok: runs[0] == runs[1] && runs[0] == runs[2],
        detail: format!(
            "{} records identical across reruns and 1 vs 8 threads (wall_ms masked)",
            runs[0].len()
        ),
    }
}

fn feature_noise() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(
        dir.path(),
        r#""dataset": {"kind": "blobs", "n_classes": 10, "n_per_class": 500, "dim": 20, "spread": 0.2},
           "run": {"rounds": 20, "parties": 10},
           "sweep": {"partitions": [{"strategy": "iid"}, {"strategy": "iid", "noise_sigma": 0.1}]}"#,
    );
    let out = cmd_run(&cfg, None).unwrap();
    let iid = final_mean(&out.summary, "fedavg", "iid");
    let noisy = final_mean(&out.summary, "fedavg", "iid+x~Gau(0.1)");
    Outcome {
        ok: (iid - noisy).abs() <= 0.03,
        detail: format!("iid {iid:.4}, noise 0.1 {noisy:.4} (gap {:.4} <= 0.03)", (iid - noisy).abs()),
    }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        check(1, "gradient oracle", secs(10), gradient_oracle),
        check(2, "algorithm identities", secs(30), algorithm_identities),
        check(3, "partition properties", secs(20), partition_suite),
        check(4, "FCUBE reproduction", secs(120), fcube_reproduction),
        check(5, "label vs quantity skew", secs(600), label_vs_quantity_skew),
        check(6, "communication accounting", secs(1), communication_accounting),
        check(7, "determinism", secs(300), determinism),
        check(8, "feature noise", secs(300), feature_noise),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
