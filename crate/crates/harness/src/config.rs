//! Experiment configuration: JSON parsing, defaults, and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use fedsim_core::data::{self, FcubeSpec};
use fedsim_core::{
    Algorithm, ControlUpdate, FedRunConfig, LabeledDataset, MlpArch, PartitionKind, PartitionSpec,
};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Fcube {
        #[serde(default = "default_fcube_train")]
        n_train: usize,
        #[serde(default = "default_fcube_test")]
        n_test: usize,
    },
    Blobs {
        #[serde(default = "default_blob_classes")]
        n_classes: usize,
        #[serde(default = "default_blob_size")]
        n_per_class: usize,
        #[serde(default = "default_blob_dim")]
        dim: usize,
        #[serde(default = "default_blob_spread")]
        spread: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Keep only the first `limit` training samples.
        #[serde(default)]
        limit: Option<usize>,
        /// Whitespace-separated group id per training sample (writer ids).
        #[serde(default)]
        train_groups: Option<PathBuf>,
    },
    Libsvm {
        /// Dataset name; `rcv1` switches the default learning rate.
        #[serde(default)]
        name: Option<String>,
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        n_features: usize,
        n_classes: usize,
        /// Raw integer label (as written in the file) to class index.
        label_map: BTreeMap<String, usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_fcube_train() -> usize {
    FcubeSpec::default().n_train
}
fn default_fcube_test() -> usize {
    FcubeSpec::default().n_test
}
fn default_blob_classes() -> usize {
    10
}
fn default_blob_size() -> usize {
    500
}
fn default_blob_dim() -> usize {
    20
}
fn default_blob_spread() -> f64 {
    0.2
}
fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    pub fn is_fcube(&self) -> bool {
        matches!(self, DatasetSpec::Fcube { .. })
    }

    fn default_lr(&self) -> f64 {
        match self {
            DatasetSpec::Libsvm { name: Some(n), .. } if n.eq_ignore_ascii_case("rcv1") => 0.1,
            _ => 0.01,
        }
    }

    /// Loads or generates `(train, test)`. Generated data is seeded by `seed`.
    pub fn load(&self, seed: u64) -> Result<(LabeledDataset, LabeledDataset), HarnessError> {
        match self {
            DatasetSpec::Fcube { n_train, n_test } => {
                let f = data::fcube_generate(&FcubeSpec {
                    n_train: *n_train,
                    n_test: *n_test,
                    seed,
                })?;
                Ok((f.train, f.test))
            }
            DatasetSpec::Blobs {
                n_classes,
                n_per_class,
                dim,
                spread,
                test_fraction,
            } => {
                let all = data::blobs_generate(*n_classes, *n_per_class, *dim, *spread, seed)?;
                Ok(data::split_train_test(&all, *test_fraction, seed)?)
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                limit,
                train_groups,
            } => {
                let mut train = data::read_idx(train_images, train_labels)?;
                if let Some(path) = train_groups {
                    let groups = read_groups(path)?;
                    if groups.len() != train.len() {
                        return Err(HarnessError::config(
                            "dataset.train_groups",
                            format!("{} group ids for {} samples", groups.len(), train.len()),
                        ));
                    }
                    train = train.with_groups(groups)?;
                }
                if let Some(n) = *limit {
                    if n < train.len() {
                        let keep: Vec<usize> = (0..n).collect();
                        train = train.subset(&keep);
                    }
                }
                let test = data::read_idx(test_images, test_labels)?;
                Ok((train, test))
            }
            DatasetSpec::Libsvm {
                train,
                test,
                n_features,
                n_classes,
                label_map,
                test_fraction,
                ..
            } => {
                let map = parse_label_map(label_map)?;
                let tr = data::read_libsvm(train, *n_features, *n_classes, &map)?;
                match test {
                    Some(t) => Ok((tr, data::read_libsvm(t, *n_features, *n_classes, &map)?)),
                    None => Ok(data::split_train_test(&tr, *test_fraction, seed)?),
                }
            }
        }
    }
}

fn parse_label_map(raw: &BTreeMap<String, usize>) -> Result<BTreeMap<i64, usize>, HarnessError> {
    raw.iter()
        .map(|(k, &v)| {
            let key = k.trim().parse::<i64>().map_err(|_| {
                HarnessError::config(format!("dataset.label_map.{k}"), "label must be an integer")
            })?;
            Ok((key, v))
        })
        .collect()
}

fn read_groups(path: &Path) -> Result<Vec<usize>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| HarnessError::config("dataset.train_groups", format!("bad group id {t:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Iid,
    LabelQuantity,
    LabelDirichlet,
    QuantityDirichlet,
    ByGroup,
    OctantPairs,
}

/// Partition as written in the config; converted into a [`PartitionSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionEntry {
    pub strategy: Strategy,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub min_size: Option<usize>,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
}

impl PartitionEntry {
    fn to_spec(&self, path: &str) -> Result<PartitionSpec, HarnessError> {
        let beta = || -> Result<f64, HarnessError> {
            let b = self
                .beta
                .ok_or_else(|| HarnessError::config(format!("{path}.beta"), "required for this strategy"))?;
            if !(b > 0.0) || !b.is_finite() {
                return Err(HarnessError::config(format!("{path}.beta"), format!("must be > 0, got {b}")));
            }
            Ok(b)
        };
        let min_size = self.min_size.unwrap_or(1);
        if min_size < 1 {
            return Err(HarnessError::config(format!("{path}.min_size"), "must be >= 1"));
        }
        let kind = match self.strategy {
            Strategy::Iid => PartitionKind::Iid,
            Strategy::LabelQuantity => {
                let k = self
                    .k
                    .ok_or_else(|| HarnessError::config(format!("{path}.k"), "required for label_quantity"))?;
                if k < 1 {
                    return Err(HarnessError::config(format!("{path}.k"), "must be >= 1"));
                }
                PartitionKind::LabelQuantity { k }
            }
            Strategy::LabelDirichlet => PartitionKind::LabelDirichlet { beta: beta()?, min_size },
            Strategy::QuantityDirichlet => PartitionKind::QuantityDirichlet { beta: beta()?, min_size },
            Strategy::ByGroup => PartitionKind::ByGroup,
            Strategy::OctantPairs => PartitionKind::OctantPairs,
        };
        let sigma = self.noise_sigma.unwrap_or(0.0);
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(HarnessError::config(
                format!("{path}.noise_sigma"),
                format!("must be >= 0, got {sigma}"),
            ));
        }
        Ok(PartitionSpec::new(kind).with_noise(sigma))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Fedavg,
    Fedprox,
    Scaffold,
    Fednova,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    rounds: Option<usize>,
    parties: Option<usize>,
    sample_fraction: Option<f64>,
    local_epochs: Option<usize>,
    batch_size: Option<usize>,
    local_lr: Option<f64>,
    momentum: Option<f64>,
    server_lr: Option<f64>,
    scaffold_control: Option<ControlUpdate>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    mu: Option<Vec<f64>>,
    local_epochs: Option<Vec<usize>>,
    partitions: Option<Vec<PartitionEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: DatasetSpec,
    #[serde(default)]
    partition: Option<PartitionEntry>,
    #[serde(default)]
    hidden: Option<Vec<usize>>,
    #[serde(default)]
    algorithms: Option<Vec<AlgorithmName>>,
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    sweep: RawSweep,
    #[serde(default)]
    trials: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

/// A fully defaulted and validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// At least one entry; more than one when partitions are swept.
    pub partitions: Vec<PartitionSpec>,
    pub hidden: Vec<usize>,
    pub algorithms: Vec<AlgorithmName>,
    /// Base run parameters. `algorithm`, `local_epochs`, and `master_seed`
    /// are overridden per run.
    pub run: FedRunConfig,
    pub scaffold_control: ControlUpdate,
    pub mu_sweep: Vec<f64>,
    pub epoch_sweep: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

/// One column of the experiment grid: an algorithm with its tuning knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub label: String,
}

/// One row of the experiment grid: data partition and local epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Setting {
    pub partition: PartitionSpec,
    pub local_epochs: usize,
    pub label: String,
}

impl fmt::Display for AlgorithmName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AlgorithmName::Fedavg => "fedavg",
            AlgorithmName::Fedprox => "fedprox",
            AlgorithmName::Scaffold => "scaffold",
            AlgorithmName::Fednova => "fednova",
        };
        f.write_str(s)
    }
}

impl ExperimentConfig {
    pub fn arch(&self, input: usize, output: usize) -> Result<MlpArch, HarnessError> {
        Ok(MlpArch::with_hidden(input, &self.hidden, output)?)
    }

    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for name in &self.algorithms {
            match name {
                AlgorithmName::Fedavg => out.push(Variant {
                    algorithm: Algorithm::FedAvg,
                    label: String::new(),
                }),
                AlgorithmName::Fedprox => out.extend(self.mu_sweep.iter().map(|&mu| Variant {
                    algorithm: Algorithm::FedProx { mu },
                    label: format!("mu={mu}"),
                })),
                AlgorithmName::Scaffold => out.push(Variant {
                    algorithm: Algorithm::Scaffold {
                        c_update: self.scaffold_control,
                    },
                    label: String::new(),
                }),
                AlgorithmName::Fednova => out.push(Variant {
                    algorithm: Algorithm::FedNova,
                    label: String::new(),
                }),
            }
        }
        out
    }

    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for p in &self.partitions {
            for &e in &self.epoch_sweep {
                let label = if self.epoch_sweep.len() > 1 {
                    format!("{p} E={e}")
                } else {
                    p.to_string()
                };
                out.push(Setting {
                    partition: *p,
                    local_epochs: e,
                    label,
                });
            }
        }
        out
    }
}

/// Parses a JSON config; errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::config(path, e.into_inner().to_string())
    })?;
    resolve(raw)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig, HarnessError> {
    let fcube = raw.dataset.is_fcube();
    check_dataset(&raw.dataset)?;

    let partitions = match (&raw.sweep.partitions, &raw.partition) {
        (Some(_), Some(_)) => {
            return Err(HarnessError::config(
                "sweep.partitions",
                "give either partition or sweep.partitions, not both",
            ))
        }
        (Some(list), None) => {
            if list.is_empty() {
                return Err(HarnessError::config("sweep.partitions", "must not be empty"));
            }
            list.iter()
                .enumerate()
                .map(|(i, p)| p.to_spec(&format!("sweep.partitions[{i}]")))
                .collect::<Result<Vec<_>, _>>()?
        }
        (None, Some(p)) => vec![p.to_spec("partition")?],
        (None, None) => vec![PartitionSpec::new(if fcube {
            PartitionKind::OctantPairs
        } else {
            PartitionKind::Iid
        })],
    };

    let hidden = raw.hidden.unwrap_or_else(|| vec![32, 16, 8]);
    if hidden.contains(&0) {
        return Err(HarnessError::config("hidden", "layer widths must be >= 1"));
    }

    let algorithms = raw.algorithms.unwrap_or_else(|| vec![AlgorithmName::Fedavg]);
    if algorithms.is_empty() {
        return Err(HarnessError::config("algorithms", "must not be empty"));
    }

    let defaults = FedRunConfig::default();
    let r = &raw.run;
    let run = FedRunConfig {
        algorithm: Algorithm::FedAvg,
        rounds: r.rounds.unwrap_or(defaults.rounds),
        parties: r.parties.unwrap_or(if fcube { 4 } else { defaults.parties }),
        sample_fraction: r.sample_fraction.unwrap_or(defaults.sample_fraction),
        local_epochs: r.local_epochs.unwrap_or(defaults.local_epochs),
        batch_size: r.batch_size.unwrap_or(defaults.batch_size),
        local_lr: r.local_lr.unwrap_or_else(|| raw.dataset.default_lr()),
        momentum: r.momentum.unwrap_or(defaults.momentum),
        server_lr: r.server_lr.unwrap_or(defaults.server_lr),
        master_seed: 0,
    };
    check_run(&run)?;

    let mu_sweep = raw.sweep.mu.unwrap_or_else(|| vec![0.01]);
    if mu_sweep.is_empty() {
        return Err(HarnessError::config("sweep.mu", "must not be empty"));
    }
    if let Some(i) = mu_sweep.iter().position(|m| !(*m >= 0.0) || !m.is_finite()) {
        return Err(HarnessError::config(
            format!("sweep.mu[{i}]"),
            format!("must be >= 0, got {}", mu_sweep[i]),
        ));
    }
    let epoch_sweep = match raw.sweep.local_epochs {
        Some(list) => {
            if list.is_empty() {
                return Err(HarnessError::config("sweep.local_epochs", "must not be empty"));
            }
            if let Some(i) = list.iter().position(|&e| e < 1) {
                return Err(HarnessError::config(format!("sweep.local_epochs[{i}]"), "must be >= 1"));
            }
            list
        }
        None => vec![run.local_epochs],
    };

    if run.parties != 4 && partitions.iter().any(|p| p.kind == PartitionKind::OctantPairs) {
        return Err(HarnessError::config("run.parties", "octant_pairs needs exactly 4 parties"));
    }

    let trials = raw.trials.unwrap_or(1);
    if trials < 1 {
        return Err(HarnessError::config("trials", "must be >= 1"));
    }

    Ok(ExperimentConfig {
        dataset: raw.dataset,
        partitions,
        hidden,
        algorithms,
        run,
        scaffold_control: r.scaffold_control.unwrap_or(ControlUpdate::Reuse),
        mu_sweep,
        epoch_sweep,
        trials,
        seed: raw.seed.unwrap_or(0),
        out_dir: raw.out_dir.unwrap_or_else(|| PathBuf::from("results")),
    })
}

fn check_dataset(ds: &DatasetSpec) -> Result<(), HarnessError> {
    let fraction = |f: f64| {
        if f > 0.0 && f < 1.0 {
            Ok(())
        } else {
            Err(HarnessError::config("dataset.test_fraction", format!("must lie in (0, 1), got {f}")))
        }
    };
    match ds {
        DatasetSpec::Fcube { n_train, n_test } => {
            if *n_train < 1 {
                return Err(HarnessError::config("dataset.n_train", "must be >= 1"));
            }
            if *n_test < 1 {
                return Err(HarnessError::config("dataset.n_test", "must be >= 1"));
            }
        }
        DatasetSpec::Blobs {
            n_classes,
            n_per_class,
            dim,
            spread,
            test_fraction,
        } => {
            for (key, v) in [("n_classes", n_classes), ("n_per_class", n_per_class), ("dim", dim)] {
                if *v < 1 {
                    return Err(HarnessError::config(format!("dataset.{key}"), "must be >= 1"));
                }
            }
            if !(*spread >= 0.0) || !spread.is_finite() {
                return Err(HarnessError::config("dataset.spread", format!("must be >= 0, got {spread}")));
            }
            fraction(*test_fraction)?;
        }
        DatasetSpec::Idx { limit, .. } => {
            if *limit == Some(0) {
                return Err(HarnessError::config("dataset.limit", "must be >= 1"));
            }
        }
        DatasetSpec::Libsvm {
            n_features,
            n_classes,
            label_map,
            test_fraction,
            ..
        } => {
            if *n_features < 1 {
                return Err(HarnessError::config("dataset.n_features", "must be >= 1"));
            }
            if *n_classes < 1 {
                return Err(HarnessError::config("dataset.n_classes", "must be >= 1"));
            }
            if let Some((raw, c)) = label_map.iter().find(|(_, c)| **c >= *n_classes) {
                return Err(HarnessError::config(
                    format!("dataset.label_map.{raw}"),
                    format!("class {c} outside [0, {n_classes})"),
                ));
            }
            parse_label_map(label_map)?;
            fraction(*test_fraction)?;
        }
    }
    Ok(())
}

fn check_run(run: &FedRunConfig) -> Result<(), HarnessError> {
    let bad = |key: &str, msg: String| Err(HarnessError::config(format!("run.{key}"), msg));
    if run.parties < 1 {
        return bad("parties", "must be >= 1".into());
    }
    if run.local_epochs < 1 {
        return bad("local_epochs", "must be >= 1".into());
    }
    if run.batch_size < 1 {
        return bad("batch_size", "must be >= 1".into());
    }
    if !(run.local_lr > 0.0) || !run.local_lr.is_finite() {
        return bad("local_lr", format!("must be > 0, got {}", run.local_lr));
    }
    if !(run.server_lr > 0.0) || !run.server_lr.is_finite() {
        return bad("server_lr", format!("must be > 0, got {}", run.server_lr));
    }
    if !(0.0..1.0).contains(&run.momentum) {
        return bad("momentum", format!("must lie in [0, 1), got {}", run.momentum));
    }
    if !(run.sample_fraction > 0.0 && run.sample_fraction <= 1.0) {
        return bad("sample_fraction", format!("must lie in (0, 1], got {}", run.sample_fraction));
    }
    run.validate()
        .map_err(|e| HarnessError::config("run.sample_fraction", e.to_string()))
}
