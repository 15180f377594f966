//! Non-IID partitioning of a [`LabeledDataset`] across parties.
//!
//! Strategies: homogeneous (IID), label quantity (`#C=k`), Dirichlet label
//! proportions, Dirichlet quantity skew, whole-group assignment (writers),
//! FCUBE antipodal octant pairs, and a Gaussian feature-noise overlay that can
//! be stacked on any of them.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{FedError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, tag};

const MAX_DIRICHLET_ATTEMPTS: u64 = 100;

/// Sample indices owned by each party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    assignments: Vec<Vec<usize>>,
}

impl PartitionMap {
    /// Validates disjointness, exhaustiveness over `0..n_samples`, and
    /// non-empty parties.
    pub fn new(assignments: Vec<Vec<usize>>, n_samples: usize) -> Result<Self> {
        if assignments.is_empty() {
            return Err(FedError::Config("a partition needs at least one party".into()));
        }
        let mut seen = vec![false; n_samples];
        for (p, list) in assignments.iter().enumerate() {
            if list.is_empty() {
                return Err(FedError::PartitionInfeasible(format!("party {p} is empty")));
            }
            for &i in list {
                if i >= n_samples {
                    return Err(FedError::Data(format!(
                        "party {p} references sample {i} of {n_samples}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(FedError::Data(format!("sample {i} assigned twice")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(FedError::Data(format!("sample {i} assigned to no party")));
        }
        Ok(PartitionMap { assignments })
    }

    pub fn n_parties(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_samples(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn party(&self, p: usize) -> &[usize] {
        &self.assignments[p]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Base splitting strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    LabelQuantity { k: usize },
    LabelDirichlet { beta: f64, min_size: usize },
    QuantityDirichlet { beta: f64, min_size: usize },
    ByGroup,
    /// FCUBE: party `j` receives octant pair `{j, 7 - j}`. Requires octant
    /// ids as group ids and exactly four parties.
    OctantPairs,
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKind::Iid => write!(f, "iid"),
            PartitionKind::LabelQuantity { k } => write!(f, "#C={k}"),
            PartitionKind::LabelDirichlet { beta, .. } => write!(f, "p~Dir({beta})"),
            PartitionKind::QuantityDirichlet { beta, .. } => write!(f, "q~Dir({beta})"),
            PartitionKind::ByGroup => write!(f, "by-group"),
            PartitionKind::OctantPairs => write!(f, "fcube-octants"),
        }
    }
}

/// A base strategy plus an optional Gaussian feature-noise overlay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub kind: PartitionKind,
    pub noise_sigma: f64,
}

impl PartitionSpec {
    pub fn new(kind: PartitionKind) -> Self {
        PartitionSpec {
            kind,
            noise_sigma: 0.0,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PartitionKind::LabelQuantity { k } if k < 1 => {
                return Err(FedError::Config("label quantity k must be >= 1".into()))
            }
            PartitionKind::LabelDirichlet { beta, min_size }
            | PartitionKind::QuantityDirichlet { beta, min_size } => {
                check_beta(beta)?;
                if min_size < 1 {
                    return Err(FedError::Config("min_size must be >= 1".into()));
                }
            }
            _ => {}
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(FedError::Config(format!(
                "noise sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if self.noise_sigma > 0.0 {
            write!(f, "+x~Gau({})", self.noise_sigma)?;
        }
        Ok(())
    }
}

/// A party's materialized local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyView {
    pub party_id: usize,
    pub data: LabeledDataset,
}

impl PartyView {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn check_parties(n_samples: usize, n_parties: usize) -> Result<()> {
    if n_parties < 1 || n_parties > n_samples {
        return Err(FedError::Config(format!(
            "cannot split {n_samples} samples across {n_parties} parties"
        )));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(FedError::Config(format!("beta must be > 0, got {beta}")));
    }
    Ok(())
}

/// Splits `items` into `parts` contiguous runs whose sizes differ by at most
/// one; the first `len % parts` runs get the extra item.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut pos = 0;
    for j in 0..parts {
        let len = base + usize::from(j < extra);
        out.push(items[pos..pos + len].to_vec());
        pos += len;
    }
    out
}

/// Splits `items` at `floor(len * cumsum(proportions))` boundaries.
fn split_by_proportions(items: &[usize], proportions: &[f64]) -> Vec<Vec<usize>> {
    let m = items.len();
    let mut out = Vec::with_capacity(proportions.len());
    let mut cum = 0.0;
    let mut start = 0;
    for (j, &p) in proportions.iter().enumerate() {
        cum += p;
        let end = if j + 1 == proportions.len() {
            m
        } else {
            ((cum * m as f64).floor() as usize).clamp(start, m)
        };
        out.push(items[start..end].to_vec());
        start = end;
    }
    out
}

/// A draw from the symmetric Dirichlet(beta, ..., beta) via normalized
/// Gamma(beta, 1) variates.
pub fn sample_dirichlet(rng: &mut ChaCha8Rng, beta: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every component underflowed; the limit of tiny beta is a vertex
        let mut v = vec![0.0; n];
        v[rng.random_range(0..n)] = 1.0;
        v
    }
}

fn indices_by_class(ds: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); ds.n_classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
}

fn finish(mut assignments: Vec<Vec<usize>>, n: usize) -> Result<PartitionMap> {
    for list in &mut assignments {
        list.sort_unstable();
    }
    PartitionMap::new(assignments, n)
}

/// Homogeneous split: shuffle, then near-equal contiguous parts.
pub fn partition_iid(ds: &LabeledDataset, n_parties: usize, seed: u64) -> Result<PartitionMap> {
    check_parties(ds.len(), n_parties)?;
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    perm.shuffle(&mut rng::stream(seed, &[tag::PARTITION, 0]));
    finish(split_even(&perm, n_parties), ds.len())
}

/// Label ownership for `#C=k`: a round-robin sweep over a shuffled label
/// order gives every label an owner, then each party tops up to `k` distinct
/// labels uniformly at random.
pub fn assign_label_owners(
    n_parties: usize,
    n_classes: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BTreeSet<usize>>> {
    if k < 1 || k > n_classes {
        return Err(FedError::Config(format!(
            "k must lie in [1, {n_classes}], got {k}"
        )));
    }
    if n_parties * k < n_classes {
        return Err(FedError::InfeasibleCoverage {
            parties: n_parties,
            k,
            classes: n_classes,
        });
    }
    let mut order: Vec<usize> = (0..n_classes).collect();
    order.shuffle(rng);
    let mut owned = vec![BTreeSet::new(); n_parties];
    for (pos, &label) in order.iter().enumerate() {
        owned[pos % n_parties].insert(label);
    }
    for labels in owned.iter_mut() {
        while labels.len() < k {
            let free: Vec<usize> = (0..n_classes).filter(|l| !labels.contains(l)).collect();
            labels.insert(*free.choose(rng).expect("k <= n_classes"));
        }
    }
    Ok(owned)
}

/// `#C=k`: every party holds samples of exactly `k` labels; each label's
/// samples are split randomly and near-equally among its owners.
pub fn partition_label_quantity(
    ds: &LabeledDataset,
    n_parties: usize,
    k: usize,
    seed: u64,
) -> Result<PartitionMap> {
    check_parties(ds.len(), n_parties)?;
    let mut rng = rng::stream(seed, &[tag::PARTITION, 1]);
    let owned = assign_label_owners(n_parties, ds.n_classes(), k, &mut rng)?;
    let mut assignments = vec![Vec::new(); n_parties];
    for (label, mut members) in indices_by_class(ds).into_iter().enumerate() {
        let owners: Vec<usize> = (0..n_parties).filter(|&p| owned[p].contains(&label)).collect();
        if members.len() < owners.len() {
            return Err(FedError::PartitionInfeasible(format!(
                "label {label} has {} samples for {} owners",
                members.len(),
                owners.len()
            )));
        }
        members.shuffle(&mut rng);
        for (owner, part) in owners.iter().zip(split_even(&members, owners.len())) {
            assignments[*owner].extend(part);
        }
    }
    finish(assignments, ds.len())
}

fn retry_dirichlet(
    n: usize,
    n_parties: usize,
    min_size: usize,
    seed: u64,
    stream_id: u64,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
) -> Result<PartitionMap> {
    check_parties(n, n_parties)?;
    if min_size < 1 {
        return Err(FedError::Config("min_size must be >= 1".into()));
    }
    for attempt in 0..MAX_DIRICHLET_ATTEMPTS {
        let mut rng = rng::stream(seed, &[tag::PARTITION, stream_id, attempt]);
        let assignments = draw(&mut rng);
        if assignments.iter().all(|a| a.len() >= min_size) {
            return finish(assignments, n);
        }
    }
    Err(FedError::PartitionInfeasible(format!(
        "no draw gave every party >= {min_size} samples in {MAX_DIRICHLET_ATTEMPTS} attempts"
    )))
}

/// Distribution-based label imbalance: per class, Dirichlet proportions over
/// parties. Redraws everything until each party holds `min_size` samples.
pub fn partition_label_dirichlet(
    ds: &LabeledDataset,
    n_parties: usize,
    beta: f64,
    min_size: usize,
    seed: u64,
) -> Result<PartitionMap> {
    check_beta(beta)?;
    let by_class = indices_by_class(ds);
    retry_dirichlet(ds.len(), n_parties, min_size, seed, 2, |rng| {
        let mut assignments = vec![Vec::new(); n_parties];
        for members in &by_class {
            let mut members = members.clone();
            members.shuffle(rng);
            let p = sample_dirichlet(rng, beta, n_parties);
            for (a, part) in assignments.iter_mut().zip(split_by_proportions(&members, &p)) {
                a.extend(part);
            }
        }
        assignments
    })
}

/// Quantity skew: one Dirichlet draw over the shuffled sample pool.
pub fn partition_quantity_dirichlet(
    ds: &LabeledDataset,
    n_parties: usize,
    beta: f64,
    min_size: usize,
    seed: u64,
) -> Result<PartitionMap> {
    check_beta(beta)?;
    let n = ds.len();
    retry_dirichlet(n, n_parties, min_size, seed, 3, |rng| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let q = sample_dirichlet(rng, beta, n_parties);
        split_by_proportions(&perm, &q)
    })
}

/// Whole groups (e.g. writers) dealt round-robin, after a shuffle, to parties.
pub fn partition_by_group(ds: &LabeledDataset, n_parties: usize, seed: u64) -> Result<PartitionMap> {
    let groups = ds
        .group_ids()
        .ok_or_else(|| FedError::Config("by-group partitioning needs group ids".into()))?;
    let mut distinct: Vec<usize> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if n_parties < 1 || distinct.len() < n_parties {
        return Err(FedError::Config(format!(
            "{} groups cannot cover {n_parties} parties",
            distinct.len()
        )));
    }
    distinct.shuffle(&mut rng::stream(seed, &[tag::PARTITION, 4]));
    let owner: std::collections::BTreeMap<usize, usize> = distinct
        .iter()
        .enumerate()
        .map(|(pos, &g)| (g, pos % n_parties))
        .collect();
    let mut assignments = vec![Vec::new(); n_parties];
    for (i, g) in groups.iter().enumerate() {
        assignments[owner[g]].push(i);
    }
    finish(assignments, ds.len())
}

/// Party owning FCUBE octant `o`: pairs `{o, 7 - o}` go to party `min(o, 7 - o)`.
pub fn octant_pair_party(octant: usize) -> usize {
    octant.min(7 - octant)
}

/// FCUBE feature skew: four parties, each holding two antipodal octants.
pub fn partition_octant_pairs(ds: &LabeledDataset) -> Result<PartitionMap> {
    let octants = ds
        .group_ids()
        .ok_or_else(|| FedError::Config("octant partitioning needs octant ids as group ids".into()))?;
    let mut assignments = vec![Vec::new(); 4];
    for (i, &o) in octants.iter().enumerate() {
        if o > 7 {
            return Err(FedError::Data(format!("sample {i} has octant id {o}")));
        }
        assignments[octant_pair_party(o)].push(i);
    }
    finish(assignments, ds.len())
}

/// Builds the index map for a base strategy.
pub fn build_partition(
    ds: &LabeledDataset,
    kind: &PartitionKind,
    n_parties: usize,
    seed: u64,
) -> Result<PartitionMap> {
    match *kind {
        PartitionKind::Iid => partition_iid(ds, n_parties, seed),
        PartitionKind::LabelQuantity { k } => partition_label_quantity(ds, n_parties, k, seed),
        PartitionKind::LabelDirichlet { beta, min_size } => {
            partition_label_dirichlet(ds, n_parties, beta, min_size, seed)
        }
        PartitionKind::QuantityDirichlet { beta, min_size } => {
            partition_quantity_dirichlet(ds, n_parties, beta, min_size, seed)
        }
        PartitionKind::ByGroup => partition_by_group(ds, n_parties, seed),
        PartitionKind::OctantPairs => {
            if n_parties != 4 {
                return Err(FedError::Config(format!(
                    "octant-pair partitioning needs 4 parties, got {n_parties}"
                )));
            }
            partition_octant_pairs(ds)
        }
    }
}

/// Materializes party views, adding `N(0, sigma * i / N)` noise (variance,
/// 1-based party index `i`) to every feature of party `i`.
pub fn apply_feature_noise(
    map: &PartitionMap,
    ds: &LabeledDataset,
    sigma: f64,
    seed: u64,
) -> Result<Vec<PartyView>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(FedError::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let n = map.n_parties();
    map.assignments()
        .iter()
        .enumerate()
        .map(|(p, indices)| {
            let local = ds.subset(indices);
            let variance = noise_variance(sigma, p, n);
            let data = if variance == 0.0 {
                local
            } else {
                let std = variance.sqrt();
                let mut rng = rng::stream(seed, &[tag::NOISE, p as u64]);
                let mut x = local.features().as_slice().to_vec();
                for v in x.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += std * z;
                }
                let features = Matrix::from_vec(local.len(), local.n_features(), x)?;
                let relabelled = LabeledDataset::new(features, local.labels().to_vec(), local.n_classes())?;
                match local.group_ids() {
                    Some(g) => relabelled.with_groups(g.to_vec())?,
                    None => relabelled,
                }
            };
            Ok(PartyView { party_id: p, data })
        })
        .collect()
}

/// Noise variance of 0-based party `party` out of `n_parties`.
pub fn noise_variance(sigma: f64, party: usize, n_parties: usize) -> f64 {
    sigma * (party + 1) as f64 / n_parties as f64
}

/// Mixed skew: a label-, quantity-, or IID base split followed by the
/// feature-noise overlay.
pub fn compose_mixed(
    ds: &LabeledDataset,
    base: &PartitionKind,
    noise_sigma: f64,
    n_parties: usize,
    seed: u64,
) -> Result<(PartitionMap, Vec<PartyView>)> {
    match base {
        PartitionKind::Iid | PartitionKind::LabelDirichlet { .. } | PartitionKind::QuantityDirichlet { .. } => {}
        other => {
            return Err(FedError::Config(format!(
                "mixed skew needs an IID or Dirichlet base, got {other}"
            )))
        }
    }
    let map = build_partition(ds, base, n_parties, seed)?;
    let views = apply_feature_noise(&map, ds, noise_sigma, seed)?;
    Ok((map, views))
}

/// Index map plus views for any spec.
pub fn materialize(
    ds: &LabeledDataset,
    spec: &PartitionSpec,
    n_parties: usize,
    seed: u64,
) -> Result<(PartitionMap, Vec<PartyView>)> {
    spec.validate()?;
    let map = build_partition(ds, &spec.kind, n_parties, seed)?;
    let views = apply_feature_noise(&map, ds, spec.noise_sigma, seed)?;
    Ok((map, views))
}

/// Class-count matrix and imbalance summary of a partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStats {
    /// `class_counts[party][class]`
    pub class_counts: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    pub summary: ImbalanceSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSummary {
    pub min_size: usize,
    pub max_size: usize,
    /// Coefficient of variation (population std / mean) of party sizes.
    pub size_cv: f64,
    /// Mean number of distinct labels per party.
    pub mean_labels_per_party: f64,
    /// Mean total-variation distance between party and global label distributions.
    pub mean_label_tv: f64,
}

impl fmt::Display for ImbalanceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "party sizes {}..{} (cv {:.3}), {:.2} labels/party, mean label TV {:.4}",
            self.min_size, self.max_size, self.size_cv, self.mean_labels_per_party, self.mean_label_tv
        )
    }
}

pub fn partition_stats(map: &PartitionMap, ds: &LabeledDataset) -> Result<PartitionStats> {
    if map.n_samples() != ds.len() {
        return Err(FedError::Data(format!(
            "partition covers {} samples, dataset has {}",
            map.n_samples(),
            ds.len()
        )));
    }
    let k = ds.n_classes();
    let mut class_counts = vec![vec![0usize; k]; map.n_parties()];
    for (p, indices) in map.assignments().iter().enumerate() {
        for &i in indices {
            let y = *ds
                .labels()
                .get(i)
                .ok_or_else(|| FedError::Data(format!("index {i} outside dataset")))?;
            class_counts[p][y] += 1;
        }
    }
    let sizes = map.sizes();
    let n = sizes.len() as f64;
    let mean = ds.len() as f64 / n;
    let var = sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / n;
    let global: Vec<f64> = ds.class_counts().iter().map(|&c| c as f64 / ds.len() as f64).collect();
    let tv: f64 = class_counts
        .iter()
        .zip(&sizes)
        .map(|(row, &s)| {
            0.5 * row
                .iter()
                .zip(&global)
                .map(|(&c, &g)| (c as f64 / s as f64 - g).abs())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    let labels_per_party =
        class_counts.iter().map(|r| r.iter().filter(|&&c| c > 0).count()).sum::<usize>() as f64 / n;
    let summary = ImbalanceSummary {
        min_size: *sizes.iter().min().expect("non-empty"),
        max_size: *sizes.iter().max().expect("non-empty"),
        size_cv: var.sqrt() / mean,
        mean_labels_per_party: labels_per_party,
        mean_label_tv: tv,
    };
    Ok(PartitionStats {
        class_counts,
        sizes,
        summary,
    })
}

/// Text export: `"n_parties n_samples"`, then one line of indices per party.
pub fn write_partition(map: &PartitionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| FedError::io(path, e))?);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "{} {}", map.n_parties(), map.n_samples())?;
        for list in map.assignments() {
            let line: Vec<String> = list.iter().map(usize::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()
    };
    body().map_err(|e| FedError::io(path, e))
}

pub fn read_partition(path: impl AsRef<Path>) -> Result<PartitionMap> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FedError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| FedError::TextFormat { line: 1, msg: "missing header".into() })?
        .map_err(|e| FedError::io(path, e))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| FedError::TextFormat { line: 1, msg: format!("bad header {header:?}") })?;
    let [n_parties, n_samples] = nums[..] else {
        return Err(FedError::TextFormat { line: 1, msg: format!("bad header {header:?}") });
    };
    let mut assignments = Vec::with_capacity(n_parties);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| FedError::io(path, e))?;
        let list = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<Vec<usize>, _>>()
            .map_err(|_| FedError::TextFormat { line: i + 2, msg: "bad index".into() })?;
        assignments.push(list);
    }
    if assignments.len() != n_parties {
        return Err(FedError::TextFormat {
            line: assignments.len() + 1,
            msg: format!("expected {n_parties} party lines, found {}", assignments.len()),
        });
    }
    PartitionMap::new(assignments, n_samples)
}

/// Class-count matrix as CSV: header `party,class_0,...`, one row per party.
pub fn write_stats_csv(stats: &PartitionStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| FedError::io(path, e))?);
    let k = stats.class_counts.first().map_or(0, Vec::len);
    let mut body = || -> std::io::Result<()> {
        let header: Vec<String> = (0..k).map(|c| format!("class_{c}")).collect();
        writeln!(w, "party,{}", header.join(","))?;
        for (p, row) in stats.class_counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(w, "{p},{}", cells.join(","))?;
        }
        w.flush()
    };
    body().map_err(|e| FedError::io(path, e))
}
