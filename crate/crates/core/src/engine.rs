//! Federated round loop: party sampling, local training (FedAvg, FedProx,
//! SCAFFOLD) and server aggregation (weighted average, FedNova, SCAFFOLD
//! control-variate update).
//!
//! Every random choice is drawn from a stream keyed by
//! `(master_seed, round, party)`, and aggregation sums in ascending party
//! order, so a round gives the same bits whether parties train sequentially
//! or on a thread pool.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{FedError, Result};
use crate::nn::{self, Batch, MlpArch, ParamVector};
use crate::partition::{self, PartitionSpec, PartyView};
use crate::rng::{self, tag};

/// How a SCAFFOLD party refreshes its control variate after local training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlUpdate {
    /// Full-batch gradient of the local dataset at the global model.
    Gradient,
    /// `c_i − c + (w^t − w_i) / (τ_i·η)`, reusing the local trajectory.
    Reuse,
    /// Keep `c_i` as is (`Δc_i = 0`). Diagnostic only.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Algorithm {
    FedAvg,
    FedProx { mu: f64 },
    Scaffold { c_update: ControlUpdate },
    FedNova,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx { .. } => "fedprox",
            Algorithm::Scaffold { .. } => "scaffold",
            Algorithm::FedNova => "fednova",
        }
    }

    fn prox_mu(&self) -> f64 {
        match *self {
            Algorithm::FedProx { mu } => mu,
            _ => 0.0,
        }
    }

    pub fn is_scaffold(&self) -> bool {
        matches!(self, Algorithm::Scaffold { .. })
    }
}

/// Hyperparameters of one federation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedRunConfig {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub parties: usize,
    pub sample_fraction: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub local_lr: f64,
    pub momentum: f64,
    pub server_lr: f64,
    pub master_seed: u64,
}

impl Default for FedRunConfig {
    fn default() -> Self {
        FedRunConfig {
            algorithm: Algorithm::FedAvg,
            rounds: 50,
            parties: 10,
            sample_fraction: 1.0,
            local_epochs: 10,
            batch_size: 64,
            local_lr: 0.01,
            momentum: 0.9,
            server_lr: 1.0,
            master_seed: 0,
        }
    }
}

impl FedRunConfig {
    /// Checks every invariant except `rounds >= 1`; zero rounds is a valid
    /// evaluate-only run.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(FedError::Config(m));
        if self.parties < 1 {
            return fail("parties must be >= 1".into());
        }
        if self.local_epochs < 1 {
            return fail("local_epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.local_lr > 0.0) || !self.local_lr.is_finite() {
            return fail(format!("local_lr must be > 0, got {}", self.local_lr));
        }
        if !(self.server_lr > 0.0) || !self.server_lr.is_finite() {
            return fail(format!("server_lr must be > 0, got {}", self.server_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return fail(format!(
                "sample_fraction must lie in (0, 1], got {}",
                self.sample_fraction
            ));
        }
        if sample_size(self.parties, self.sample_fraction) < 1 {
            return fail(format!(
                "sample_fraction {} selects no party out of {}",
                self.sample_fraction, self.parties
            ));
        }
        if let Algorithm::FedProx { mu } = self.algorithm {
            if !(mu >= 0.0) || !mu.is_finite() {
                return fail(format!("mu must be >= 0, got {mu}"));
            }
        }
        Ok(())
    }
}

/// Server-side state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub round: usize,
    pub params: ParamVector,
    /// Server control variate `c`; present only for SCAFFOLD.
    pub control: Option<ParamVector>,
}

impl GlobalState {
    pub fn new(params: ParamVector, algorithm: &Algorithm) -> Self {
        let control = algorithm.is_scaffold().then(|| params.zeros_like());
        GlobalState {
            round: 0,
            params,
            control,
        }
    }
}

/// Per-party persistent state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub party_id: usize,
    /// Local control variate `c_i` (SCAFFOLD only).
    pub control: Option<ParamVector>,
}

impl ClientState {
    pub fn new(party_id: usize, like: &ParamVector, algorithm: &Algorithm) -> Self {
        ClientState {
            party_id,
            control: algorithm.is_scaffold().then(|| like.zeros_like()),
        }
    }
}

/// What a party reports after one round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub party_id: usize,
    /// `|D^i|`
    pub n_samples: usize,
    /// `Δw_i = w^t − w_i`
    pub delta: ParamVector,
    /// The party's final local model `w_i`.
    pub local_params: ParamVector,
    /// Local minibatch steps `τ_i`.
    pub tau: usize,
    /// `Δc_i` (SCAFFOLD only).
    pub delta_control: Option<ParamVector>,
    /// Sum over steps of `batch_len · batch_loss`.
    pub loss_sum: f64,
    /// Sum over steps of `batch_len`.
    pub loss_weight: usize,
    pub diverged: bool,
}

impl LocalUpdate {
    /// An update whose local model is `w_t − delta`.
    pub fn from_delta(
        party_id: usize,
        n_samples: usize,
        w_t: &ParamVector,
        delta: ParamVector,
        tau: usize,
    ) -> Result<Self> {
        let local_params = w_t.sub(&delta)?;
        Ok(LocalUpdate {
            party_id,
            n_samples,
            delta,
            local_params,
            tau,
            delta_control: None,
            loss_sum: 0.0,
            loss_weight: 0,
            diverged: false,
        })
    }

    pub fn with_delta_control(mut self, dc: ParamVector) -> Self {
        self.delta_control = Some(dc);
        self
    }

    pub fn mean_loss(&self) -> f64 {
        if self.loss_weight == 0 {
            0.0
        } else {
            self.loss_sum / self.loss_weight as f64
        }
    }
}

/// Loss and gradient of a local objective on one batch.
pub trait Objective: Sync {
    fn loss_and_grad(
        &self,
        params: &ParamVector,
        batch: &Batch,
        prox_mu: f64,
        prox_anchor: Option<&ParamVector>,
    ) -> Result<(f64, ParamVector)>;
}

impl Objective for MlpArch {
    fn loss_and_grad(
        &self,
        params: &ParamVector,
        batch: &Batch,
        prox_mu: f64,
        prox_anchor: Option<&ParamVector>,
    ) -> Result<(f64, ParamVector)> {
        nn::backward(params, self, batch, prox_mu, prox_anchor)
    }
}

/// Number of parties sampled per round: `round(fraction · N)`.
pub fn sample_size(n_parties: usize, fraction: f64) -> usize {
    ((fraction * n_parties as f64).round() as usize).min(n_parties)
}

/// Sorted party ids participating in `round`.
pub fn sample_parties(n_parties: usize, fraction: f64, round: usize, master_seed: u64) -> Vec<usize> {
    let m = sample_size(n_parties, fraction).max(1);
    if m >= n_parties {
        return (0..n_parties).collect();
    }
    let mut rng = rng::stream(master_seed, &[tag::SAMPLE, round as u64]);
    let mut chosen = index::sample(&mut rng, n_parties, m).into_vec();
    chosen.sort_unstable();
    chosen
}

/// Visiting order of a party's samples in one local epoch.
pub fn epoch_order(master_seed: u64, round: usize, party_id: usize, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(
        master_seed,
        &[tag::LOCAL, round as u64, party_id as u64, epoch as u64],
    ));
    order
}

fn make_batch(data: &LabeledDataset, indices: &[usize]) -> Result<Batch> {
    Batch::new(
        data.features().select_rows(indices),
        indices.iter().map(|&i| data.labels()[i]).collect(),
    )
}

/// Adds `c − c_i` to the gradient.
struct Correction<'a> {
    server: &'a ParamVector,
    client: &'a ParamVector,
}

struct Trajectory {
    params: ParamVector,
    tau: usize,
    loss_sum: f64,
    loss_weight: usize,
    diverged: bool,
}

fn run_local_sgd<O: Objective + ?Sized>(
    objective: &O,
    w_t: &ParamVector,
    party: &PartyView,
    cfg: &FedRunConfig,
    prox_mu: f64,
    correction: Option<Correction<'_>>,
    round: usize,
) -> Result<Trajectory> {
    if party.is_empty() {
        return Err(FedError::Data(format!("party {} has no data", party.party_id)));
    }
    let anchor = (prox_mu > 0.0).then_some(w_t);
    let mut params = w_t.clone();
    let mut velocity = w_t.zeros_like();
    let mut traj = Trajectory {
        params: w_t.clone(),
        tau: 0,
        loss_sum: 0.0,
        loss_weight: 0,
        diverged: false,
    };
    for epoch in 0..cfg.local_epochs {
        let order = epoch_order(cfg.master_seed, round, party.party_id, epoch, party.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch = make_batch(&party.data, chunk)?;
            let step = objective
                .loss_and_grad(&params, &batch, prox_mu, anchor)
                .and_then(|(loss, mut grad)| {
                    if let Some(c) = &correction {
                        for ((g, &s), &ci) in grad
                            .values_mut()
                            .iter_mut()
                            .zip(c.server.values())
                            .zip(c.client.values())
                        {
                            *g += s - ci;
                        }
                    }
                    nn::sgd_momentum_step_in_place(&mut params, &grad, &mut velocity, cfg.local_lr, cfg.momentum)?;
                    Ok(loss)
                });
            match step {
                Ok(loss) if loss.is_finite() => {
                    traj.loss_sum += loss * batch.len() as f64;
                    traj.loss_weight += batch.len();
                    traj.tau += 1;
                    traj.params.clone_from(&params);
                }
                Ok(_) | Err(FedError::Numeric(_)) => {
                    traj.diverged = true;
                    return Ok(traj);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(traj)
}

fn into_update(w_t: &ParamVector, party: &PartyView, traj: Trajectory) -> Result<LocalUpdate> {
    Ok(LocalUpdate {
        party_id: party.party_id,
        n_samples: party.len(),
        delta: w_t.sub(&traj.params)?,
        local_params: traj.params,
        tau: traj.tau.max(1),
        delta_control: None,
        loss_sum: traj.loss_sum,
        loss_weight: traj.loss_weight,
        diverged: traj.diverged,
    })
}

/// FedAvg / FedProx local training: `E` epochs of momentum SGD over freshly
/// shuffled minibatches, starting from `w_t` with zero velocity. A positive
/// `prox_mu` adds `(mu/2)·‖w − w_t‖²` to the objective.
pub fn local_train_sgd<O: Objective + ?Sized>(
    objective: &O,
    w_t: &ParamVector,
    party: &PartyView,
    cfg: &FedRunConfig,
    prox_mu: f64,
    round: usize,
) -> Result<LocalUpdate> {
    let traj = run_local_sgd(objective, w_t, party, cfg, prox_mu, None, round)?;
    if traj.diverged {
        return Err(FedError::Divergence {
            party: party.party_id,
            round,
        });
    }
    into_update(w_t, party, traj)
}

fn scaffold_update<O: Objective + ?Sized>(
    objective: &O,
    w_t: &ParamVector,
    server_c: &ParamVector,
    client_c: &ParamVector,
    party: &PartyView,
    cfg: &FedRunConfig,
    c_update: ControlUpdate,
    round: usize,
) -> Result<(LocalUpdate, ParamVector)> {
    w_t.check_same_shape(server_c, "server control variate")?;
    w_t.check_same_shape(client_c, "client control variate")?;
    let correction = Correction {
        server: server_c,
        client: client_c,
    };
    let traj = run_local_sgd(objective, w_t, party, cfg, 0.0, Some(correction), round)?;
    let mut update = into_update(w_t, party, traj)?;
    let new_c = match c_update {
        ControlUpdate::Frozen => client_c.clone(),
        ControlUpdate::Gradient => {
            let all: Vec<usize> = (0..party.len()).collect();
            let batch = make_batch(&party.data, &all)?;
            objective.loss_and_grad(w_t, &batch, 0.0, None)?.1
        }
        ControlUpdate::Reuse => {
            let scale = 1.0 / (update.tau as f64 * cfg.local_lr);
            let values = client_c
                .values()
                .iter()
                .zip(server_c.values())
                .zip(update.delta.values())
                .map(|((&ci, &c), &d)| ci - c + scale * d)
                .collect();
            ParamVector::new(w_t.shapes().to_vec(), values)?
        }
    };
    update.delta_control = Some(new_c.sub(client_c)?);
    Ok((update, new_c))
}

/// SCAFFOLD local training: the gradient is corrected by `c − c_i` before
/// the momentum update. Returns the update (with `Δc_i`) and the refreshed
/// `c_i`; the caller stores the latter.
pub fn local_train_scaffold<O: Objective + ?Sized>(
    objective: &O,
    w_t: &ParamVector,
    server_c: &ParamVector,
    client: &ClientState,
    party: &PartyView,
    cfg: &FedRunConfig,
    c_update: ControlUpdate,
    round: usize,
) -> Result<(LocalUpdate, ParamVector)> {
    let client_c = client
        .control
        .as_ref()
        .ok_or_else(|| FedError::Protocol(format!("party {} has no control variate", client.party_id)))?;
    let (update, new_c) = scaffold_update(objective, w_t, server_c, client_c, party, cfg, c_update, round)?;
    if update.diverged {
        return Err(FedError::Divergence {
            party: party.party_id,
            round,
        });
    }
    Ok((update, new_c))
}

fn sorted_updates(updates: &[LocalUpdate]) -> Result<Vec<&LocalUpdate>> {
    if updates.is_empty() {
        return Err(FedError::Protocol("no local updates to aggregate".into()));
    }
    let mut sorted: Vec<&LocalUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.party_id);
    Ok(sorted)
}

/// `w − server_lr · Σ coef_i · Δ_i`, in the given order. A lone update with
/// unit coefficient and unit server rate yields the party's model exactly.
fn apply_aggregate(w_t: &ParamVector, updates: &[&LocalUpdate], coefs: &[f64], server_lr: f64) -> Result<ParamVector> {
    for u in updates {
        w_t.check_same_shape(&u.delta, "local update")?;
    }
    if updates.len() == 1 && coefs[0] == 1.0 && server_lr == 1.0 {
        return Ok(updates[0].local_params.clone());
    }
    let mut step = vec![0.0; w_t.len()];
    for (u, &coef) in updates.iter().zip(coefs) {
        for (s, &d) in step.iter_mut().zip(u.delta.values()) {
            *s += coef * d;
        }
    }
    let values = w_t
        .values()
        .iter()
        .zip(&step)
        .map(|(&w, &s)| w - server_lr * s)
        .collect();
    ParamVector::new(w_t.shapes().to_vec(), values)
}

/// FedAvg/FedProx aggregation: `w − η_s · Σ (|D^i| / n) · Δw_i`.
pub fn aggregate_weighted(w_t: &ParamVector, updates: &[LocalUpdate], server_lr: f64) -> Result<ParamVector> {
    let sorted = sorted_updates(updates)?;
    let n: usize = sorted.iter().map(|u| u.n_samples).sum();
    if n == 0 {
        return Err(FedError::Protocol("sampled parties hold no data".into()));
    }
    let coefs: Vec<f64> = sorted.iter().map(|u| u.n_samples as f64 / n as f64).collect();
    apply_aggregate(w_t, &sorted, &coefs, server_lr)
}

/// FedNova aggregation:
/// `w − η_s · (Σ |D^i| τ_i / n) · Σ |D^i| Δw_i / (n τ_i)`.
///
/// The per-party coefficient `(Σ_j |D^j| τ_j) · |D^i| / (n² τ_i)` is formed
/// from exact integers and rounded once, so equal `τ` reproduces the
/// weighted coefficients bit for bit.
pub fn aggregate_fednova(w_t: &ParamVector, updates: &[LocalUpdate], server_lr: f64) -> Result<ParamVector> {
    let sorted = sorted_updates(updates)?;
    if let Some(u) = sorted.iter().find(|u| u.tau == 0) {
        return Err(FedError::Protocol(format!("party {} reported zero local steps", u.party_id)));
    }
    let n: u128 = sorted.iter().map(|u| u.n_samples as u128).sum();
    if n == 0 {
        return Err(FedError::Protocol("sampled parties hold no data".into()));
    }
    let tau_eff: u128 = sorted.iter().map(|u| u.n_samples as u128 * u.tau as u128).sum();
    let coefs: Vec<f64> = sorted
        .iter()
        .map(|u| {
            let num = tau_eff * u.n_samples as u128;
            let den = n * n * u.tau as u128;
            ratio(num, den)
        })
        .collect();
    apply_aggregate(w_t, &sorted, &coefs, server_lr)
}

/// `num / den` correctly rounded when both fit in 53 bits after reduction.
fn ratio(num: u128, den: u128) -> f64 {
    let g = gcd(num, den);
    let (num, den) = (num / g.max(1), den / g.max(1));
    num as f64 / den as f64
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// SCAFFOLD server step: weighted model aggregation and
/// `c ← c + (1/N) · Σ_{i ∈ S_t} Δc_i` with `N` the total party count.
pub fn aggregate_scaffold(
    global: &GlobalState,
    updates: &[LocalUpdate],
    n_parties: usize,
    server_lr: f64,
) -> Result<GlobalState> {
    let control = global
        .control
        .as_ref()
        .ok_or_else(|| FedError::Protocol("global state has no control variate".into()))?;
    let sorted = sorted_updates(updates)?;
    if n_parties == 0 {
        return Err(FedError::Protocol("total party count must be positive".into()));
    }
    let mut sum = vec![0.0; control.len()];
    for u in &sorted {
        let dc = u
            .delta_control
            .as_ref()
            .ok_or_else(|| FedError::Protocol(format!("party {} sent no control delta", u.party_id)))?;
        control.check_same_shape(dc, "control delta")?;
        for (s, &d) in sum.iter_mut().zip(dc.values()) {
            *s += d;
        }
    }
    let values = control
        .values()
        .iter()
        .zip(&sum)
        .map(|(&c, &s)| c + s / n_parties as f64)
        .collect();
    Ok(GlobalState {
        round: global.round + 1,
        params: aggregate_weighted(&global.params, updates, server_lr)?,
        control: Some(ParamVector::new(control.shapes().to_vec(), values)?),
    })
}

/// Bytes moved in one round: model down and update up per sampled party,
/// doubled for SCAFFOLD whose control variates travel alongside.
pub fn round_bytes(algorithm: &Algorithm, n_sampled: usize, n_params: usize) -> u64 {
    let base = 2 * n_sampled as u64 * 8 * n_params as u64;
    if algorithm.is_scaffold() {
        2 * base
    } else {
        base
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub state: GlobalState,
    pub updates: Vec<LocalUpdate>,
    pub bytes: u64,
}

impl RoundOutcome {
    /// Sample-weighted mean of every finite local minibatch loss in the round.
    pub fn mean_train_loss(&self) -> Option<f64> {
        let w: usize = self.updates.iter().map(|u| u.loss_weight).sum();
        (w > 0).then(|| self.updates.iter().map(|u| u.loss_sum).sum::<f64>() / w as f64)
    }

    pub fn diverged(&self) -> bool {
        self.updates.iter().any(|u| u.diverged)
    }
}

/// One communication round. Local training runs on the ambient rayon pool.
/// `clients` is indexed by party id and receives refreshed SCAFFOLD control
/// variates. Diverged parties contribute their last finite model.
pub fn run_round<O: Objective + ?Sized>(
    objective: &O,
    state: &GlobalState,
    clients: &mut [ClientState],
    parties: &[PartyView],
    cfg: &FedRunConfig,
) -> Result<RoundOutcome> {
    cfg.validate()?;
    if parties.len() != cfg.parties || clients.len() != cfg.parties {
        return Err(FedError::Config(format!(
            "{} party views and {} client states for {} parties",
            parties.len(),
            clients.len(),
            cfg.parties
        )));
    }
    let round = state.round;
    let sampled = sample_parties(cfg.parties, cfg.sample_fraction, round, cfg.master_seed);
    let w_t = &state.params;

    let results: Vec<(LocalUpdate, Option<ParamVector>)> = sampled
        .par_iter()
        .map(|&p| -> Result<_> {
            let party = &parties[p];
            match cfg.algorithm {
                Algorithm::Scaffold { c_update } => {
                    let server_c = state
                        .control
                        .as_ref()
                        .ok_or_else(|| FedError::Protocol("SCAFFOLD state lacks c".into()))?;
                    let client_c = clients[p]
                        .control
                        .as_ref()
                        .ok_or_else(|| FedError::Protocol(format!("party {p} lacks c_i")))?;
                    let (u, c) = scaffold_update(objective, w_t, server_c, client_c, party, cfg, c_update, round)?;
                    Ok((u, Some(c)))
                }
                alg => {
                    let traj = run_local_sgd(objective, w_t, party, cfg, alg.prox_mu(), None, round)?;
                    Ok((into_update(w_t, party, traj)?, None))
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut updates = Vec::with_capacity(results.len());
    for (u, new_c) in results {
        if let Some(c) = new_c {
            clients[u.party_id].control = Some(c);
        }
        updates.push(u);
    }

    let next = match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx { .. } => GlobalState {
            round: round + 1,
            params: aggregate_weighted(w_t, &updates, cfg.server_lr)?,
            control: None,
        },
        Algorithm::FedNova => GlobalState {
            round: round + 1,
            params: aggregate_fednova(w_t, &updates, cfg.server_lr)?,
            control: None,
        },
        Algorithm::Scaffold { .. } => aggregate_scaffold(state, &updates, cfg.parties, cfg.server_lr)?,
    };
    Ok(RoundOutcome {
        bytes: round_bytes(&cfg.algorithm, sampled.len(), w_t.len()),
        state: next,
        updates,
    })
}

/// Result row for one round; round 0 describes the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub test_accuracy: f64,
    /// `None` when no party completed a finite step.
    pub mean_train_loss: Option<f64>,
    pub bytes: u64,
    pub wall_ms: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_state: GlobalState,
}

/// Partition, initialize from `master_seed`, run `rounds` rounds, and
/// evaluate test accuracy after each.
pub fn run_experiment(
    train: &LabeledDataset,
    test: &LabeledDataset,
    partition_spec: &PartitionSpec,
    arch: &MlpArch,
    cfg: &FedRunConfig,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if arch.input_dim() != train.n_features() || arch.output_dim() != train.n_classes() {
        return Err(FedError::Config(format!(
            "architecture {:?} does not fit {} features / {} classes",
            arch.layer_dims(),
            train.n_features(),
            train.n_classes()
        )));
    }
    let (_, parties) = partition::materialize(train, partition_spec, cfg.parties, cfg.master_seed)?;
    let params = nn::init_mlp(arch, cfg.master_seed);
    let mut clients: Vec<ClientState> = (0..cfg.parties)
        .map(|p| ClientState::new(p, &params, &cfg.algorithm))
        .collect();
    let mut state = GlobalState::new(params, &cfg.algorithm);

    let start = Instant::now();
    let mut initial_loss = 0.0;
    for p in &parties {
        initial_loss += nn::dataset_loss(&state.params, arch, &p.data)? * p.len() as f64;
    }
    let mut records = vec![RoundRecord {
        round: 0,
        test_accuracy: nn::predict_accuracy(&state.params, arch, test)?,
        mean_train_loss: Some(initial_loss / train.len() as f64),
        bytes: 0,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        diverged: false,
    }];

    for _ in 0..cfg.rounds {
        let t0 = Instant::now();
        let outcome = run_round(arch, &state, &mut clients, &parties, cfg)?;
        // a model whose logits overflow scores zero and marks the round diverged
        let (accuracy, blown_up) = match nn::predict_accuracy(&outcome.state.params, arch, test) {
            Ok(a) => (a, false),
            Err(FedError::Numeric(_)) => (0.0, true),
            Err(e) => return Err(e),
        };
        records.push(RoundRecord {
            round: outcome.state.round,
            test_accuracy: accuracy,
            mean_train_loss: outcome.mean_train_loss(),
            bytes: outcome.bytes,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            diverged: outcome.diverged() || blown_up,
        });
        state = outcome.state;
    }
    Ok(ExperimentResult {
        records,
        final_state: state,
    })
}
