//! Synchronous round engine.
//!
//! Every round starts by freezing a [`RoundSnapshot`] of all client models.
//! Each active client then, reading only the snapshot: selects peers,
//! scores them, updates its beliefs, merges the snapshot models, trains the
//! merged model locally, and checks its validation metric. Clients work
//! independently, so the per-client steps run on the rayon pool; every
//! client draws from its own `(seed, run, round, client)` stream, which
//! makes results independent of scheduling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{fedavg_weights, fedsim_weights, merge, shift_cosine, AggregationRule};
use crate::datasets::{ClientData, ShiftScenario, SplitSizes};
use crate::error::{Error, Result};
use crate::models::{accuracy, mean_risk, train_epochs, ModelKind, OptimizerKind, OptimizerState};
use crate::params::ParamVector;
use crate::reporting::{CommMatrix, ExperimentResult, RunOutcome};
use crate::rng::{derive_seed, stream, Stream};
use crate::selection::{select, update_beliefs, PeerBeliefs, SelectionPolicy};
use crate::similarity::{similarity, CostLedger, CostTotals, PeerView};

/// Base seeds of the three independent random sources of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub sampling: u64,
}

impl Seeds {
    pub fn offset(self, k: u64) -> Seeds {
        Seeds {
            data: self.data.wrapping_add(k),
            init: self.init.wrapping_add(k),
            sampling: self.sampling.wrapping_add(k),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            data: 1,
            init: 2,
            sampling: 3,
        }
    }
}

/// Which weights a client is evaluated with at the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalModel {
    /// The weights the client holds after the last round (its restored best
    /// checkpoint if it stopped early).
    Last,
    /// The best-validation checkpoint, whether or not the client stopped.
    BestValidation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ShiftScenario,
    pub split: SplitSizes,
    pub model: ModelKind,
    pub policy: SelectionPolicy,
    pub rule: AggregationRule,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub num_neighbors: usize,
    /// Patience in rounds; `None` disables early stopping.
    pub early_stopping_rounds: Option<usize>,
    /// Minibatch size; `None` takes one full-batch step per epoch.
    pub batch_size: Option<usize>,
    pub seeds: Seeds,
    pub shared_init: bool,
    pub num_runs: usize,
    pub final_model: FinalModel,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let k = self.scenario.num_clients();
        if self.rounds == 0 || self.local_epochs == 0 || self.num_runs == 0 {
            return Err(Error::invalid("rounds, local_epochs and num_runs must be >= 1"));
        }
        if self.num_neighbors == 0 || self.num_neighbors >= k {
            return Err(Error::invalid(format!(
                "num_neighbors must lie in 1..={} for {k} clients",
                k.saturating_sub(1)
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if let SelectionPolicy::SimilaritySoftmax { tau, .. } = self.policy {
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(Error::invalid("tau must be finite and >= 0"));
            }
        }
        if self.rule == AggregationRule::FedSim && self.policy.metric().is_none() {
            return Err(Error::invalid(format!(
                "the {} policy has no similarity metric to weight a fedsim merge",
                self.policy.label()
            )));
        }
        if self.batch_size == Some(0) || self.early_stopping_rounds == Some(0) {
            return Err(Error::invalid("batch_size and early_stopping_rounds must be >= 1 when set"));
        }
        if self.split.train == 0 || self.split.validation == 0 || self.split.test == 0 {
            return Err(Error::invalid("every split needs at least one sample"));
        }
        let (dim, classes) = self.scenario.shape();
        let ok = match (self.model, classes) {
            (ModelKind::LinearRegressor { dim: d }, None) => d == dim,
            (ModelKind::MlpClassifier { input, classes: c, .. }, Some(n)) => input == dim && c == n,
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(format!(
                "model {:?} does not fit the scenario (input {dim}, classes {classes:?})",
                self.model
            )));
        }
        Ok(())
    }
}

/// Direction in which the validation metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationGoal {
    Minimize,
    Maximize,
}

impl ValidationGoal {
    pub fn for_model(model: &ModelKind) -> Self {
        if model.is_classifier() {
            ValidationGoal::Maximize
        } else {
            ValidationGoal::Minimize
        }
    }

    fn worst(self) -> f64 {
        match self {
            ValidationGoal::Minimize => f64::INFINITY,
            ValidationGoal::Maximize => f64::NEG_INFINITY,
        }
    }

    fn improves(self, new: f64, best: f64) -> bool {
        match self {
            ValidationGoal::Minimize => new < best,
            ValidationGoal::Maximize => new > best,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub cluster_id: usize,
    pub params: Arc<ParamVector>,
    pub init: Arc<ParamVector>,
    pub data: Arc<ClientData>,
    pub optimizer: OptimizerState,
    pub beliefs: PeerBeliefs,
    pub early_stopped: bool,
    pub best_val_metric: f64,
    pub best_params: Arc<ParamVector>,
    pub rounds_since_improvement: usize,
}

impl ClientState {
    pub fn new(
        id: usize,
        num_clients: usize,
        data: ClientData,
        init: ParamVector,
        optimizer: OptimizerState,
        goal: ValidationGoal,
    ) -> Self {
        let init = Arc::new(init);
        ClientState {
            id,
            cluster_id: data.cluster_id,
            params: init.clone(),
            best_params: init.clone(),
            init,
            data: Arc::new(data),
            optimizer,
            beliefs: PeerBeliefs::new(id, num_clients),
            early_stopped: false,
            best_val_metric: goal.worst(),
            rounds_since_improvement: 0,
        }
    }
}

/// Records `val_metric` and returns whether the client stops now, i.e. has
/// gone `patience` consecutive rounds without improving. On stop the best
/// checkpoint is restored into `params`.
pub fn evaluate_early_stopping(
    client: &mut ClientState,
    val_metric: f64,
    goal: ValidationGoal,
    patience: usize,
) -> bool {
    if goal.improves(val_metric, client.best_val_metric) {
        client.best_val_metric = val_metric;
        client.best_params = client.params.clone();
        client.rounds_since_improvement = 0;
        return false;
    }
    client.rounds_since_improvement += 1;
    if client.rounds_since_improvement >= patience {
        client.early_stopped = true;
        client.params = client.best_params.clone();
        return true;
    }
    false
}

/// Read-only view of every client at the start of a round.
#[derive(Debug, Clone)]
pub struct RoundSnapshot {
    pub params: Vec<Arc<ParamVector>>,
    pub init: Vec<Arc<ParamVector>>,
    pub data: Vec<Arc<ClientData>>,
}

impl RoundSnapshot {
    pub fn capture(states: &[ClientState]) -> Self {
        RoundSnapshot {
            params: states.iter().map(|s| s.params.clone()).collect(),
            init: states.iter().map(|s| s.init.clone()).collect(),
            data: states.iter().map(|s| s.data.clone()).collect(),
        }
    }

    fn view(&self, j: usize) -> PeerView<'_> {
        PeerView {
            params: &self.params[j],
            init: &self.init[j],
            train: &self.data[j].train,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Peers sampled by each client; `None` for clients already stopped.
    pub sampled: Vec<Option<Vec<usize>>>,
    /// Validation metric of each client that stepped this round.
    pub validation: Vec<Option<f64>>,
    pub cost: CostTotals,
}

impl RoundLog {
    pub fn active_clients(&self) -> usize {
        self.sampled.iter().filter(|s| s.is_some()).count()
    }

    pub fn mean_validation(&self) -> Option<f64> {
        let vals: Vec<f64> = self.validation.iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Everything a client step needs besides its own state.
pub struct RoundContext<'a> {
    pub config: &'a RunConfig,
    pub snapshot: &'a RoundSnapshot,
    pub cluster_ids: &'a [usize],
    pub ledger: &'a CostLedger,
    pub run: usize,
    pub round: usize,
}

fn validation_metric(model: &ModelKind, w: &[f64], data: &ClientData) -> Result<f64> {
    if model.is_classifier() {
        accuracy(model, w, &data.validation)
    } else {
        mean_risk(model, w, &data.validation)
    }
}

/// One client's share of a round. Returns the sampled peers and the new
/// validation metric, or `None` if the client had already stopped.
pub fn step_client(
    state: &mut ClientState,
    ctx: &RoundContext<'_>,
) -> Result<Option<(Vec<usize>, f64)>> {
    if state.early_stopped {
        return Ok(None);
    }
    let cfg = ctx.config;
    let i = state.id;
    let key = [ctx.run as u64, ctx.round as u64, i as u64];
    let mut sampling_rng = stream(cfg.seeds.sampling, Stream::Sampling, &key);

    let peers = select(
        &cfg.policy,
        &state.beliefs,
        ctx.cluster_ids,
        cfg.num_neighbors,
        &mut sampling_rng,
    )?;

    let mut scores = Vec::new();
    if let SelectionPolicy::SimilaritySoftmax { metric, tau } = cfg.policy {
        let me = ctx.snapshot.view(i);
        scores = peers
            .iter()
            .map(|&j| similarity(metric, &cfg.model, me, ctx.snapshot.view(j), ctx.ledger))
            .collect::<Result<Vec<f64>>>()?;
        let observations: Vec<(usize, f64)> = peers.iter().copied().zip(scores.iter().copied()).collect();
        update_beliefs(&mut state.beliefs, &observations, tau)?;
    }

    let weights = match cfg.rule {
        AggregationRule::FedAvg => {
            let sizes: Vec<usize> = peers.iter().map(|&j| ctx.snapshot.data[j].train.len()).collect();
            fedavg_weights(ctx.snapshot.data[i].train.len(), &sizes)?
        }
        AggregationRule::FedSim => {
            let cosine = cfg.policy.metric().is_some_and(|m| m.is_cosine());
            let shifted: Vec<f64> = scores
                .iter()
                .map(|&s| if cosine { shift_cosine(s) } else { s })
                .collect();
            fedsim_weights(&shifted)?
        }
    };
    let models: Vec<&[f64]> = std::iter::once(i)
        .chain(peers.iter().copied())
        .map(|j| ctx.snapshot.params[j].as_slice())
        .collect();
    let mut w = merge(&models, &weights)?;

    let mut train_rng = stream(cfg.seeds.sampling, Stream::Training, &key);
    train_epochs(
        &cfg.model,
        &mut w,
        &state.data.train,
        &mut state.optimizer,
        cfg.local_epochs,
        cfg.batch_size,
        &mut train_rng,
    )?;
    if !w.is_finite() {
        return Err(Error::invalid(format!(
            "client {i} diverged to non-finite weights in round {}",
            ctx.round
        )));
    }
    state.params = Arc::new(w);

    let val = validation_metric(&cfg.model, &state.params, &state.data)?;
    let goal = ValidationGoal::for_model(&cfg.model);
    match cfg.early_stopping_rounds {
        Some(patience) => {
            evaluate_early_stopping(state, val, goal, patience);
        }
        None => {
            if goal.improves(val, state.best_val_metric) {
                state.best_val_metric = val;
                state.best_params = state.params.clone();
            }
        }
    }
    Ok(Some((peers, val)))
}

/// Runs round `round` (1-based) for every client against a snapshot taken
/// on entry.
pub fn run_round(
    states: &mut [ClientState],
    config: &RunConfig,
    cluster_ids: &[usize],
    ledger: &CostLedger,
    run: usize,
    round: usize,
) -> Result<RoundLog> {
    let snapshot = RoundSnapshot::capture(states);
    let before = ledger.totals();
    let ctx = RoundContext {
        config,
        snapshot: &snapshot,
        cluster_ids,
        ledger,
        run,
        round,
    };
    let outcomes: Vec<Option<(Vec<usize>, f64)>> = states
        .par_iter_mut()
        .map(|s| step_client(s, &ctx))
        .collect::<Result<_>>()?;
    let (sampled, validation) = outcomes
        .into_iter()
        .map(|o| match o {
            Some((p, v)) => (Some(p), Some(v)),
            None => (None, None),
        })
        .unzip();
    Ok(RoundLog {
        round,
        sampled,
        validation,
        cost: ledger.totals() - before,
    })
}

/// Builds the clients of run `run`: data, initial weights, optimizers.
pub fn init_clients(config: &RunConfig, run: usize) -> Result<Vec<ClientState>> {
    config.validate()?;
    let data_seed = derive_seed(config.seeds.data, &[run as u64]);
    let clients = config.scenario.generate(config.split, data_seed)?;
    let k = clients.len();
    let p = config.model.num_params();
    let goal = ValidationGoal::for_model(&config.model);
    let shared = config
        .shared_init
        .then(|| config.model.init_params(&mut stream(config.seeds.init, Stream::Init, &[run as u64])));
    Ok(clients
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let init = match &shared {
                Some(w) => w.clone(),
                None => config
                    .model
                    .init_params(&mut stream(config.seeds.init, Stream::Init, &[run as u64, i as u64])),
            };
            let opt = OptimizerState::new(config.optimizer, config.learning_rate, p);
            ClientState::new(i, k, data, init, opt, goal)
        })
        .collect())
}

/// Final test metric of one client: MSE for regression, accuracy in
/// percent for classification.
pub fn test_metric(model: &ModelKind, w: &[f64], data: &ClientData) -> Result<f64> {
    if model.is_classifier() {
        Ok(100.0 * accuracy(model, w, &data.test)?)
    } else {
        mean_risk(model, w, &data.test)
    }
}

/// One complete run: `T` rounds, stopping early once every client stopped.
pub fn run_once(config: &RunConfig, run: usize) -> Result<RunOutcome> {
    let mut states = init_clients(config, run)?;
    let k = states.len();
    let cluster_ids: Vec<usize> = states.iter().map(|s| s.cluster_id).collect();
    let ledger = CostLedger::new();
    let mut comm = CommMatrix::new(k);
    let mut trace = Vec::with_capacity(config.rounds);
    let mut stopped_round = vec![None; k];
    for round in 1..=config.rounds {
        let log = run_round(&mut states, config, &cluster_ids, &ledger, run, round)?;
        for (i, peers) in log.sampled.iter().enumerate() {
            if let Some(peers) = peers {
                for &j in peers {
                    comm.record(i, j);
                }
                if states[i].early_stopped {
                    stopped_round[i] = Some(round);
                }
            }
        }
        match log.mean_validation() {
            Some(v) => trace.push(v),
            None => break,
        }
    }
    let client_metrics = states
        .par_iter()
        .map(|s| {
            let w = match config.final_model {
                FinalModel::Last => &s.params,
                FinalModel::BestValidation => &s.best_params,
            };
            test_metric(&config.model, w, &s.data)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RunOutcome::new(
        client_metrics,
        &cluster_ids,
        config.scenario.num_clusters(),
        comm,
        ledger.totals(),
        trace,
        stopped_round,
    ))
}

/// Runs `config.num_runs` independent repetitions and summarises them.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let runs = (0..config.num_runs)
        .map(|r| run_once(config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult::from_runs(config, runs))
}
