//! Round-based federated state machine: client sampling, per-client
//! personalization and local SGD probes, server aggregation and broadcast,
//! with stale-update reuse under partial participation.
//!
//! Per-round client work is order-independent (every consumer draws from
//! its own keyed RNG stream) and runs in parallel; results are applied and
//! aggregated in ascending client order so schedules cannot change output.

use std::sync::Arc;

use rayon::prelude::*;

use crate::baselines;
use crate::data::{LabeledDataset, SplitPlan};
use crate::error::{Error, Result};
use crate::metrics::{record_round, BestAccuracyTable, ClientRecord, RoundMetrics};
use crate::models::{self, ModelSpec};
use crate::numkit::{ParamVector, RngStream};
use crate::pfedsop::personalize_model;

/// Training method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PFedSop,
    /// Ablation: the personalization step is removed entirely; clients
    /// continue plain local SGD from their own previous post-SGD model,
    /// while the server still aggregates deltas for reporting parity.
    PFedSopNoPc,
    FedAvg,
    FedProx,
    FedAvgFt,
    FedProxFt,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PFedSop => "pfedsop",
            Method::PFedSopNoPc => "pfedsop_no_pc",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedAvgFt => "fedavg_ft",
            Method::FedProxFt => "fedprox_ft",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "pfedsop" => Some(Method::PFedSop),
            "pfedsop_no_pc" => Some(Method::PFedSopNoPc),
            "fedavg" => Some(Method::FedAvg),
            "fedprox" => Some(Method::FedProx),
            "fedavg_ft" => Some(Method::FedAvgFt),
            "fedprox_ft" => Some(Method::FedProxFt),
            _ => None,
        }
    }
}

/// Which model a participating client's test accuracy is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPoint {
    /// The client's model right after personalization / broadcast, before
    /// the local SGD probe (fine-tuning methods always evaluate their
    /// fine-tuned copy instead).
    Personalized,
    /// The endpoint of the local SGD probe.
    PostSgd,
}

impl EvalPoint {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalPoint::Personalized => "personalized",
            EvalPoint::PostSgd => "post_sgd",
        }
    }

    pub fn parse(s: &str) -> Option<EvalPoint> {
        match s {
            "personalized" => Some(EvalPoint::Personalized),
            "post_sgd" => Some(EvalPoint::PostSgd),
            _ => None,
        }
    }
}

/// All tunables of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub method: Method,
    /// Personalization learning rate.
    pub eta1: f64,
    /// Local SGD learning rate.
    pub eta2: f64,
    /// Curvature regularizer.
    pub rho: f64,
    /// Gompertz steepness.
    pub lambda: f64,
    /// Proximal weight (FedProx variants).
    pub mu: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub participation_fraction: f64,
    pub rounds: u64,
    pub ft_epochs: usize,
    pub eval_point: EvalPoint,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            method: Method::PFedSop,
            eta1: 1.0,
            eta2: 0.1,
            rho: 1.0,
            lambda: 1.0,
            mu: 0.1,
            local_epochs: 1,
            batch_size: 50,
            participation_fraction: 0.2,
            rounds: 1,
            ft_epochs: 1,
            eval_point: EvalPoint::Personalized,
            seed: 0,
        }
    }
}

impl HyperParams {
    /// Check range constraints; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        fn positive(name: &'static str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::parameter(name, format!("must be > 0, got {v}")))
            }
        }
        positive("eta1", self.eta1)?;
        positive("eta2", self.eta2)?;
        positive("rho", self.rho)?;
        positive("lambda", self.lambda)?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::parameter("mu", format!("must be >= 0, got {}", self.mu)));
        }
        if self.local_epochs == 0 {
            return Err(Error::parameter("local_epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::parameter("batch_size", "must be >= 1"));
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            return Err(Error::parameter(
                "participation_fraction",
                format!("must lie in (0, 1], got {}", self.participation_fraction),
            ));
        }
        if self.rounds == 0 {
            return Err(Error::parameter("rounds", "must be >= 1"));
        }
        let mut warnings = Vec::new();
        let ratio = self.rho / self.eta1;
        if !(1e-3..=1e3).contains(&ratio) {
            warnings.push(format!(
                "rho/eta1 = {ratio:.3e} is far from 1; extreme ratios can destabilize the \
                 second-order step"
            ));
        }
        Ok(warnings)
    }
}

/// Server-side state shared across rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Shared random initialization handed to clients on first participation.
    pub init_model: ParamVector,
    /// Global model trajectory (used by the FedAvg/FedProx family).
    pub global_model: ParamVector,
    /// Mean of the most recently completed round's deltas.
    pub global_delta: Option<ParamVector>,
    pub round: u64,
}

impl ServerState {
    pub fn new(init_model: ParamVector) -> Self {
        Self {
            global_model: init_model.clone(),
            init_model,
            global_delta: None,
            round: 0,
        }
    }
}

/// Per-client state carried across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// The client's persistent model (personalized model under pfedsop,
    /// previous probe endpoint under the no-personalization ablation).
    pub model: ParamVector,
    /// Latest local gradient update; present iff the client has
    /// participated at least once. Kept indefinitely while absent.
    pub last_delta: Option<ParamVector>,
    pub last_round_seen: Option<u64>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

impl ClientState {
    pub fn new(id: usize, model: ParamVector, train_rows: Vec<usize>, test_rows: Vec<usize>) -> Self {
        Self {
            id,
            model,
            last_delta: None,
            last_round_seen: None,
            train_rows,
            test_rows,
        }
    }
}

/// A local training problem: loss/gradient over selected dataset rows plus
/// an evaluation view. Implementations must be pure so per-client work can
/// run concurrently.
pub trait LocalObjective: Sync {
    fn dim(&self) -> usize;

    /// Mean loss and gradient over the given rows.
    fn loss_and_grad(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, ParamVector)>;

    /// (accuracy, mean loss) over the given rows.
    fn evaluate(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, f64)>;
}

/// Softmax classifier over a shared dataset.
#[derive(Debug, Clone)]
pub struct ClassifierObjective {
    pub spec: ModelSpec,
    pub data: Arc<LabeledDataset>,
}

impl LocalObjective for ClassifierObjective {
    fn dim(&self) -> usize {
        self.spec.parameter_count()
    }

    fn loss_and_grad(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, ParamVector)> {
        models::loss_and_gradient(&self.spec, params, &self.data.batch(rows))
    }

    fn evaluate(&self, params: &ParamVector, rows: &[usize]) -> Result<(f64, f64)> {
        models::evaluate(&self.spec, params, &self.data.batch(rows))
    }
}

/// `P(x) = 0.5 * ||x||^2` with gradient `x`, independent of the data rows.
/// Used for hand-traceable convergence checks.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub dim: usize,
}

impl LocalObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss_and_grad(&self, params: &ParamVector, _rows: &[usize]) -> Result<(f64, ParamVector)> {
        let loss = 0.5 * params.dot(params)?;
        Ok((loss, params.clone()))
    }

    fn evaluate(&self, params: &ParamVector, _rows: &[usize]) -> Result<(f64, f64)> {
        let loss = 0.5 * params.dot(params)?;
        Ok((0.0, loss))
    }
}

/// Uniform sample of `round(fraction * total)` distinct client ids (at
/// least one), returned in ascending order.
pub fn sample_clients(total: usize, fraction: f64, rng: &mut RngStream) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::parameter("clients", "must be >= 1"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::parameter(
            "participation_fraction",
            format!("must lie in (0, 1], got {fraction}"),
        ));
    }
    let count = ((fraction * total as f64).round() as usize).clamp(1, total);
    let mut ids: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = i + rng.below(total - i);
        ids.swap(i, j);
    }
    ids.truncate(count);
    ids.sort_unstable();
    Ok(ids)
}

/// Result of one local SGD probe.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    /// `(x_start - x_final) / eta2`; equals the sum of the per-step
    /// gradients up to floating-point rounding.
    pub delta: ParamVector,
    pub x_final: ParamVector,
    /// Mean of the first epoch's batch losses, each taken at pre-step
    /// parameters.
    pub mean_loss: f64,
}

/// Mini-batch SGD probe from `x_start`: `local_epochs` shuffled passes,
/// short final batches kept. `prox` optionally adds `mu * (x - anchor)`
/// to every step's gradient.
pub fn local_gradient_update<O: LocalObjective + ?Sized>(
    obj: &O,
    x_start: &ParamVector,
    train_rows: &[usize],
    h: &HyperParams,
    prox: Option<(&ParamVector, f64)>,
    rng: &mut RngStream,
) -> Result<LocalUpdate> {
    if train_rows.is_empty() {
        return Err(Error::Data("client has no training samples".into()));
    }
    let mut x = x_start.clone();
    let mut rows = train_rows.to_vec();
    let mut first_epoch_loss = 0.0;
    let mut first_epoch_batches = 0usize;
    for epoch in 0..h.local_epochs {
        rng.shuffle(&mut rows);
        for batch_rows in rows.chunks(h.batch_size) {
            let (loss, mut grad) = obj.loss_and_grad(&x, batch_rows)?;
            if let Some((anchor, mu)) = prox {
                if mu != 0.0 {
                    grad.add_scaled(&x.sub(anchor)?, mu)?;
                }
            }
            if epoch == 0 {
                first_epoch_loss += loss;
                first_epoch_batches += 1;
            }
            x.add_scaled(&grad, -h.eta2)?;
        }
    }
    let delta = x_start.sub(&x)?.scale(1.0 / h.eta2);
    Ok(LocalUpdate {
        delta,
        x_final: x,
        mean_loss: first_epoch_loss / first_epoch_batches as f64,
    })
}

/// Arithmetic mean of matched-length updates.
pub fn aggregate_updates(deltas: &[ParamVector]) -> Result<ParamVector> {
    let first = deltas
        .first()
        .ok_or_else(|| Error::Protocol("no updates to aggregate".into()))?;
    let mut sum = ParamVector::zeros(first.len());
    for d in deltas {
        sum.add_scaled(d, 1.0)?;
    }
    Ok(sum.scale(1.0 / deltas.len() as f64))
}

struct ClientOutcome {
    id: usize,
    new_model: ParamVector,
    delta: ParamVector,
    train_loss: f64,
    test_accuracy: f64,
    theta: Option<f64>,
    beta: Option<f64>,
}

fn run_client<O: LocalObjective>(
    server: &ServerState,
    client: &ClientState,
    obj: &O,
    h: &HyperParams,
    round: u64,
) -> Result<ClientOutcome> {
    let policy = baselines::policy_for(h.method);
    let is_new = client.last_delta.is_none();

    let (start, report) = match h.method {
        Method::PFedSop => {
            if is_new {
                (server.init_model.clone(), None)
            } else {
                let local = client.last_delta.as_ref().unwrap();
                let global = server.global_delta.as_ref().ok_or_else(|| {
                    Error::Protocol(format!(
                        "client {} holds a local update but no global update exists",
                        client.id
                    ))
                })?;
                let (x, rep) =
                    personalize_model(&client.model, local, global, h.eta1, h.rho, h.lambda)?;
                (x, Some(rep))
            }
        }
        Method::PFedSopNoPc => {
            if is_new {
                (server.init_model.clone(), None)
            } else {
                (client.model.clone(), None)
            }
        }
        _ => (server.global_model.clone(), None),
    };

    let anchor_storage;
    let prox = if policy.proximal {
        anchor_storage = start.clone();
        Some((&anchor_storage, h.mu))
    } else {
        None
    };

    let mut sgd_rng = RngStream::new(h.seed, "sgd", client.id as u64, round);
    let update = local_gradient_update(obj, &start, &client.train_rows, h, prox, &mut sgd_rng)?;

    let test_accuracy = if policy.fine_tune {
        let mut ft_rng = RngStream::new(h.seed, "finetune", client.id as u64, round);
        let (acc, _) = baselines::fine_tune_then_eval(
            obj,
            &start,
            &client.train_rows,
            &client.test_rows,
            h.ft_epochs,
            h.batch_size,
            h.eta2,
            &mut ft_rng,
        )?;
        acc
    } else {
        let eval_params = match h.eval_point {
            EvalPoint::Personalized => &start,
            EvalPoint::PostSgd => &update.x_final,
        };
        obj.evaluate(eval_params, &client.test_rows)?.0
    };

    let new_model = match h.method {
        Method::PFedSopNoPc => update.x_final.clone(),
        _ => start,
    };

    Ok(ClientOutcome {
        id: client.id,
        new_model,
        delta: update.delta,
        train_loss: update.mean_loss,
        test_accuracy,
        theta: report.as_ref().map(|r| r.theta),
        beta: report.as_ref().map(|r| r.beta),
    })
}

/// One communication round: sample clients, run their personalization +
/// SGD probes (in parallel, order-independent), then aggregate deltas and
/// update the server. Metrics cover the sampled clients only.
pub fn run_round<O: LocalObjective>(
    server: &mut ServerState,
    clients: &mut [ClientState],
    obj: &O,
    h: &HyperParams,
    round: u64,
) -> Result<RoundMetrics> {
    let mut sample_rng = RngStream::new(h.seed, "sample", 0, round);
    let sampled = sample_clients(clients.len(), h.participation_fraction, &mut sample_rng)?;

    let outcomes: Vec<Result<ClientOutcome>> = {
        let shared: &[ClientState] = clients;
        sampled
            .par_iter()
            .map(|&id| run_client(server, &shared[id], obj, h, round))
            .collect()
    };

    let mut records = Vec::with_capacity(sampled.len());
    let mut deltas = Vec::with_capacity(sampled.len());
    for outcome in outcomes {
        let o = outcome?;
        if !o.train_loss.is_finite() || !o.test_accuracy.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at round {round}, client {}",
                o.id
            )));
        }
        records.push(ClientRecord {
            client_id: o.id,
            train_loss: o.train_loss,
            test_accuracy: o.test_accuracy,
            theta: o.theta,
            beta: o.beta,
        });
        let client = &mut clients[o.id];
        client.model = o.new_model;
        client.last_delta = Some(o.delta.clone());
        client.last_round_seen = Some(round);
        deltas.push(o.delta);
    }

    let mean_delta = aggregate_updates(&deltas)?;
    if baselines::policy_for(h.method).global_model {
        server.global_model.add_scaled(&mean_delta, -h.eta2)?;
    }
    server.global_delta = Some(mean_delta);
    server.round = round;
    record_round(round, records)
}

/// Full experiment output: per-round metrics, the best-accuracy table and
/// the final states.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rounds: Vec<RoundMetrics>,
    pub best: BestAccuracyTable,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
}

/// Run `h.rounds` rounds from a shared random initialization. Deterministic
/// given `h.seed`; a zero-round request returns empty metrics and untouched
/// states.
pub fn run_experiment<O: LocalObjective>(
    obj: &O,
    init_model: ParamVector,
    split: &SplitPlan,
    h: &HyperParams,
) -> Result<ExperimentOutput> {
    let mut server = ServerState::new(init_model);
    let mut clients: Vec<ClientState> = split
        .clients
        .iter()
        .enumerate()
        .map(|(id, s)| ClientState::new(id, server.init_model.clone(), s.train.clone(), s.test.clone()))
        .collect();
    let mut rounds = Vec::with_capacity(h.rounds as usize);
    let mut best = BestAccuracyTable::new();
    for round in 1..=h.rounds {
        let metrics = run_round(&mut server, &mut clients, obj, h, round)?;
        best.update(&metrics);
        rounds.push(metrics);
    }
    Ok(ExperimentOutput {
        rounds,
        best,
        server,
        clients,
    })
}
