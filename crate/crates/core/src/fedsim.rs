//! FedDrop rounds: sample clients, hand each a shrunk sub-model, train it
//! locally with SGD, scatter the deltas back and let the server optimizer
//! consume their coverage-weighted mean as a pseudo-gradient.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::index;

use crate::data::{self, Batch, ClientData, Example, FederatedDataset};
use crate::error::{bail, Error, Result};
use crate::exec::Executor;
use crate::feddrop::{self, DropoutConfig, MappingSet};
use crate::nn::{self, Arch, EvalResult, Gradients, ModelParams};
use crate::optim::{self, AdamConfig, AdamState};
use crate::rng::{self, Purpose, Stream};

/// Bytes transferred per parameter in each direction.
pub const BYTES_PER_PARAM: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields))]
pub enum ServerOptimizer {
    Sgd { lr: f64 },
    Adam(AdamConfig),
}

/// How expanded client deltas are combined per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AggregationRule {
    /// Mean over the clients whose sub-model contains the coordinate.
    #[default]
    CoveringMean,
    /// Sum over covering clients divided by the number of reporting clients.
    DivideByK,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FederatedConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub client_lr: f64,
    pub local_steps: usize,
    /// Examples each client contributes per round, and the SGD minibatch size.
    pub batch_size: usize,
    pub server_optimizer: ServerOptimizer,
    pub dropout: DropoutConfig,
    #[cfg_attr(feature = "serde", serde(default))]
    pub aggregation: AggregationRule,
    pub seed: u64,
}

impl FederatedConfig {
    pub fn validate(&self, arch: &Arch) -> Result<()> {
        if self.clients_per_round == 0 {
            bail!(Config, "clients_per_round must be at least 1");
        }
        if self.local_steps == 0 {
            bail!(Config, "local_steps must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if !self.client_lr.is_finite() || self.client_lr <= 0.0 {
            bail!(Config, "client_lr must be positive, got {}", self.client_lr);
        }
        match self.server_optimizer {
            ServerOptimizer::Sgd { lr } if !lr.is_finite() || lr <= 0.0 => {
                bail!(Config, "server sgd lr must be positive, got {lr}")
            }
            ServerOptimizer::Adam(cfg) => cfg.validate()?,
            _ => {}
        }
        self.dropout.validate(arch.num_blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: u64,
    pub eval_error: f64,
    pub eval_loss: f64,
    /// Mean local training loss over participating clients.
    pub train_loss: f64,
    pub client_model_param_count: usize,
    pub bytes_down: u64,
    pub bytes_up: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdateResult {
    /// Slot of the client within its round (indexes the round's mappings).
    pub client: usize,
    /// `initial − final` sub-model parameters.
    pub delta: ModelParams,
    pub train_loss: f64,
}

/// Runs `local_steps` SGD steps on the client's sub-model.
///
/// Each step uses a minibatch of `batch_size` examples drawn without
/// replacement from `data`, or all of `data` when it is not larger.
pub fn client_update(
    client: usize,
    sub_params: &ModelParams,
    data: &[Example],
    client_lr: f64,
    local_steps: usize,
    batch_size: usize,
    rng: &mut Stream,
) -> Result<ClientUpdateResult> {
    if data.is_empty() {
        return Err(Error::EmptyClient(client));
    }
    let full_batch = if data.len() <= batch_size { Some(Batch::from_examples(data)?) } else { None };
    let mut params = sub_params.clone();
    let mut loss_sum = 0.0;
    for _ in 0..local_steps {
        let sampled;
        let batch = match &full_batch {
            Some(b) => b,
            None => {
                let mut idx = index::sample(rng, data.len(), batch_size).into_vec();
                idx.sort_unstable();
                sampled = Batch::from_examples(idx.iter().map(|&i| &data[i]))?;
                &sampled
            }
        };
        let (loss, grads) = nn::loss_and_grads(&params, &batch.features, &batch.labels)?;
        loss_sum += loss;
        optim::sgd_step_in_place(&mut params, &grads, client_lr)?;
    }
    let mut delta = sub_params.clone();
    delta.zip_apply(&params, |d, p| *d -= p)?;
    Ok(ClientUpdateResult { client, delta, train_loss: loss_sum / local_steps as f64 })
}

/// Combines client deltas into a full-shape pseudo-gradient.
///
/// Deltas are expanded with their client's mapping and summed in ascending
/// client order. Coordinates no client covered stay exactly zero.
pub fn aggregate(
    results: &[ClientUpdateResult],
    mappings: &MappingSet,
    arch: &Arch,
    rule: AggregationRule,
) -> Result<Gradients> {
    if results.is_empty() {
        bail!(Round, "no client results to aggregate");
    }
    let mut order: Vec<&ClientUpdateResult> = results.iter().collect();
    order.sort_by_key(|r| r.client);
    let mut sum = ModelParams::zeros(arch);
    let mut coverage = ModelParams::zeros(arch);
    for r in order {
        let Some(mapping) = mappings.mappings.get(r.client) else {
            bail!(Round, "client slot {} has no mapping", r.client);
        };
        let (full, mask) = feddrop::expand(&r.delta, mapping, arch)?;
        sum.zip_apply(&full, |s, d| *s += d)?;
        coverage.zip_apply(mask.tree(), |c, m| *c += m)?;
    }
    match rule {
        AggregationRule::CoveringMean => {
            sum.zip_apply(&coverage, |s, c| *s = if c > 0.0 { *s / c } else { 0.0 })?;
        }
        AggregationRule::DivideByK => {
            let k = results.len() as f64;
            sum.tensors_mut().into_iter().flatten().for_each(|s| *s /= k);
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum ServerOptState {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl ServerOptState {
    pub fn new(opt: &ServerOptimizer, like: &ModelParams) -> Self {
        match *opt {
            ServerOptimizer::Sgd { lr } => ServerOptState::Sgd { lr },
            ServerOptimizer::Adam(cfg) => ServerOptState::Adam(AdamState::new(cfg, like)),
        }
    }
}

/// Server model and optimizer state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ModelParams,
    pub optimizer: ServerOptState,
}

impl ServerState {
    pub fn new(params: ModelParams, opt: &ServerOptimizer) -> Self {
        let optimizer = ServerOptState::new(opt, &params);
        Self { params, optimizer }
    }
}

/// Applies the pseudo-gradient as if it were a gradient.
pub fn server_update(state: &mut ServerState, pseudo_grad: &Gradients) -> Result<()> {
    match &mut state.optimizer {
        ServerOptState::Sgd { lr } => optim::sgd_step_in_place(&mut state.params, pseudo_grad, *lr),
        ServerOptState::Adam(adam) => optim::adam_step(adam, &mut state.params, pseudo_grad),
    }
}

/// Loss and error of `params` on a batch.
pub fn evaluate(params: &ModelParams, batch: &Batch) -> Result<EvalResult> {
    nn::evaluate(params, &batch.features, &batch.labels)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub mappings: MappingSet,
    /// Dataset indices of the sampled clients, by slot.
    pub sampled: Vec<usize>,
}

/// Client dataset indices for `round`, uniformly without replacement.
pub fn sample_clients(seed: u64, round: u64, available: usize, k: usize) -> Result<Vec<usize>> {
    if available < k {
        bail!(Config, "{k} clients per round requested but only {available} available");
    }
    let mut rng = rng::stream(seed, Purpose::ClientSampling, &[round]);
    Ok(index::sample(&mut rng, available, k).into_vec())
}

/// Executes one FedDrop round in place and evaluates the new server model.
pub fn run_round<E: Executor>(
    state: &mut ServerState,
    config: &FederatedConfig,
    clients: &[ClientData],
    eval: &Batch,
    round: u64,
    exec: &E,
) -> Result<RoundOutcome> {
    let arch = state.params.arch();
    let k = config.clients_per_round;
    let sampled = sample_clients(config.seed, round, clients.len(), k)?;
    let mappings = feddrop::generate_mappings(&config.dropout, k, round, &arch)?;
    let params = &state.params;

    let updates = exec.map(k, |slot| -> Result<(ClientUpdateResult, usize)> {
        let sub = feddrop::shrink(params, &mappings.mappings[slot])?;
        let data = &clients[sampled[slot]].examples;
        let mut rng = rng::stream(config.seed, Purpose::ClientTrain, &[round, slot as u64]);
        // Every client contributes the same number of examples per round.
        let round_data: Vec<Example> = if data.len() > config.batch_size {
            let mut idx = index::sample(&mut rng, data.len(), config.batch_size).into_vec();
            idx.sort_unstable();
            idx.iter().map(|&i| data[i].clone()).collect()
        } else {
            data.clone()
        };
        let count = sub.param_count();
        let res =
            client_update(slot, &sub, &round_data, config.client_lr, config.local_steps, config.batch_size, &mut rng)?;
        Ok((res, count))
    });

    let mut results = Vec::with_capacity(k);
    let mut counts = Vec::with_capacity(k);
    for u in updates {
        match u {
            Ok((res, count)) => {
                results.push(res);
                counts.push(count);
            }
            Err(Error::EmptyClient(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if results.is_empty() {
        bail!(Round, "round {round}: every sampled client was empty");
    }
    let pseudo = aggregate(&results, &mappings, &arch, config.aggregation)?;
    server_update(state, &pseudo)?;

    let eval_result = evaluate(&state.params, eval)?;
    let bytes: u64 = counts.iter().map(|&c| c as u64 * BYTES_PER_PARAM).sum();
    let record = RoundRecord {
        round,
        eval_error: eval_result.error,
        eval_loss: eval_result.loss,
        train_loss: results.iter().map(|r| r.train_loss).sum::<f64>() / results.len() as f64,
        client_model_param_count: counts[0],
        bytes_down: bytes,
        bytes_up: bytes,
    };
    Ok(RoundOutcome { record, mappings, sampled })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Model before the first round.
    pub init: ModelParams,
    pub history: Vec<RoundRecord>,
    pub last_mappings: Option<MappingSet>,
}

/// Runs `config.rounds` rounds (numbered from 1), starting from `initial` or
/// a fresh initialization seeded by `config.seed`.
pub fn train<E: Executor>(
    config: &FederatedConfig,
    arch: &Arch,
    clients: &[ClientData],
    eval: &Batch,
    initial: Option<ModelParams>,
    exec: &E,
) -> Result<TrainOutcome> {
    train_with(config, arch, clients, eval, initial, exec, |_| {})
}

/// [`train`] with a callback invoked after every round.
pub fn train_with<E: Executor>(
    config: &FederatedConfig,
    arch: &Arch,
    clients: &[ClientData],
    eval: &Batch,
    initial: Option<ModelParams>,
    exec: &E,
    mut on_round: impl FnMut(&RoundOutcome),
) -> Result<TrainOutcome> {
    config.validate(arch)?;
    let init = match initial {
        Some(p) => {
            p.validate()?;
            if p.arch() != *arch || p.hidden_dims().iter().any(|&h| h != arch.hidden_dim) {
                bail!(Shape, "initial parameters do not match architecture {arch:?}");
            }
            p
        }
        None => nn::init_params(arch, config.seed)?,
    };
    if config.rounds > 0 && clients.len() < config.clients_per_round {
        bail!(Config, "{} clients per round requested but only {} available", config.clients_per_round, clients.len());
    }
    let mut state = ServerState::new(init.clone(), &config.server_optimizer);
    let mut history = Vec::with_capacity(config.rounds);
    let mut last_mappings = None;
    for r in 1..=config.rounds as u64 {
        let outcome = run_round(&mut state, config, clients, eval, r, exec)?;
        on_round(&outcome);
        history.push(outcome.record);
        last_mappings = Some(outcome.mappings);
    }
    Ok(TrainOutcome { params: state.params, init, history, last_mappings })
}

/// First round (1-based) whose evaluation error is at or below `target`.
pub fn rounds_to_target(history: &[RoundRecord], target: f64) -> Option<u64> {
    history.iter().find(|r| r.eval_error <= target).map(|r| r.round)
}

/// Pooled (non-federated) pretraining with minibatch Adam.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct CentralizedConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

pub fn train_centralized(
    config: &CentralizedConfig,
    arch: &Arch,
    examples: &[Example],
) -> Result<(ModelParams, ModelParams)> {
    config.optimizer.validate()?;
    if config.batch_size == 0 {
        bail!(Config, "batch_size must be at least 1");
    }
    if examples.is_empty() {
        bail!(Data, "no pretraining examples");
    }
    let init = nn::init_params(arch, config.seed)?;
    let mut params = init.clone();
    let mut adam = AdamState::new(config.optimizer, &params);
    let take = config.batch_size.min(examples.len());
    for step in 0..config.steps as u64 {
        let mut rng = rng::stream(config.seed, Purpose::Centralized, &[step]);
        let mut idx = index::sample(&mut rng, examples.len(), take).into_vec();
        idx.sort_unstable();
        let batch = Batch::from_examples(idx.iter().map(|&i| &examples[i]))?;
        let (_, grads) = nn::loss_and_grads(&params, &batch.features, &batch.labels)?;
        optim::adam_step(&mut adam, &mut params, &grads)?;
    }
    Ok((params, init))
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    /// Pretrained model that never saw the held-out domain.
    pub baseline: ModelParams,
    pub baseline_init: ModelParams,
    pub adapted: ModelParams,
    pub baseline_holdout: EvalResult,
    pub baseline_seen: EvalResult,
    pub adapted_holdout: EvalResult,
    pub history: Vec<RoundRecord>,
    pub last_mappings: Option<MappingSet>,
}

/// Pretrains centrally on every domain except `holdout_domain`, then
/// fine-tunes with FedDrop on the held-out domain's clients only.
pub fn domain_adapt<E: Executor>(
    pretrain: &CentralizedConfig,
    adapt: &FederatedConfig,
    arch: &Arch,
    dataset: &FederatedDataset,
    holdout_domain: usize,
    exec: &E,
) -> Result<AdaptOutcome> {
    if dataset.num_domains() < 2 {
        bail!(Config, "domain adaptation needs at least two domains");
    }
    let split = data::split_holdout(dataset, holdout_domain)?;
    let pooled: Vec<Example> = split.pretrain.iter().flat_map(|c| c.examples.iter().cloned()).collect();
    let (baseline, baseline_init) = train_centralized(pretrain, arch, &pooled)?;
    let holdout = Batch::from_examples(&split.holdout_eval)?;
    let seen = Batch::from_examples(&split.seen_eval)?;
    let baseline_holdout = evaluate(&baseline, &holdout)?;
    let baseline_seen = evaluate(&baseline, &seen)?;
    let outcome = train(adapt, arch, &split.adapt, &holdout, Some(baseline.clone()), exec).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("adaptation phase: {msg}")),
        other => other,
    })?;
    let adapted_holdout = evaluate(&outcome.params, &holdout)?;
    Ok(AdaptOutcome {
        baseline,
        baseline_init,
        adapted: outcome.params,
        baseline_holdout,
        baseline_seen,
        adapted_holdout,
        history: outcome.history,
        last_mappings: outcome.last_mappings,
    })
}
