//! Server side: the update wire format, FedAvg and the round loops for the
//! federated, centralized and independent regimes.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::client::ClientState;
use super::model::{LoraAdapter, LoraHead};
use super::sampling::{evaluate_adapter, EvalSpec};
use super::{Backbone, TrainConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// The only message a client ever sends: its adapter and dataset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub num_examples: usize,
    pub adapter: LoraAdapter,
}

impl ClientUpdate {
    pub fn encode(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Weighted mean of adapters, taken factor by factor (A and B separately).
/// Entries are accumulated in slice order.
pub fn fedavg(adapters: &[LoraAdapter], weights: &[f64]) -> Result<LoraAdapter> {
    let Some(first) = adapters.first() else {
        return Err(Error::validation("fedavg needs at least one adapter"));
    };
    if adapters.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} adapters but {} weights",
            adapters.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::validation("fedavg weights must be positive"));
    }
    if let Some(bad) = adapters.iter().position(|a| !a.same_shape(first)) {
        return Err(Error::Shape(format!("adapter {bad} differs in shape")));
    }
    let total: f64 = weights.iter().sum();
    let coef: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mean = |pick: &dyn Fn(&LoraAdapter) -> &Array2<f64>| {
        let mut acc = Array2::<f64>::zeros(pick(first).raw_dim());
        for (a, &c) in adapters.iter().zip(&coef) {
            acc.scaled_add(c, pick(a));
        }
        acc
    };
    let heads = (0..first.heads.len())
        .map(|h| LoraHead {
            a: mean(&|ad: &LoraAdapter| &ad.heads[h].a),
            b: mean(&|ad: &LoraAdapter| &ad.heads[h].b),
        })
        .collect();
    Ok(LoraAdapter {
        rank: first.rank,
        alpha: first.alpha,
        heads,
    })
}

/// One history row: a client's mean local loss in a round, plus Chip@1 of
/// the model that client holds after aggregation when evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub client_id: usize,
    pub loss: f64,
    pub chip_at_1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub adapter: LoraAdapter,
    pub history: Vec<RoundRecord>,
}

/// Broadcast → local training → upload → FedAvg, `config.rounds` times.
///
/// Clients run in parallel; results are identical to sequential execution
/// because every client owns its RNG stream and aggregation order is fixed
/// by client id. `tap` observes every serialized client→server message.
pub fn run_rounds(
    backbone: &Backbone,
    mut clients: Vec<ClientState>,
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
    tap: &mut dyn FnMut(&[u8]),
) -> Result<RunResult> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::validation("at least one client is required"));
    }
    if let Some(small) = clients
        .iter()
        .find(|c| c.num_examples() < config.batch_size)
    {
        return Err(Error::validation(format!(
            "client {} has {} examples, fewer than batch_size {}",
            small.client_id(),
            small.num_examples(),
            config.batch_size
        )));
    }
    let mut global = backbone.initial_adapter(config)?;
    let mut history = Vec::new();

    for round in 1..=config.rounds {
        let outcomes: Vec<(Vec<u8>, f64)> = clients
            .par_iter_mut()
            .map(|c| {
                c.receive(global.clone(), config);
                let (_, trace) = c.local_train(backbone, config, round)?;
                let mean_loss = trace.iter().sum::<f64>() / trace.len().max(1) as f64;
                Ok((c.upload(round)?, mean_loss))
            })
            .collect::<Result<_>>()?;

        let mut updates = Vec::with_capacity(outcomes.len());
        for (bytes, _) in &outcomes {
            tap(bytes);
            updates.push(ClientUpdate::decode(bytes)?);
        }
        updates.sort_by_key(|u| u.client_id);
        let weights: Vec<f64> = updates.iter().map(|u| u.num_examples as f64).collect();
        let adapters: Vec<LoraAdapter> = updates.into_iter().map(|u| u.adapter).collect();
        global = fedavg(&adapters, &weights)?;

        let chip = match eval {
            Some(spec) if spec.should_evaluate(round, config.rounds) => {
                Some(evaluate_adapter(backbone, &global, spec)?.1.chip_at_k[&1])
            }
            _ => None,
        };
        for (c, (_, loss)) in clients.iter().zip(&outcomes) {
            history.push(RoundRecord {
                round,
                client_id: c.client_id(),
                loss: *loss,
                chip_at_1: chip,
            });
        }
    }
    Ok(RunResult {
        adapter: global,
        history,
    })
}

/// Observer of serialized client→server messages.
pub type Tap<'a> = &'a mut dyn FnMut(&[u8]);

fn no_tap(_: &[u8]) {}

/// Federated training with one client per corpus.
pub fn run_federated(
    backbone: &Backbone,
    corpora: &[Corpus],
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
    tap: Option<Tap<'_>>,
) -> Result<RunResult> {
    let init = backbone.initial_adapter(config)?;
    let clients = corpora
        .iter()
        .enumerate()
        .map(|(i, c)| ClientState::new(i, c.clone(), backbone, init.clone(), config))
        .collect::<Result<Vec<_>>>()?;
    let mut fallback = no_tap;
    run_rounds(
        backbone,
        clients,
        config,
        eval,
        tap.unwrap_or(&mut fallback),
    )
}

/// Single-site training on the concatenation of all corpora.
pub fn run_centralized(
    backbone: &Backbone,
    corpora: &[Corpus],
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
) -> Result<RunResult> {
    if corpora.is_empty() {
        return Err(Error::validation(
            "centralized training needs at least one corpus",
        ));
    }
    let pooled = Corpus::concat(corpora)?;
    run_isolated(backbone, 0, pooled, config, eval)
}

/// Each client trains alone on its own corpus.
pub fn run_independent(
    backbone: &Backbone,
    corpora: &[Corpus],
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
) -> Result<Vec<RunResult>> {
    if corpora.is_empty() {
        return Err(Error::validation(
            "independent training needs at least one corpus",
        ));
    }
    corpora
        .iter()
        .enumerate()
        .map(|(i, c)| run_isolated(backbone, i, c.clone(), config, eval))
        .collect()
}

// Isolated runs all use stream 0, so training on one corpus gives the same
// result whether it is labelled centralized or independent.
fn run_isolated(
    backbone: &Backbone,
    client_id: usize,
    corpus: Corpus,
    config: &TrainConfig,
    eval: Option<&EvalSpec>,
) -> Result<RunResult> {
    let init = backbone.initial_adapter(config)?;
    let client = ClientState::with_stream(client_id, 0, corpus, backbone, init, config)?;
    run_rounds(backbone, vec![client], config, eval, &mut no_tap)
}
