//! Federated fine-tuning of a surrogate instruction→design model.
//!
//! The base model is a four-head categorical predictor over
//! [`DesignParams`](crate::corpus::DesignParams) fields; clients train
//! low-rank adapters on their private corpora and the server merges them
//! with dataset-size weighted FedAvg. Every client→server message crosses a
//! JSON serialization boundary (see [`server::ClientUpdate`]).

pub mod client;
pub mod features;
pub mod model;
pub mod optim;
pub mod sampling;
pub mod server;

use serde::{Deserialize, Serialize};

pub use client::ClientState;
pub use features::{Featurizer, Head};
pub use model::{cross_entropy, forward, grad, Example, LoraAdapter, SurrogateModel};
pub use sampling::{evaluate_adapter, generate_candidates, EvalSpec};
pub use server::{
    fedavg, run_centralized, run_federated, run_independent, run_rounds, ClientUpdate, RoundRecord,
    RunResult, Tap,
};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seeding;

/// Standard deviation of the frozen base weights.
pub const BASE_WEIGHT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub weight_decay: f64,
    /// Set from the run's master seed.
    #[serde(skip)]
    pub seed: u64,
    pub temperature: f64,
    pub n_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 20,
            local_epochs: 1,
            batch_size: 16,
            learning_rate: 1e-2,
            lora_rank: 8,
            lora_alpha: 16.0,
            weight_decay: 0.01,
            seed: 0,
            temperature: 1.0,
            n_candidates: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rounds > 0, "rounds"),
            (self.local_epochs > 0, "local_epochs"),
            (self.batch_size > 0, "batch_size"),
            (self.learning_rate > 0.0, "learning_rate"),
            (self.lora_rank > 0, "lora_rank"),
            (self.lora_alpha > 0.0, "lora_alpha"),
            (self.weight_decay >= 0.0, "weight_decay"),
            (self.temperature > 0.0, "temperature"),
            (self.n_candidates > 0, "n_candidates"),
        ];
        for (ok, name) in checks {
            if !ok {
                return Err(Error::validation(format!("train.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// The frozen pieces every regime shares: featurizer and base model.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub featurizer: Featurizer,
    pub model: SurrogateModel,
}

impl Backbone {
    pub fn new(seed: u64) -> Self {
        let featurizer = Featurizer::new();
        let sizes: Vec<usize> = Head::ALL.iter().map(|h| h.cardinality()).collect();
        let mut rng = seeding::stream(seed, &[seeding::TAG_BASE_MODEL]);
        let model = SurrogateModel::random(featurizer.dim(), &sizes, BASE_WEIGHT_STD, &mut rng);
        Backbone { featurizer, model }
    }

    /// The zero-delta adapter all regimes start from.
    pub fn initial_adapter(&self, config: &TrainConfig) -> Result<LoraAdapter> {
        let mut rng = seeding::stream(config.seed, &[seeding::TAG_ADAPTER_INIT]);
        LoraAdapter::init(&self.model, config.lora_rank, config.lora_alpha, &mut rng)
    }

    /// Featurize every record; all of them must carry design parameters.
    pub fn examples(&self, corpus: &Corpus) -> Result<Vec<Example>> {
        corpus
            .iter()
            .map(|r| {
                let params = r.params.as_ref().ok_or_else(|| {
                    Error::validation(format!("record {} has no design params to train on", r.id))
                })?;
                Ok(Example {
                    features: self.featurizer.featurize(&r.instruction),
                    targets: features::encode_targets(params)?,
                })
            })
            .collect()
    }
}
