use rand::seq::SliceRandom;

use super::model::{grad, Example, LoraAdapter};
use super::optim::AdamW;
use super::server::ClientUpdate;
use super::{Backbone, TrainConfig};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::seeding;

/// A participant holding a private corpus. Only [`ClientState::upload`]
/// produces data that leaves the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: usize,
    stream_id: u64,
    corpus: Corpus,
    examples: Vec<Example>,
    adapter: LoraAdapter,
    optimizer: AdamW,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        corpus: Corpus,
        backbone: &Backbone,
        initial: LoraAdapter,
        config: &TrainConfig,
    ) -> Result<Self> {
        Self::with_stream(
            client_id,
            client_id as u64,
            corpus,
            backbone,
            initial,
            config,
        )
    }

    /// Like [`ClientState::new`] but with an explicit RNG stream id.
    pub fn with_stream(
        client_id: usize,
        stream_id: u64,
        corpus: Corpus,
        backbone: &Backbone,
        initial: LoraAdapter,
        config: &TrainConfig,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::validation(format!(
                "client {client_id} has an empty corpus"
            )));
        }
        initial.check_against(&backbone.model)?;
        let examples = backbone.examples(&corpus)?;
        let optimizer = AdamW::new(&initial, config.learning_rate, config.weight_decay);
        Ok(ClientState {
            client_id,
            stream_id,
            corpus,
            examples,
            adapter: initial,
            optimizer,
        })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn num_examples(&self) -> usize {
        self.corpus.len()
    }

    pub fn adapter(&self) -> &LoraAdapter {
        &self.adapter
    }

    /// Install the broadcast global adapter and start a fresh optimizer.
    pub fn receive(&mut self, global: LoraAdapter, config: &TrainConfig) {
        self.optimizer = AdamW::new(&global, config.learning_rate, config.weight_decay);
        self.adapter = global;
    }

    /// `local_epochs` passes of shuffled mini-batch AdamW over the local
    /// corpus. The shuffle stream is keyed on (seed, stream id, round).
    /// Returns the updated adapter and the per-step batch losses.
    pub fn local_train(
        &mut self,
        backbone: &Backbone,
        config: &TrainConfig,
        round: usize,
    ) -> Result<(LoraAdapter, Vec<f64>)> {
        let mut rng = seeding::stream(
            config.seed,
            &[seeding::TAG_CLIENT, self.stream_id, round as u64],
        );
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        let mut trace = Vec::new();
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| self.examples[i].clone()));
                let (g, loss) = grad(&backbone.model, &self.adapter, &batch)?;
                self.optimizer.step(&mut self.adapter, &g);
                trace.push(loss.loss);
            }
        }
        Ok((self.adapter.clone(), trace))
    }

    /// Serialize this client's update for the server.
    pub fn upload(&self, round: usize) -> Result<Vec<u8>> {
        ClientUpdate {
            client_id: self.client_id,
            round,
            num_examples: self.corpus.len(),
            adapter: self.adapter.clone(),
        }
        .encode()
    }
}
