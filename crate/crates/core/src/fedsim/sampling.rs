//! Candidate generation and Chip@k evaluation of a trained adapter.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use super::features::decode_targets;
use super::model::{forward_with_temperature, LoraAdapter};
use super::Backbone;
use crate::corpus::{cost_model, Corpus, DesignParams, PpaMetrics};
use crate::error::{Error, Result};
use crate::evaluator::{chip_at_k, CandidateSet, EvalReport, SigmaThresholds, SlackMode};
use crate::seeding;

/// Draw `n` designs for `instruction`, sampling every head independently
/// from its temperature-scaled softmax. Metrics come from the cost model.
pub fn generate_candidates(
    backbone: &Backbone,
    adapter: &LoraAdapter,
    instruction: &str,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<(DesignParams, PpaMetrics)>> {
    if n == 0 {
        return Err(Error::validation("n must be >= 1"));
    }
    let x = backbone.featurizer.featurize(instruction);
    let probs = forward_with_temperature(&backbone.model, adapter, &x, temperature)?;
    let dists = probs
        .iter()
        .map(|p| WeightedIndex::new(p.iter().copied()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Domain(format!("degenerate head distribution: {e}")))?;
    let mut rng = seeding::stream(seed, &[seeding::TAG_SAMPLING]);
    (0..n)
        .map(|_| {
            let idx: Vec<usize> = dists.iter().map(|d| d.sample(&mut rng)).collect();
            let params = decode_targets(&idx)?;
            Ok((params, cost_model(&params)))
        })
        .collect()
}

/// Held-out evaluation settings.
#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub test: Corpus,
    pub thresholds: SigmaThresholds,
    pub n_candidates: usize,
    pub temperature: f64,
    pub slack_mode: SlackMode,
    pub ks: Vec<usize>,
    pub seed: u64,
    /// Evaluate after every `every` rounds (0: final round only).
    pub every: usize,
}

impl EvalSpec {
    pub fn should_evaluate(&self, round: usize, last: usize) -> bool {
        round == last || (self.every > 0 && round.is_multiple_of(self.every))
    }
}

/// Generate candidates for every test description and score them.
/// Sampling for description `i` uses a stream keyed on `(seed, i)`, so every
/// adapter is scored against the same random numbers.
pub fn evaluate_adapter(
    backbone: &Backbone,
    adapter: &LoraAdapter,
    spec: &EvalSpec,
) -> Result<(Vec<CandidateSet>, EvalReport)> {
    let sets = spec
        .test
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let seed = seeding::derive(spec.seed, &[i as u64]);
            let cands = generate_candidates(
                backbone,
                adapter,
                &r.instruction,
                spec.n_candidates,
                spec.temperature,
                seed,
            )?;
            Ok(CandidateSet {
                description_id: r.id.clone(),
                gt: r.metrics,
                candidates: cands.into_iter().map(|(_, m)| m).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ks = spec.ks.clone();
    if !ks.contains(&1) {
        ks.insert(0, 1);
    }
    let report = chip_at_k(&sets, &spec.thresholds, &ks, spec.slack_mode)?;
    Ok((sets, report))
}
