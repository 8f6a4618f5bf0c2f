//! The end-to-end comparison protocol: partition a corpus into clients, hold
//! out a test set per client, then train and score the centralized,
//! federated and independent regimes on the pooled test set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{generate_synthetic, load_corpus, train_test_split, Corpus};
use crate::error::{Error, Result};
use crate::evaluator::{sigma_thresholds, CandidateSet, EvalReport, SigmaThresholds, SlackMode};
use crate::fedsim::{
    evaluate_adapter, run_centralized, run_federated, run_independent, Backbone, EvalSpec,
    RunResult, Tap, TrainConfig,
};
use crate::partition::{partition_corpus, DirichletMode, DirichletSpec, Partition};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// JSONL corpus to load; a synthetic corpus is generated when absent.
    pub corpus: Option<PathBuf>,
    /// Size of the synthetic corpus.
    pub count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            count: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub k: usize,
    pub fraction: f64,
    pub alpha: f64,
    pub mode: DirichletMode,
    /// Replace the clustering with a uniformly random (IID) split.
    pub iid: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            k: 3,
            fraction: 0.2,
            alpha: 1.0,
            mode: DirichletMode::PerPoint,
            iid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out descriptions per client.
    pub test_size: usize,
    pub ks: Vec<usize>,
    pub slack_mode: SlackMode,
    /// Record Chip@1 every this many rounds (0: final round only).
    pub every: usize,
    /// Histogram bins for the divergence report.
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            test_size: 100,
            ks: vec![1, 3, 5],
            slack_mode: SlackMode::Literal,
            every: 0,
            bins: crate::divergence::DEFAULT_BINS,
        }
    }
}

/// Complete run configuration. `seed` drives every random choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut cfg = SimConfig {
            seed: 7,
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        };
        cfg.set_seed(cfg.seed);
        cfg
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative corpus paths are resolved against the config file.
        if let (Some(corpus), Some(dir)) = (&cfg.data.corpus, path.parent()) {
            if corpus.is_relative() {
                cfg.data.corpus = Some(dir.join(corpus));
            }
        }
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.partition.k == 0 {
            return Err(Error::validation("partition.k must be >= 1"));
        }
        if self
            .eval
            .ks
            .iter()
            .any(|&k| k == 0 || k > self.train.n_candidates)
        {
            return Err(Error::validation(format!(
                "eval.ks must lie in [1, n_candidates={}]",
                self.train.n_candidates
            )));
        }
        Ok(())
    }

    fn dirichlet(&self) -> Result<DirichletSpec> {
        let mut spec = DirichletSpec::new(self.partition.alpha, self.partition.fraction)?;
        spec.mode = self.partition.mode;
        Ok(spec)
    }
}

/// Everything the regimes train and test on.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub partition: Option<Partition>,
    pub clients: Vec<Corpus>,
    pub train: Vec<Corpus>,
    pub test: Corpus,
    pub thresholds: SigmaThresholds,
}

pub fn load_or_generate(cfg: &SimConfig) -> Result<Corpus> {
    match &cfg.data.corpus {
        Some(path) => load_corpus(path),
        None => generate_synthetic(cfg.data.count, cfg.seed),
    }
}

/// Uniformly random split into `k` near-equal clients.
pub fn iid_split(corpus: &Corpus, k: usize, seed: u64) -> Vec<Corpus> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seeding::stream(seed, &[seeding::TAG_SPLIT, k as u64]));
    (0..k)
        .map(|c| {
            let mut idx: Vec<usize> = order.iter().copied().skip(c).step_by(k).collect();
            idx.sort_unstable();
            corpus.select(&idx)
        })
        .collect()
}

pub fn prepare(corpus: Corpus, cfg: &SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let thresholds = sigma_thresholds(&corpus)?;
    let (partition, clients) = if cfg.partition.iid {
        (None, iid_split(&corpus, cfg.partition.k, cfg.seed))
    } else {
        let (p, subs) = partition_corpus(&corpus, cfg.partition.k, &cfg.dirichlet()?, cfg.seed)?;
        (Some(p), subs)
    };
    let mut train = Vec::with_capacity(clients.len());
    let mut tests = Vec::with_capacity(clients.len());
    for (i, sub) in clients.iter().enumerate() {
        let (tr, te) = train_test_split(
            sub,
            cfg.eval.test_size,
            seeding::derive(cfg.seed, &[i as u64]),
        )
        .map_err(|e| Error::validation(format!("client {i}: {e}")))?;
        train.push(tr);
        tests.push(te);
    }
    let test = Corpus::concat(&tests)?;
    Ok(Prepared {
        corpus,
        partition,
        clients,
        train,
        test,
        thresholds,
    })
}

pub fn eval_spec(prepared: &Prepared, cfg: &SimConfig) -> EvalSpec {
    EvalSpec {
        test: prepared.test.clone(),
        thresholds: prepared.thresholds,
        n_candidates: cfg.train.n_candidates,
        temperature: cfg.train.temperature,
        slack_mode: cfg.eval.slack_mode,
        ks: cfg.eval.ks.clone(),
        seed: seeding::derive(cfg.seed, &[seeding::TAG_SAMPLING]),
        every: cfg.eval.every,
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub run: RunResult,
    pub report: EvalReport,
    pub candidates: Vec<CandidateSet>,
}

impl ScenarioResult {
    pub fn chip_at_1(&self) -> f64 {
        self.report.chip_at_k[&1]
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub centralized: ScenarioResult,
    pub federated: ScenarioResult,
    pub independent: Vec<ScenarioResult>,
}

fn scored(backbone: &Backbone, run: RunResult, spec: &EvalSpec) -> Result<ScenarioResult> {
    let (candidates, report) = evaluate_adapter(backbone, &run.adapter, spec)?;
    Ok(ScenarioResult {
        run,
        report,
        candidates,
    })
}

/// Train and score all three regimes.
pub fn run_protocol(prepared: &Prepared, cfg: &SimConfig, tap: Option<Tap<'_>>) -> Result<Outcome> {
    let backbone = Backbone::new(cfg.seed);
    let spec = eval_spec(prepared, cfg);
    let train = &prepared.train;
    let centralized = run_centralized(&backbone, train, &cfg.train, Some(&spec))?;
    let federated = run_federated(&backbone, train, &cfg.train, Some(&spec), tap)?;
    let independent = run_independent(&backbone, train, &cfg.train, Some(&spec))?;
    Ok(Outcome {
        centralized: scored(&backbone, centralized, &spec)?,
        federated: scored(&backbone, federated, &spec)?,
        independent: independent
            .into_iter()
            .map(|r| scored(&backbone, r, &spec))
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub chip_at_1: f64,
    pub chip_at_k: BTreeMap<usize, f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub centralized: ScenarioSummary,
    pub federated: ScenarioSummary,
    pub independent: Vec<ScenarioSummary>,
}

impl From<&ScenarioResult> for ScenarioSummary {
    fn from(s: &ScenarioResult) -> Self {
        let last_round = s.run.history.last().map_or(0, |r| r.round);
        let last: Vec<f64> = s
            .run
            .history
            .iter()
            .filter(|r| r.round == last_round)
            .map(|r| r.loss)
            .collect();
        ScenarioSummary {
            chip_at_1: s.chip_at_1(),
            chip_at_k: s.report.chip_at_k.clone(),
            final_loss: last.iter().sum::<f64>() / last.len().max(1) as f64,
        }
    }
}

impl From<&Outcome> for Summary {
    fn from(o: &Outcome) -> Self {
        Summary {
            centralized: (&o.centralized).into(),
            federated: (&o.federated).into(),
            independent: o.independent.iter().map(Into::into).collect(),
        }
    }
}
