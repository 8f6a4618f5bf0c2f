//! Three-sigma acceptance of generated designs and the Chip@k metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{column_stats, Corpus, PpaMetrics};
use crate::error::{Error, Result};

/// One standard deviation per metric, taken over the ground-truth corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaThresholds {
    pub sigma_area: f64,
    pub sigma_power: f64,
    pub sigma_slack: f64,
}

impl SigmaThresholds {
    pub fn new(sigma_area: f64, sigma_power: f64, sigma_slack: f64) -> Result<Self> {
        let t = SigmaThresholds {
            sigma_area,
            sigma_power,
            sigma_slack,
        };
        if [sigma_area, sigma_power, sigma_slack]
            .iter()
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::validation("sigma thresholds must be positive"));
        }
        Ok(t)
    }
}

/// Population sigma of each ground-truth metric.
pub fn sigma_thresholds(corpus: &Corpus) -> Result<SigmaThresholds> {
    let stats = column_stats(corpus)?;
    SigmaThresholds::new(stats.sigma[0], stats.sigma[1], stats.sigma[2])
}

/// Signed deviation `generated - ground truth` per metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviations {
    pub area: f64,
    pub power: f64,
    pub slack: f64,
}

pub fn deviations(generated: &PpaMetrics, gt: &PpaMetrics) -> Deviations {
    Deviations {
        area: generated.area - gt.area,
        power: generated.total_power - gt.total_power,
        slack: generated.slack - gt.slack,
    }
}

/// How the slack deviation is tested.
///
/// `Literal` applies `δ < σ` to slack like the other metrics, which accepts
/// arbitrarily *lower* slack. `DirectionAware` tests `-δ < σ` instead so that
/// slack losses are the penalized direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlackMode {
    #[default]
    Literal,
    DirectionAware,
}

impl std::str::FromStr for SlackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(SlackMode::Literal),
            "direction-aware" | "direction_aware" => Ok(SlackMode::DirectionAware),
            other => Err(Error::validation(format!("unknown slack mode: {other}"))),
        }
    }
}

/// Joint three-sigma test; every metric must pass with a strict inequality.
pub fn accepts(d: &Deviations, t: &SigmaThresholds, slack_mode: SlackMode) -> bool {
    let slack_dev = match slack_mode {
        SlackMode::Literal => d.slack,
        SlackMode::DirectionAware => -d.slack,
    };
    d.area < t.sigma_area && d.power < t.sigma_power && slack_dev < t.sigma_slack
}

/// Probability that at least one of `k` candidates drawn without replacement
/// from `n` (of which `c` pass) passes: `1 - C(n-c, k) / C(n, k)`.
pub fn chip_at_k_single(n: usize, c: usize, k: usize) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("k must be in [1, n={n}], got {k}")));
    }
    if c > n {
        return Err(Error::Domain(format!("c={c} exceeds n={n}")));
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = (0..k)
        .map(|i| (n - c - i) as f64 / (n - i) as f64)
        .product();
    Ok(1.0 - miss)
}

/// Ground truth and generated candidates for one description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub description_id: String,
    pub gt: PpaMetrics,
    pub candidates: Vec<PpaMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionScore {
    pub description_id: String,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_description: Vec<DescriptionScore>,
    pub chip_at_k: BTreeMap<usize, f64>,
}

/// Count the candidates of each set passing the joint test.
pub fn score_sets(
    sets: &[CandidateSet],
    thresholds: &SigmaThresholds,
    slack_mode: SlackMode,
) -> Result<Vec<DescriptionScore>> {
    sets.iter()
        .map(|s| {
            if s.candidates.is_empty() {
                return Err(Error::validation(format!(
                    "description {} has no candidates",
                    s.description_id
                )));
            }
            let c = s
                .candidates
                .iter()
                .filter(|g| accepts(&deviations(g, &s.gt), thresholds, slack_mode))
                .count();
            Ok(DescriptionScore {
                description_id: s.description_id.clone(),
                n: s.candidates.len(),
                c,
            })
        })
        .collect()
}

/// Mean of [`chip_at_k_single`] over descriptions, summed in input order.
pub fn chip_at_k_from_scores(scores: &[DescriptionScore], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::validation("no descriptions to evaluate"));
    }
    let mut total = 0.0;
    for s in scores {
        if s.n < k {
            return Err(Error::validation(format!(
                "description {} has n={} < k={k}",
                s.description_id, s.n
            )));
        }
        total += chip_at_k_single(s.n, s.c, k)?;
    }
    Ok(total / scores.len() as f64)
}

/// Chip@k for every requested `k`.
pub fn chip_at_k(
    sets: &[CandidateSet],
    thresholds: &SigmaThresholds,
    ks: &[usize],
    slack_mode: SlackMode,
) -> Result<EvalReport> {
    let per_description = score_sets(sets, thresholds, slack_mode)?;
    let mut chip = BTreeMap::new();
    for &k in ks {
        chip.insert(k, chip_at_k_from_scores(&per_description, k)?);
    }
    Ok(EvalReport {
        per_description,
        chip_at_k: chip,
    })
}
