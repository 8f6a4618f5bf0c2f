//! Design records, JSONL persistence, normalization and the synthetic
//! corpus generator.
//!
//! Units follow the OpenROAD reporting conventions: area in µm², total power
//! in W and slack in ns.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Systolic array dimensions supported by the accelerator template.
pub const ARRAY_DIMS: [u32; 7] = [4, 8, 16, 32, 64, 128, 256];
pub const MIN_DATA_WIDTH: u32 = 4;
pub const MAX_DATA_WIDTH: u32 = 32;
pub const APPROX_MODES: u32 = 3;
/// Largest tiling factor produced by the generator (and modelled by the surrogate).
pub const MAX_TILING: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    pub array_dim: u32,
    pub data_width: u32,
    pub approx_mode: u32,
    pub tiling: u32,
}

impl DesignParams {
    pub fn validate(&self) -> Result<()> {
        if !ARRAY_DIMS.contains(&self.array_dim) {
            return Err(Error::validation(format!(
                "array_dim must be a power of two in [4, 256], got {}",
                self.array_dim
            )));
        }
        if !(MIN_DATA_WIDTH..=MAX_DATA_WIDTH).contains(&self.data_width) {
            return Err(Error::validation(format!(
                "data_width must be in [{MIN_DATA_WIDTH}, {MAX_DATA_WIDTH}], got {}",
                self.data_width
            )));
        }
        if self.approx_mode >= APPROX_MODES {
            return Err(Error::validation(format!(
                "approx_mode must be 0, 1 or 2, got {}",
                self.approx_mode
            )));
        }
        if self.tiling < 1 {
            return Err(Error::validation("tiling must be >= 1"));
        }
        Ok(())
    }

    /// Template instruction naming all four parameters.
    pub fn render_instruction(&self) -> String {
        format!(
            "Generate a {d}x{d} systolic array with {w}-bit data width, approximation mode {m} and {t}-way memory tiling.",
            d = self.array_dim,
            w = self.data_width,
            m = self.approx_mode,
            t = self.tiling
        )
    }
}

/// Power, performance (slack) and area of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpaMetrics {
    #[serde(rename = "area_um2")]
    pub area: f64,
    #[serde(rename = "total_power_w")]
    pub total_power: f64,
    #[serde(rename = "slack_ns")]
    pub slack: f64,
}

impl PpaMetrics {
    pub fn validate(&self) -> Result<()> {
        if !(self.area.is_finite() && self.area > 0.0) {
            return Err(Error::validation("area must be positive"));
        }
        if !(self.total_power.is_finite() && self.total_power > 0.0) {
            return Err(Error::validation("total_power must be positive"));
        }
        if !self.slack.is_finite() {
            return Err(Error::validation("slack must be finite"));
        }
        Ok(())
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Area => self.area,
            Metric::Power => self.total_power,
            Metric::Slack => self.slack,
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.area, self.total_power, self.slack]
    }
}

/// One of the three PPA metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Area,
    #[serde(rename = "total_power", alias = "power")]
    Power,
    Slack,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Area, Metric::Power, Metric::Slack];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Area => "area",
            Metric::Power => "total_power",
            Metric::Slack => "slack",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "area" => Ok(Metric::Area),
            "power" | "total_power" => Ok(Metric::Power),
            "slack" => Ok(Metric::Slack),
            other => Err(Error::validation(format!("unknown metric: {other}"))),
        }
    }
}

/// An instruction/design pair with its ground-truth PPA.
///
/// Records imported from real dataset exports may lack `params` and carry the
/// design source under `design_text` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRecord {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<DesignParams>,
    pub metrics: PpaMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_text: Option<String>,
}

impl DesignRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.params {
            p.validate()?;
        }
        self.metrics.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    records: Vec<DesignRecord>,
}

impl Corpus {
    /// Build a corpus, validating every record and id uniqueness.
    pub fn new(records: Vec<DesignRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate()
                .map_err(|e| Error::validation(format!("record {}: {e}", r.id)))?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation(format!("duplicate id: {}", r.id)));
            }
        }
        Ok(Corpus { records })
    }

    pub fn records(&self) -> &[DesignRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<DesignRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DesignRecord> {
        self.records.iter()
    }

    /// Sub-corpus holding the records at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Corpus {
        Corpus {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Concatenate corpora, rejecting id collisions.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Corpus>) -> Result<Corpus> {
        let records = parts
            .into_iter()
            .flat_map(|c| c.records.iter().cloned())
            .collect();
        Corpus::new(records)
    }

    pub fn metric_column(&self, metric: Metric) -> Vec<f64> {
        self.records.iter().map(|r| r.metrics.get(metric)).collect()
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a DesignRecord;
    type IntoIter = std::slice::Iter<'a, DesignRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let source_name = path.display().to_string();
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DesignRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: source_name.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|e| Error::validation(format!("{source_name}:{}: {e}", idx + 1)))?;
        records.push(record);
    }
    Corpus::new(records)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in corpus {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Analytic PPA surrogate for synthesis + place-and-route.
pub fn cost_model(params: &DesignParams) -> PpaMetrics {
    let d = f64::from(params.array_dim);
    let w = f64::from(params.data_width);
    let m = f64::from(params.approx_mode);
    let t = f64::from(params.tiling);
    PpaMetrics {
        area: 120.0 * d * d * w * (1.0 - 0.08 * m) + 400.0 * t,
        total_power: 0.0009 * d * d * w * (1.0 - 0.12 * m),
        slack: 2.0 - 0.012 * d * w + 0.15 * m,
    }
}

/// Deterministic synthetic corpus: parameters drawn uniformly, metrics from
/// [`cost_model`].
pub fn generate_synthetic(count: usize, seed: u64) -> Result<Corpus> {
    if count < 1 {
        return Err(Error::validation("count must be ≥ 1"));
    }
    let mut rng = seeding::stream(seed, &[seeding::TAG_GENERATE]);
    let width = count.to_string().len();
    let records = (0..count)
        .map(|i| {
            let params = DesignParams {
                array_dim: ARRAY_DIMS[rng.random_range(0..ARRAY_DIMS.len())],
                data_width: rng.random_range(MIN_DATA_WIDTH..=MAX_DATA_WIDTH),
                approx_mode: rng.random_range(0..APPROX_MODES),
                tiling: rng.random_range(1..=MAX_TILING),
            };
            DesignRecord {
                id: format!("syn-{i:0width$}"),
                instruction: params.render_instruction(),
                params: Some(params),
                metrics: cost_model(&params),
                design_text: None,
            }
        })
        .collect();
    Corpus::new(records)
}

/// Per-metric mean and population standard deviation, ordered area, power, slack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub sigma: [f64; 3],
}

/// Mean and population sigma (divisor N) of each metric column.
pub fn column_stats(corpus: &Corpus) -> Result<NormStats> {
    if corpus.len() < 2 {
        return Err(Error::validation(format!(
            "at least 2 records required, got {}",
            corpus.len()
        )));
    }
    let n = corpus.len() as f64;
    let mut mean = [0.0; 3];
    let mut sigma = [0.0; 3];
    for (j, metric) in Metric::ALL.into_iter().enumerate() {
        let col = corpus.metric_column(metric);
        let mu = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
        if var == 0.0 {
            return Err(Error::validation(format!(
                "constant metric column: {metric}"
            )));
        }
        mean[j] = mu;
        sigma[j] = var.sqrt();
    }
    Ok(NormStats { mean, sigma })
}

/// Z-score every PPA column. Rows are `[area, power, slack]`.
pub fn zscore_normalize(corpus: &Corpus) -> Result<(Vec<[f64; 3]>, NormStats)> {
    let stats = column_stats(corpus)?;
    let rows = corpus
        .iter()
        .map(|r| {
            let v = r.metrics.to_array();
            std::array::from_fn(|j| (v[j] - stats.mean[j]) / stats.sigma[j])
        })
        .collect();
    Ok((rows, stats))
}

/// Seeded split into `(train, test)` with `|test| == test_size`. Both halves
/// keep the corpus order.
pub fn train_test_split(corpus: &Corpus, test_size: usize, seed: u64) -> Result<(Corpus, Corpus)> {
    if test_size > 0 && test_size >= corpus.len() {
        return Err(Error::validation(format!(
            "test_size ({test_size}) must be smaller than the corpus ({})",
            corpus.len()
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = seeding::stream(seed, &[seeding::TAG_SPLIT]);
    order.shuffle(&mut rng);
    let mut test_idx = order[..test_size].to_vec();
    let mut train_idx = order[test_size..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((corpus.select(&train_idx), corpus.select(&test_idx)))
}
