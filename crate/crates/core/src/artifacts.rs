//! On-disk layout of a simulation results directory and the plot-ready
//! report bundle derived from it.
//!
//! ```text
//! results/
//!   config.toml                 resolved run configuration
//!   partition.json              cluster labels, centroids, reassigned ids
//!   clients/client_<i>.jsonl    per-client sub-corpora
//!   history_<scenario>.csv      round,client_id,loss,chip_at_1
//!   summary.json                {centralized, federated, independent: [..]}
//!   candidates_federated.jsonl  generated candidates per test description
//!   report/divergence.csv       metric,measure,cluster_i,cluster_j,value
//!   report/chip_at_k.csv        scenario,k,value
//!   report/scatter.csv          description_id,candidate,metric,ground_truth,generated
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::{load_corpus, save_corpus, Corpus, Metric};
use crate::divergence::divergence_table;
use crate::error::{Error, Result};
use crate::evaluator::{CandidateSet, EvalReport};
use crate::experiment::{Outcome, Prepared, SimConfig, Summary};
use crate::fedsim::RoundRecord;
use crate::partition::Partition;

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// CSV with an explicit header, so empty tables still name their columns.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        writeln!(w, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn client_file(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("client_{i}.jsonl"))
}

/// Write `client_0.jsonl` .. `client_{k-1}.jsonl` and `partition.json`.
pub fn write_partition(
    dir: &Path,
    partition: Option<&Partition>,
    clients: &[Corpus],
) -> Result<()> {
    create_dir(dir)?;
    for (i, c) in clients.iter().enumerate() {
        save_corpus(c, client_file(dir, i))?;
    }
    if let Some(p) = partition {
        write_json(&dir.join("partition.json"), p)?;
    }
    Ok(())
}

/// Client sub-corpora `client_0.jsonl`, `client_1.jsonl`, ... in index order.
pub fn read_clients(dir: &Path) -> Result<Vec<Corpus>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "client directory not found"),
        ));
    }
    let mut out = Vec::new();
    loop {
        let path = client_file(dir, out.len());
        if !path.exists() {
            break;
        }
        out.push(load_corpus(&path)?);
    }
    if out.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no client_<i>.jsonl files"),
        ));
    }
    Ok(out)
}

/// Persist a finished run and its report bundle.
pub fn write_results(
    dir: &Path,
    cfg: &SimConfig,
    prepared: &Prepared,
    outcome: &Outcome,
) -> Result<()> {
    create_dir(dir)?;
    let config_text = toml::to_string(cfg).map_err(|e| Error::Serde(format!("config: {e}")))?;
    fs::write(dir.join("config.toml"), config_text).map_err(|e| Error::io(dir, e))?;
    write_partition(&dir.join("clients"), None, &prepared.clients)?;
    if let Some(p) = &prepared.partition {
        write_json(&dir.join("partition.json"), p)?;
    }

    let history_header = ["round", "client_id", "loss", "chip_at_1"];
    let write_history = |name: &str, rows: &[RoundRecord]| {
        write_csv_with_header(
            &dir.join(format!("history_{name}.csv")),
            &history_header,
            rows,
        )
    };
    write_history("centralized", &outcome.centralized.run.history)?;
    write_history("federated", &outcome.federated.run.history)?;
    let independent: Vec<RoundRecord> = outcome
        .independent
        .iter()
        .flat_map(|s| s.run.history.iter().cloned())
        .collect();
    write_history("independent", &independent)?;

    write_json(&dir.join("summary.json"), &Summary::from(outcome))?;
    write_jsonl(
        &dir.join("candidates_federated.jsonl"),
        &outcome.federated.candidates,
    )?;
    emit_report(dir, cfg.eval.bins)
}

#[derive(Serialize)]
struct ChipRow<'a> {
    scenario: &'a str,
    k: usize,
    value: f64,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    description_id: &'a str,
    candidate: usize,
    metric: Metric,
    ground_truth: f64,
    generated: f64,
}

/// Build `report/` from an existing results directory.
pub fn emit_report(dir: &Path, bins: usize) -> Result<()> {
    let summary: Summary = read_json(&dir.join("summary.json"))?;
    let candidates: Vec<CandidateSet> = read_jsonl(&dir.join("candidates_federated.jsonl"))?;
    let clients = read_clients(&dir.join("clients"))?;
    let report = dir.join("report");
    create_dir(&report)?;

    let divergence = if clients.len() >= 2 {
        divergence_table(&clients, bins, false)?
    } else {
        Vec::new()
    };
    write_csv_with_header(
        &report.join("divergence.csv"),
        &["metric", "measure", "cluster_i", "cluster_j", "value"],
        &divergence,
    )?;

    let mut chip = Vec::new();
    let mut push = |scenario: &str, map: &std::collections::BTreeMap<usize, f64>| {
        for (&k, &value) in map {
            chip.push((scenario.to_string(), k, value));
        }
    };
    push("centralized", &summary.centralized.chip_at_k);
    push("federated", &summary.federated.chip_at_k);
    for (i, s) in summary.independent.iter().enumerate() {
        push(&format!("independent_{i}"), &s.chip_at_k);
    }
    let chip_rows: Vec<ChipRow> = chip
        .iter()
        .map(|(s, k, v)| ChipRow {
            scenario: s,
            k: *k,
            value: *v,
        })
        .collect();
    write_csv_with_header(
        &report.join("chip_at_k.csv"),
        &["scenario", "k", "value"],
        &chip_rows,
    )?;

    let mut scatter = Vec::new();
    for set in &candidates {
        for (ci, cand) in set.candidates.iter().enumerate() {
            for metric in Metric::ALL {
                scatter.push(ScatterRow {
                    description_id: &set.description_id,
                    candidate: ci,
                    metric,
                    ground_truth: set.gt.get(metric),
                    generated: cand.get(metric),
                });
            }
        }
    }
    write_csv_with_header(
        &report.join("scatter.csv"),
        &[
            "description_id",
            "candidate",
            "metric",
            "ground_truth",
            "generated",
        ],
        &scatter,
    )
}

/// Write an [`EvalReport`] as `eval.json` (`{k: value}`) and `per_description.csv`.
pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join("eval.json"), &report.chip_at_k)?;
    write_csv_with_header(
        &dir.join("per_description.csv"),
        &["description_id", "n", "c"],
        &report.per_description,
    )
}
