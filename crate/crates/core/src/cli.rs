//! Command-line front end. Exit codes: 0 success, 1 validation or usage
//! error, 2 I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::artifacts;
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, Corpus};
use crate::divergence::{divergence_table, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::evaluator::{chip_at_k, sigma_thresholds, CandidateSet, SigmaThresholds, SlackMode};
use crate::experiment::{load_or_generate, prepare, run_protocol, SimConfig};
use crate::partition::{partition_corpus, DirichletMode, DirichletSpec};
use crate::report::parse_batch;

/// Environment variable consulted when `--seed` is not given.
pub const SEED_ENV: &str = "FEDCHIP_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "fedchip",
    version,
    about = "Federated fine-tuning simulator and chip-design evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic design corpus from the analytic cost model.
    Gen {
        /// Number of records.
        #[arg(long, default_value_t = 3000)]
        count: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 7)]
        seed: u64,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a corpus into non-IID clients (k-means + Dirichlet reassignment).
    Partition {
        /// Input corpus JSONL.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Fraction of each cluster reassigned.
        #[arg(long, default_value_t = 0.2)]
        fraction: f64,
        /// Dirichlet concentration.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// `per-point` or `shared`.
        #[arg(long, default_value = "per-point")]
        mode: String,
        #[arg(long, env = SEED_ENV, default_value_t = 7)]
        seed: u64,
        /// Directory for client_<i>.jsonl and partition.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pairwise divergence of client corpora, or the report bundle of a run.
    Analyze {
        /// Directory holding client_<i>.jsonl files.
        #[arg(long, required_unless_present = "results")]
        clients: Option<PathBuf>,
        /// Results directory written by `simulate`; rebuilds its report/ bundle.
        #[arg(long, conflicts_with = "clients")]
        results: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Report divergences in bits instead of nats.
        #[arg(long)]
        bits: bool,
        /// Divergence CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the centralized, federated and independent regimes.
    Simulate {
        /// TOML run configuration (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Results directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long, env = SEED_ENV)]
        seed: Option<u64>,
    },
    /// Score candidate sets with the three-sigma rule and Chip@k.
    Evaluate {
        /// JSONL of {description_id, gt, candidates}.
        #[arg(long)]
        candidates: PathBuf,
        /// Corpus to take the σ thresholds from (default: the ground truths).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        k: Vec<usize>,
        /// `literal` or `direction-aware`.
        #[arg(long, default_value = "literal")]
        slack_mode: String,
        /// Directory for eval.json and per_description.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract PPA metrics from synthesis/place-and-route report files.
    ParseReport {
        /// Report files.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// JSONL output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Gen { count, seed, out } => {
            save_corpus(&generate_synthetic(count, seed)?, &out)?;
            Ok(0)
        }
        Command::Partition {
            input,
            k,
            fraction,
            alpha,
            mode,
            seed,
            out_dir,
        } => {
            let corpus = load_corpus(&input)?;
            let mut spec = DirichletSpec::new(alpha, fraction)?;
            spec.mode = mode.parse::<DirichletMode>()?;
            let (partition, subs) = partition_corpus(&corpus, k, &spec, seed)?;
            artifacts::write_partition(&out_dir, Some(&partition), &subs)?;
            Ok(0)
        }
        Command::Analyze {
            clients,
            results,
            bins,
            bits,
            out,
        } => {
            if let Some(dir) = results {
                artifacts::emit_report(&dir, bins)?;
                return Ok(0);
            }
            let dir = clients.expect("clap enforces --clients or --results");
            let subs = artifacts::read_clients(&dir)?;
            let rows = divergence_table(&subs, bins, bits)?;
            let header = ["metric", "measure", "cluster_i", "cluster_j", "value"];
            match out {
                Some(path) => artifacts::write_csv_with_header(&path, &header, &rows)?,
                None => {
                    let mut w = csv::WriterBuilder::new()
                        .has_headers(false)
                        .from_writer(std::io::stdout().lock());
                    w.write_record(header)?;
                    for r in &rows {
                        w.serialize(r)?;
                    }
                    w.flush().map_err(|e| Error::io("<stdout>", e))?;
                }
            }
            Ok(0)
        }
        Command::Simulate { config, out, seed } => {
            let mut cfg = match &config {
                Some(path) => SimConfig::load(path)?,
                None => SimConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.set_seed(seed);
            }
            cfg.validate()?;
            let prepared = prepare(load_or_generate(&cfg)?, &cfg)?;
            let outcome = run_protocol(&prepared, &cfg, None)?;
            artifacts::write_results(&out, &cfg, &prepared, &outcome)?;
            Ok(0)
        }
        Command::Evaluate {
            candidates,
            corpus,
            k,
            slack_mode,
            out,
        } => {
            let slack_mode: SlackMode = slack_mode.parse()?;
            let sets: Vec<CandidateSet> = artifacts::read_jsonl(&candidates)?;
            let thresholds = match corpus {
                Some(path) => sigma_thresholds(&load_corpus(&path)?)?,
                None => thresholds_from_ground_truth(&sets)?,
            };
            let report = chip_at_k(&sets, &thresholds, &k, slack_mode)?;
            artifacts::write_eval_report(&out, &report)?;
            Ok(0)
        }
        Command::ParseReport { files, out } => parse_reports(&files, out.as_deref()),
    }
}

fn thresholds_from_ground_truth(sets: &[CandidateSet]) -> Result<SigmaThresholds> {
    let records = sets
        .iter()
        .map(|s| crate::corpus::DesignRecord {
            id: s.description_id.clone(),
            instruction: String::new(),
            params: None,
            design_text: None,
            metrics: s.gt,
        })
        .collect();
    sigma_thresholds(&Corpus::new(records)?)
}

#[derive(Serialize)]
struct ParsedRow {
    source: String,
    area_um2: f64,
    total_power_w: f64,
    slack_ns: f64,
}

/// Successful parses go to the output; each failure is reported on stderr
/// and the worst failure decides the exit code.
fn parse_reports(files: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let mut lines = String::new();
    let mut code = 0;
    for item in parse_batch(files) {
        match item.result {
            Ok(m) => {
                let row = ParsedRow {
                    source: item.path.display().to_string(),
                    area_um2: m.area,
                    total_power_w: m.total_power,
                    slack_ns: m.slack,
                };
                lines.push_str(&serde_json::to_string(&row)?);
                lines.push('\n');
            }
            Err(e) => {
                eprintln!("error: {}: {e}", item.path.display());
                code = code.max(e.exit_code());
            }
        }
    }
    match out {
        Some(path) => std::fs::write(path, lines).map_err(|e| Error::io(path, e))?,
        None => std::io::stdout()
            .write_all(lines.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(code)
}
