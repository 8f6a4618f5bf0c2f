//! Extraction of PPA metrics from synthesis-report text.
//!
//! The accepted grammar is line oriented. A metric line starts with one of the
//! key phrases `design area`, `total power` or `worst slack` (case
//! insensitive), optionally followed by `:` or `=`, then a number and a unit.
//! Anything after the unit is ignored, as are lines that do not start with a
//! key phrase.
//!
//! | key phrase    | units            | normalized to |
//! |---------------|------------------|---------------|
//! | `design area` | `u^2`, `um^2`    | µm²           |
//! | `total power` | `W`, `mW`, `uW`  | W             |
//! | `worst slack` | `ns`, `ps`       | ns            |
//!
//! Unit conversion is done on the decimal text (by shifting the exponent)
//! so that `115.2 mW` and `0.1152 W` yield the same `f64`.

use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;

use crate::corpus::PpaMetrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDoc {
    pub raw_text: String,
    pub source_name: String,
}

impl ReportDoc {
    pub fn new(raw_text: impl Into<String>, source_name: impl Into<String>) -> Result<Self> {
        let raw_text = raw_text.into();
        let source_name = source_name.into();
        if raw_text.trim().is_empty() {
            return Err(Error::validation(format!("{source_name}: empty report")));
        }
        Ok(ReportDoc {
            raw_text,
            source_name,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ReportDoc::new(text, path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Key {
    Area,
    Power,
    Slack,
}

impl Key {
    fn name(self) -> &'static str {
        match self {
            Key::Area => "area",
            Key::Power => "total_power",
            Key::Slack => "slack",
        }
    }

    /// Decimal exponent that converts `unit` into the canonical unit.
    fn unit_exponent(self, unit: &str) -> Option<i32> {
        match (self, unit) {
            (Key::Area, "u^2" | "um^2") => Some(0),
            (Key::Power, "W") => Some(0),
            (Key::Power, "mW") => Some(-3),
            (Key::Power, "uW") => Some(-6),
            (Key::Slack, "ns") => Some(0),
            (Key::Slack, "ps") => Some(-3),
            _ => None,
        }
    }
}

static KEY_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(design\s+area|total\s+power|worst\s+slack)\b\s*[:=]?\s*(.*)$").unwrap()
});

static VALUE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([-+]?(?:\d+\.?\d*|\.\d+))(?:[eE]([-+]?\d+))?\s+(\S+)").unwrap()
});

fn key_of(phrase: &str) -> Key {
    let lower = phrase.to_ascii_lowercase();
    if lower.starts_with("design") {
        Key::Area
    } else if lower.starts_with("total") {
        Key::Power
    } else {
        Key::Slack
    }
}

fn scaled(mantissa: &str, exponent: i32) -> Option<f64> {
    let value: f64 = format!("{mantissa}e{exponent}").parse().ok()?;
    value.is_finite().then_some(value)
}

/// Parse the three PPA metrics out of a report.
pub fn parse_ppa(doc: &ReportDoc) -> Result<PpaMetrics> {
    let mut found: [Option<(f64, usize)>; 3] = [None; 3];
    for (idx, line) in doc.raw_text.lines().enumerate() {
        let line_no = idx + 1;
        let Some(caps) = KEY_LINE.captures(line) else {
            continue;
        };
        let key = key_of(&caps[1]);
        let rest = caps[2].trim();
        let parse_err = |message: String| Error::Parse {
            source_name: doc.source_name.clone(),
            line: line_no,
            message,
        };
        let vcaps = VALUE
            .captures(rest)
            .ok_or_else(|| parse_err(format!("malformed number for {}: {rest:?}", key.name())))?;
        let unit = &vcaps[3];
        let unit_exp = key
            .unit_exponent(unit)
            .ok_or_else(|| parse_err(format!("unknown unit for {}: {unit:?}", key.name())))?;
        let literal_exp: i32 = match vcaps.get(2) {
            Some(m) => m
                .as_str()
                .parse()
                .map_err(|_| parse_err(format!("malformed exponent for {}", key.name())))?,
            None => 0,
        };
        let value = scaled(&vcaps[1], literal_exp + unit_exp)
            .ok_or_else(|| parse_err(format!("malformed number for {}: {rest:?}", key.name())))?;

        let slot = &mut found[key as usize];
        if let Some((_, first)) = slot {
            return Err(Error::validation(format!(
                "{}: ambiguous report: duplicate metric {} on lines {first} and {line_no}",
                doc.source_name,
                key.name()
            )));
        }
        *slot = Some((value, line_no));
    }

    let take = |key: Key| {
        found[key as usize]
            .map(|(v, _)| v)
            .ok_or_else(|| Error::validation(format!("missing metric: {}", key.name())))
    };
    let metrics = PpaMetrics {
        area: take(Key::Area)?,
        total_power: take(Key::Power)?,
        slack: take(Key::Slack)?,
    };
    metrics
        .validate()
        .map_err(|e| Error::validation(format!("{}: {e}", doc.source_name)))?;
    Ok(metrics)
}

/// Outcome of parsing one file in a batch.
#[derive(Debug)]
pub struct BatchItem {
    pub path: PathBuf,
    pub result: Result<PpaMetrics>,
}

/// Parse every file independently; failures are recorded per file.
pub fn parse_batch<P: AsRef<Path>>(paths: &[P]) -> Vec<BatchItem> {
    paths
        .iter()
        .map(|p| {
            let path = p.as_ref().to_path_buf();
            let result = ReportDoc::read(&path).and_then(|doc| parse_ppa(&doc));
            BatchItem { path, result }
        })
        .collect()
}
