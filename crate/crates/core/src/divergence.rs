//! Histogram-based KL and Jensen-Shannon divergences between client
//! sub-corpora. All values are in nats.

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Metric};
use crate::error::{Error, Result};

/// Additive mass per bin before renormalization.
pub const SMOOTHING: f64 = 1e-10;
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    probs: Vec<f64>,
}

impl Histogram {
    /// Equal-width histogram over `[lo, hi]`. Out-of-range values are clamped
    /// into the boundary bins.
    pub fn build(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if values.is_empty() {
            return Err(Error::validation("histogram needs at least one value"));
        }
        if bins == 0 {
            return Err(Error::validation("histogram needs at least one bin"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::validation(format!(
                "invalid histogram range [{lo}, {hi}]"
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::validation("histogram values must not be NaN"));
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b < 0.0 {
                0
            } else {
                (b as usize).min(bins - 1)
            };
            counts[b] += 1;
        }
        let n = values.len() as f64;
        let norm = 1.0 + bins as f64 * SMOOTHING;
        let probs = counts
            .into_iter()
            .map(|c| (c as f64 / n + SMOOTHING) / norm)
            .collect();
        Ok(Histogram { edges, probs })
    }

    /// Histogram from explicit probabilities (no smoothing applied).
    pub fn from_probs(edges: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if edges.len() != probs.len() + 1 || probs.is_empty() {
            return Err(Error::Shape(format!(
                "{} edges for {} bins",
                edges.len(),
                probs.len()
            )));
        }
        if edges
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::validation("bin edges must be strictly increasing"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::validation(
                "probabilities must be finite and nonnegative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Histogram { edges, probs })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn check_compatible(&self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::Shape("histograms have different bin edges".into()));
        }
        Ok(())
    }
}

fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { pi * (pi / qi).ln() })
        .sum()
}

/// KL(P ‖ Q) in nats.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    Ok(kl_terms(&p.probs, &q.probs))
}

/// Jensen-Shannon divergence in nats, bounded by ln 2.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    let m: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    // Summing the two halves term by term keeps JSD(P,Q) == JSD(Q,P) bit-exact.
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .zip(&m)
        .map(|((&a, &b), &mi)| {
            let ta = if a == 0.0 { 0.0 } else { a * (a / mi).ln() };
            let tb = if b == 0.0 { 0.0 } else { b * (b / mi).ln() };
            0.5 * (ta + tb)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "JSD")]
    Jsd,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Kl => "KL",
            Measure::Jsd => "JSD",
        }
    }

    pub fn apply(self, p: &Histogram, q: &Histogram) -> Result<f64> {
        match self {
            Measure::Kl => kl_divergence(p, q),
            Measure::Jsd => js_divergence(p, q),
        }
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "KL" => Ok(Measure::Kl),
            "JSD" | "JS" => Ok(Measure::Jsd),
            other => Err(Error::validation(format!("unknown measure: {other}"))),
        }
    }
}

/// Pairwise divergence between the metric histograms of every sub-corpus.
/// All histograms share the pooled min/max range.
pub fn divergence_matrix(
    subs: &[Corpus],
    metric: Metric,
    bins: usize,
    measure: Measure,
) -> Result<Vec<Vec<f64>>> {
    let hists = pooled_histograms(subs, metric, bins)?;
    let n = hists.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[i][j] = measure.apply(&hists[i], &hists[j])?;
            }
        }
    }
    Ok(out)
}

pub fn pooled_histograms(subs: &[Corpus], metric: Metric, bins: usize) -> Result<Vec<Histogram>> {
    if subs.len() < 2 {
        return Err(Error::validation(
            "divergence needs at least two sub-corpora",
        ));
    }
    let columns: Vec<Vec<f64>> = subs.iter().map(|c| c.metric_column(metric)).collect();
    let (lo, hi) = columns
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    columns
        .iter()
        .map(|col| Histogram::build(col, bins, (lo, hi)))
        .collect()
}

/// One row of the divergence CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub metric: Metric,
    pub measure: Measure,
    pub cluster_i: usize,
    pub cluster_j: usize,
    pub value: f64,
}

/// Every ordered off-diagonal pair for every metric and both measures.
/// Values are converted to bits when `bits` is set.
pub fn divergence_table(subs: &[Corpus], bins: usize, bits: bool) -> Result<Vec<DivergenceRow>> {
    let scale = if bits {
        std::f64::consts::LN_2.recip()
    } else {
        1.0
    };
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        for measure in [Measure::Kl, Measure::Jsd] {
            let m = divergence_matrix(subs, metric, bins, measure)?;
            for (i, row) in m.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if i != j {
                        rows.push(DivergenceRow {
                            metric,
                            measure,
                            cluster_i: i,
                            cluster_j: j,
                            value: v * scale,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn two_bin(p: f64) -> Histogram {
        Histogram::from_probs(vec![0.0, 1.0, 2.0], vec![p, 1.0 - p]).unwrap()
    }

    #[test]
    fn midpoint_mass_lands_in_one_bin() {
        let h = Histogram::build(&[2.0; 5], 4, (0.0, 4.0)).unwrap();
        assert!((h.probs()[2] - 1.0).abs() < 1e-9);
        assert!(h.probs()[0] < 1e-9 && h.probs()[1] < 1e-9 && h.probs()[3] < 1e-9);
        assert!((h.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bin_centers_are_uniform() {
        let h = Histogram::build(&[0.5, 1.5, 2.5, 3.5], 4, (0.0, 4.0)).unwrap();
        for p in h.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_clamps() {
        let h = Histogram::build(&[10.0, -3.0], 4, (0.0, 4.0)).unwrap();
        assert!((h.probs()[3] - 0.5).abs() < 1e-9);
        assert!((h.probs()[0] - 0.5).abs() < 1e-9);
        assert!(Histogram::build(&[], 4, (0.0, 1.0)).is_err());
    }

    #[test]
    fn hand_computed_kl() {
        let p = two_bin(0.5);
        let q = two_bin(0.25);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let pq = kl_divergence(&p, &q).unwrap();
        let qp = kl_divergence(&q, &p).unwrap();
        assert!((pq - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((pq - 0.143_841_036_225_890_42).abs() < 1e-12);
        assert!((qp - (0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln())).abs() < 1e-12);
        assert!((qp - 0.130_812_035_941_136_97).abs() < 1e-12);
    }

    #[test]
    fn jsd_extremes() {
        let p = Histogram::build(&[0.1], 2, (0.0, 2.0)).unwrap();
        let q = Histogram::build(&[1.9], 2, (0.0, 2.0)).unwrap();
        assert_eq!(js_divergence(&p, &p).unwrap(), 0.0);
        assert!((js_divergence(&p, &q).unwrap() - LN_2).abs() < 1e-6);
        assert_eq!(
            js_divergence(&p, &q).unwrap(),
            js_divergence(&q, &p).unwrap()
        );
    }

    #[test]
    fn mismatched_edges_rejected() {
        let p = two_bin(0.5);
        let q = Histogram::from_probs(vec![0.0, 1.0, 3.0], vec![0.5, 0.5]).unwrap();
        assert!(kl_divergence(&p, &q).is_err());
        assert!(js_divergence(&p, &q).is_err());
    }

    #[test]
    fn identical_subcorpora_have_zero_divergence() {
        let c = crate::corpus::generate_synthetic(200, 1).unwrap();
        let m = divergence_matrix(&[c.clone(), c], Metric::Power, 20, Measure::Kl).unwrap();
        assert_eq!(m, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }
}
