//! Frozen multi-head base model with low-rank adapters.
//!
//! Head `h` computes `logits = (W0_h + (alpha / r) * B_h A_h) x` followed by a
//! softmax. Only the adapter factors `A` (r × F) and `B` (V_h × r) train.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::StreamRng;

/// Floor applied to target probabilities inside the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    heads: Vec<Array2<f64>>,
}

impl SurrogateModel {
    pub fn from_weights(heads: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::Shape("model needs at least one head".into()));
        };
        let f = first.ncols();
        if heads.iter().any(|w| w.ncols() != f || w.nrows() == 0) {
            return Err(Error::Shape("heads must share the input dimension".into()));
        }
        if heads.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("base weights must be finite"));
        }
        Ok(SurrogateModel { heads })
    }

    /// Base weights drawn from N(0, std²).
    pub fn random(input_dim: usize, head_sizes: &[usize], std: f64, rng: &mut StreamRng) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and >= 0");
        let heads = head_sizes
            .iter()
            .map(|&v| Array2::from_shape_simple_fn((v, input_dim), || normal.sample(rng)))
            .collect();
        SurrogateModel { heads }
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].ncols()
    }

    pub fn head_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(|w| w.nrows()).collect()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraHead {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub heads: Vec<LoraHead>,
}

impl LoraAdapter {
    /// Fresh adapter for `model`: `A ~ N(0, 1/F)`, `B = 0`.
    pub fn init(
        model: &SurrogateModel,
        rank: usize,
        alpha: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::validation("lora rank must be >= 1"));
        }
        let f = model.input_dim();
        let normal = Normal::new(0.0, (f as f64).recip().sqrt()).expect("finite std");
        let heads = model
            .head_sizes()
            .into_iter()
            .map(|v| LoraHead {
                a: Array2::from_shape_simple_fn((rank, f), || normal.sample(rng)),
                b: Array2::zeros((v, rank)),
            })
            .collect();
        Ok(LoraAdapter { rank, alpha, heads })
    }

    /// Zero-valued tensors with this adapter's shapes.
    pub fn zeros_like(&self) -> Self {
        LoraAdapter {
            rank: self.rank,
            alpha: self.alpha,
            heads: self
                .heads
                .iter()
                .map(|h| LoraHead {
                    a: Array2::zeros(h.a.raw_dim()),
                    b: Array2::zeros(h.b.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Tensors in a fixed order: `A_0, B_0, A_1, B_1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.heads.iter().flat_map(|h| [&h.a, &h.b])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.heads.iter_mut().flat_map(|h| [&mut h.a, &mut h.b])
    }

    pub fn same_shape(&self, other: &LoraAdapter) -> bool {
        self.rank == other.rank
            && self.heads.len() == other.heads.len()
            && self
                .heads
                .iter()
                .zip(&other.heads)
                .all(|(x, y)| x.a.dim() == y.a.dim() && x.b.dim() == y.b.dim())
    }

    pub fn check_against(&self, model: &SurrogateModel) -> Result<()> {
        let ok = self.heads.len() == model.heads.len()
            && self.heads.iter().zip(&model.heads).all(|(h, w)| {
                h.a.dim() == (self.rank, w.ncols()) && h.b.dim() == (w.nrows(), self.rank)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("adapter does not match model".into()))
        }
    }

    /// Euclidean norm over every adapter entry.
    pub fn norm(&self) -> f64 {
        self.tensors().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|t| t.len()).sum()
    }

    /// Randomize every entry from N(0, std²); used to build test instances.
    pub fn randomize(&mut self, std: f64, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, std).expect("finite std");
        for t in self.tensors_mut() {
            t.mapv_inplace(|_| normal.sample(rng));
        }
    }
}

fn softmax(logits: &Array1<f64>, temperature: f64) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|l| ((l - max) / temperature).exp());
    let z = e.sum();
    e / z
}

fn head_logits(
    w0: &Array2<f64>,
    head: &LoraHead,
    scale: f64,
    x: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let ax = head.a.dot(&x);
    let logits = w0.dot(&x) + scale * head.b.dot(&ax);
    (logits, ax)
}

fn check_features(model: &SurrogateModel, features: &[f64]) -> Result<()> {
    if features.len() != model.input_dim() {
        return Err(Error::Shape(format!(
            "feature length {} != model input dim {}",
            features.len(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Raw per-head logits.
pub fn logits(
    model: &SurrogateModel,
    adapter: &LoraAdapter,
    features: &[f64],
) -> Result<Vec<Array1<f64>>> {
    adapter.check_against(model)?;
    check_features(model, features)?;
    let x = ArrayView1::from(features);
    let s = adapter.scale();
    Ok(model
        .heads
        .iter()
        .zip(&adapter.heads)
        .map(|(w0, h)| head_logits(w0, h, s, x).0)
        .collect())
}

/// Per-head probability vectors at the given softmax temperature.
pub fn forward_with_temperature(
    model: &SurrogateModel,
    adapter: &LoraAdapter,
    features: &[f64],
    temperature: f64,
) -> Result<Vec<Array1<f64>>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::validation("temperature must be > 0"));
    }
    Ok(logits(model, adapter, features)?
        .iter()
        .map(|l| softmax(l, temperature))
        .collect())
}

pub fn forward(
    model: &SurrogateModel,
    adapter: &LoraAdapter,
    features: &[f64],
) -> Result<Vec<Array1<f64>>> {
    forward_with_temperature(model, adapter, features, 1.0)
}

/// Training example: features plus one target class per head.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// Number of target probabilities that fell below [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Mean over the batch of the summed per-head negative log-likelihoods.
pub fn cross_entropy(probs: &[Vec<Array1<f64>>], targets: &[Vec<usize>]) -> Result<LossValue> {
    if probs.is_empty() {
        return Err(Error::validation("cross entropy needs a nonempty batch"));
    }
    if probs.len() != targets.len() {
        return Err(Error::Shape("batch and target counts differ".into()));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (heads, tgt) in probs.iter().zip(targets) {
        if heads.len() != tgt.len() {
            return Err(Error::Shape("head and target counts differ".into()));
        }
        for (p, &t) in heads.iter().zip(tgt) {
            let pt = *p
                .get(t)
                .ok_or_else(|| Error::Shape(format!("target index {t} out of range")))?;
            if pt < PROB_FLOOR {
                clamped += 1;
            }
            total -= pt.max(PROB_FLOOR).ln();
        }
    }
    Ok(LossValue {
        loss: total / probs.len() as f64,
        clamped,
    })
}

/// Batch loss of the adapted model.
pub fn batch_loss(
    model: &SurrogateModel,
    adapter: &LoraAdapter,
    batch: &[Example],
) -> Result<LossValue> {
    let probs = batch
        .iter()
        .map(|ex| forward(model, adapter, &ex.features))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<usize>> = batch.iter().map(|ex| ex.targets.clone()).collect();
    cross_entropy(&probs, &targets)
}

/// Analytic gradient of the batch cross-entropy with respect to every `A`
/// and `B`; returns the loss alongside.
///
/// With `g = p - onehot(target)` and `s = alpha / r`:
/// `dL/dB = s g (A x)ᵀ` and `dL/dA = s (Bᵀ g) xᵀ`, averaged over the batch.
pub fn grad(
    model: &SurrogateModel,
    adapter: &LoraAdapter,
    batch: &[Example],
) -> Result<(LoraAdapter, LossValue)> {
    if batch.is_empty() {
        return Err(Error::validation("gradient needs a nonempty batch"));
    }
    adapter.check_against(model)?;
    let mut out = adapter.zeros_like();
    let s = adapter.scale();
    let inv_n = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut clamped = 0;
    for ex in batch {
        check_features(model, &ex.features)?;
        if ex.targets.len() != model.heads.len() {
            return Err(Error::Shape("head and target counts differ".into()));
        }
        let x = ArrayView1::from(&ex.features[..]);
        for (((w0, head), g_head), &t) in model
            .heads
            .iter()
            .zip(&adapter.heads)
            .zip(out.heads.iter_mut())
            .zip(&ex.targets)
        {
            let (l, ax) = head_logits(w0, head, s, x);
            let mut g = softmax(&l, 1.0);
            let pt = *g
                .get(t)
                .ok_or_else(|| Error::Shape(format!("target index {t} out of range")))?;
            if pt < PROB_FLOOR {
                clamped += 1;
            }
            total -= pt.max(PROB_FLOOR).ln();
            g[t] -= 1.0;
            let coef = s * inv_n;
            // dB += coef * g ⊗ ax
            for (i, &gi) in g.iter().enumerate() {
                let mut row = g_head.b.row_mut(i);
                row.scaled_add(coef * gi, &ax);
            }
            // dA += coef * (Bᵀ g) ⊗ x
            let btg = head.b.t().dot(&g);
            for (k, &bk) in btg.iter().enumerate() {
                let mut row = g_head.a.row_mut(k);
                row.scaled_add(coef * bk, &x);
            }
        }
    }
    Ok((
        out,
        LossValue {
            loss: total * inv_n,
            clamped,
        },
    ))
}
