//! Bag-of-token featurization of instructions and the categorical output
//! heads of the surrogate model.

use std::collections::HashMap;

use crate::corpus::{
    DesignParams, APPROX_MODES, ARRAY_DIMS, MAX_DATA_WIDTH, MAX_TILING, MIN_DATA_WIDTH,
};
use crate::error::{Error, Result};

/// Template words shared by every generated instruction.
const TEMPLATE_WORDS: [&str; 12] = [
    "generate",
    "a",
    "systolic",
    "array",
    "with",
    "data",
    "width",
    "approximation",
    "mode",
    "and",
    "memory",
    "tiling",
];

/// One output head per design parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    ArrayDim,
    DataWidth,
    ApproxMode,
    Tiling,
}

impl Head {
    pub const ALL: [Head; 4] = [
        Head::ArrayDim,
        Head::DataWidth,
        Head::ApproxMode,
        Head::Tiling,
    ];

    /// Values the head can emit, in logit order.
    pub fn values(self) -> Vec<u32> {
        match self {
            Head::ArrayDim => ARRAY_DIMS.to_vec(),
            Head::DataWidth => (MIN_DATA_WIDTH..=MAX_DATA_WIDTH).collect(),
            Head::ApproxMode => (0..APPROX_MODES).collect(),
            Head::Tiling => (1..=MAX_TILING).collect(),
        }
    }

    pub fn cardinality(self) -> usize {
        self.values().len()
    }

    fn pick(self, p: &DesignParams) -> u32 {
        match self {
            Head::ArrayDim => p.array_dim,
            Head::DataWidth => p.data_width,
            Head::ApproxMode => p.approx_mode,
            Head::Tiling => p.tiling,
        }
    }

    fn token(self, value: u32) -> String {
        match self {
            Head::ArrayDim => format!("{value}x{value}"),
            Head::DataWidth => format!("{value}-bit"),
            Head::ApproxMode => value.to_string(),
            Head::Tiling => format!("{value}-way"),
        }
    }
}

/// Class indices of `params`, one per head.
pub fn encode_targets(params: &DesignParams) -> Result<Vec<usize>> {
    Head::ALL
        .iter()
        .map(|&h| {
            let v = h.pick(params);
            h.values().iter().position(|&x| x == v).ok_or_else(|| {
                Error::validation(format!("{h:?} value {v} is outside the model's range"))
            })
        })
        .collect()
}

pub fn decode_targets(indices: &[usize]) -> Result<DesignParams> {
    if indices.len() != Head::ALL.len() {
        return Err(Error::Shape(format!(
            "expected 4 head indices, got {}",
            indices.len()
        )));
    }
    let value = |h: Head, i: usize| {
        h.values()
            .get(i)
            .copied()
            .ok_or_else(|| Error::Shape(format!("{h:?} index {i} out of range")))
    };
    Ok(DesignParams {
        array_dim: value(Head::ArrayDim, indices[0])?,
        data_width: value(Head::DataWidth, indices[1])?,
        approx_mode: value(Head::ApproxMode, indices[2])?,
        tiling: value(Head::Tiling, indices[3])?,
    })
}

/// Fixed-vocabulary token counter. The last two feature slots are the shared
/// out-of-vocabulary bucket and a constant bias.
#[derive(Debug, Clone)]
pub struct Featurizer {
    vocab: HashMap<String, usize>,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Featurizer {
    pub fn new() -> Self {
        let mut tokens: Vec<String> = TEMPLATE_WORDS.iter().map(|s| s.to_string()).collect();
        for h in Head::ALL {
            tokens.extend(h.values().into_iter().map(|v| h.token(v)));
        }
        let vocab = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Featurizer { vocab }
    }

    pub fn dim(&self) -> usize {
        self.vocab.len() + 2
    }

    pub fn oov_index(&self) -> usize {
        self.vocab.len()
    }

    pub fn bias_index(&self) -> usize {
        self.vocab.len() + 1
    }

    /// Feature slot owned by `token`, if it is in the vocabulary.
    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split_whitespace()
            .map(|t| {
                t.trim_matches(|c: char| c.is_ascii_punctuation() && c != '-')
                    .to_lowercase()
            })
            .filter(|t| !t.is_empty())
    }

    pub fn featurize(&self, instruction: &str) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for tok in Self::tokenize(instruction) {
            let slot = self.vocab.get(&tok).copied().unwrap_or(self.oov_index());
            x[slot] += 1.0;
        }
        x[self.bias_index()] = 1.0;
        x
    }
}
