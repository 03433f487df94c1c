use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::huffman::HuffmanCoding;
use crate::data::{Vocabulary, WordKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SoftmaxMode {
    /// Product of binary decisions along the target's Huffman path.
    #[default]
    Hierarchical,
    /// Full normalization over the output vocabulary.
    Exact,
}

impl SoftmaxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SoftmaxMode::Hierarchical => "hierarchical",
            SoftmaxMode::Exact => "exact",
        }
    }
}

impl fmt::Display for SoftmaxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SoftmaxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hierarchical" | "hs" => Ok(SoftmaxMode::Hierarchical),
            "exact" => Ok(SoftmaxMode::Exact),
            _ => Err(Error::arg(format!("unknown softmax mode `{s}`"))),
        }
    }
}

/// A trained (or initialized) CBOW model for one word kind.
///
/// `input_weights` holds one row per input word; those rows are the word
/// vectors. `output_weights` holds one row per inner Huffman node in
/// hierarchical mode and one row per output word in exact mode. The output
/// vocabulary normally equals the input vocabulary; it differs only for
/// cross-kind training, where location words are predicted from feature
/// words.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub kind: WordKind,
    pub output_kind: WordKind,
    pub vocabulary: Vocabulary,
    pub output_vocabulary: Vocabulary,
    pub dim: usize,
    pub mode: SoftmaxMode,
    pub input_weights: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub huffman: HuffmanCoding,
}

impl EmbeddingSpace {
    /// Input rows uniform in `[-0.5/N, 0.5/N]`, output rows zero.
    pub fn initialize(
        vocabulary: Vocabulary,
        kind: WordKind,
        output: Option<(Vocabulary, WordKind)>,
        dim: usize,
        mode: SoftmaxMode,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be at least 1"));
        }
        let (output_vocabulary, output_kind) = output.unwrap_or_else(|| (vocabulary.clone(), kind));
        if output_vocabulary.len() < 2 {
            return Err(Error::Training(format!(
                "output vocabulary has {} word(s); at least 2 are required",
                output_vocabulary.len()
            )));
        }
        if vocabulary.is_empty() {
            return Err(Error::Training("empty input vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let input_weights = (0..vocabulary.len() * dim)
            .map(|_| rng.gen_range(-half..=half))
            .collect();
        let huffman = HuffmanCoding::build(output_vocabulary.counts());
        let rows = match mode {
            SoftmaxMode::Hierarchical => output_vocabulary.len() - 1,
            SoftmaxMode::Exact => output_vocabulary.len(),
        };
        Ok(EmbeddingSpace {
            kind,
            output_kind,
            vocabulary,
            output_vocabulary,
            dim,
            mode,
            input_weights,
            output_weights: vec![0.0; rows * dim],
            huffman,
        })
    }

    /// Every weight drawn uniformly from `[-scale, scale]`, including the
    /// output rows. Useful for gradient checks, where zero output weights
    /// would make the input gradient vanish.
    pub fn random(
        vocabulary: Vocabulary,
        kind: WordKind,
        dim: usize,
        mode: SoftmaxMode,
        scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut s = EmbeddingSpace::initialize(vocabulary, kind, None, dim, mode, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        for w in s.input_weights.iter_mut().chain(s.output_weights.iter_mut()) {
            *w = rng.gen_range(-scale..=scale);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocabulary.is_empty()
    }

    pub fn output_len(&self) -> usize {
        self.output_vocabulary.len()
    }

    pub fn output_rows(&self) -> usize {
        self.output_weights.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.input_weights[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_row(&self, j: usize) -> &[f64] {
        &self.output_weights[j * self.dim..(j + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocabulary.get(token).map(|i| self.row(i))
    }

    pub fn is_finite(&self) -> bool {
        self.input_weights
            .iter()
            .chain(&self.output_weights)
            .all(|w| w.is_finite())
    }

    /// Mean of the context rows.
    pub fn hidden(&self, context: &[usize]) -> Result<Vec<f64>> {
        let rows: Vec<&[f64]> = context
            .iter()
            .map(|&i| {
                if i < self.len() {
                    Ok(self.row(i))
                } else {
                    Err(Error::arg(format!("context index {i} out of range")))
                }
            })
            .collect::<Result<_>>()?;
        context_mean(&rows).ok_or_else(|| Error::arg("empty context"))
    }

    /// `p(target | context)` for a hidden-layer vector.
    pub fn target_probability(&self, hidden: &[f64], target: usize) -> Result<f64> {
        Ok((-self.target_loss(hidden, target)?).exp())
    }

    /// `-log p(target | context)` for a hidden-layer vector.
    pub fn target_loss(&self, hidden: &[f64], target: usize) -> Result<f64> {
        if target >= self.output_len() {
            return Err(Error::arg(format!(
                "target {target} outside vocabulary of {}",
                self.output_len()
            )));
        }
        if hidden.len() != self.dim {
            return Err(Error::arg("hidden vector has wrong dimension"));
        }
        Ok(match self.mode {
            SoftmaxMode::Hierarchical => self
                .huffman
                .code(target)
                .iter()
                .zip(self.huffman.path(target))
                .map(|(&bit, &node)| {
                    decision_loss(dot(self.output_row(node as usize), hidden), bit)
                })
                .sum(),
            SoftmaxMode::Exact => {
                let scores: Vec<f64> = (0..self.output_len())
                    .map(|j| dot(self.output_row(j), hidden))
                    .collect();
                log_sum_exp(&scores) - scores[target]
            }
        })
    }

    /// CBOW loss of one (context, target) sample.
    pub fn loss(&self, context: &[usize], target: usize) -> Result<f64> {
        let h = self.hidden(context)?;
        self.target_loss(&h, target)
    }
}

/// Element-wise mean. `None` for an empty list.
pub fn context_mean(vectors: &[&[f64]]) -> Option<Vec<f64>> {
    let first = vectors.first()?;
    let mut out = vec![0.0; first.len()];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let k = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= k);
    Some(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Loss of one branch decision. Bit 0 is taken with probability `σ(x)`,
/// bit 1 with `1 - σ(x)`.
pub(crate) fn decision_loss(x: f64, bit: u8) -> f64 {
    if bit == 0 {
        softplus(-x)
    } else {
        softplus(x)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
