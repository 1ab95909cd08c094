//! Energy arithmetic on logit vectors.
//!
//! A logit vector of length `2K` is split into a positive half (channels
//! `[0, K)`, the in-distribution classes) and a negative half (channels
//! `[K, 2K)`, their OOD surrogates). The relative energy
//!
//! ```text
//! ΔE = logsumexp(negative) - logsumexp(positive)
//! ```
//!
//! is the log-odds of the negative group under a softmax over all `2K`
//! channels, and serves as the per-point OOD score: larger means more OOD.

use crate::error::{Error, Result};

/// Max-shifted `log Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Free energy `-T log Σ exp(f_i / T)`.
pub fn free_energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if logits.is_empty() {
        return Err(Error::LengthMismatch {
            expected: 1,
            found: 0,
        });
    }
    if temperature == 1.0 {
        return Ok(-log_sum_exp(logits));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|&f| ((f - m) / temperature).exp()).sum();
    Ok(-(m + temperature * s.ln()))
}

fn split_halves(logits: &[f64]) -> Result<(&[f64], &[f64])> {
    if logits.is_empty() || logits.len() % 2 != 0 {
        return Err(Error::OddLength(logits.len()));
    }
    Ok(logits.split_at(logits.len() / 2))
}

/// Relative energy margin of one `2K` logit vector.
pub fn relative_energy(logits: &[f64]) -> Result<f64> {
    let (pos, neg) = split_halves(logits)?;
    Ok(log_sum_exp(neg) - log_sum_exp(pos))
}

/// Softmax mass of the positive and negative halves.
pub fn grouped_probabilities(logits: &[f64]) -> Result<(f64, f64)> {
    let (pos, neg) = split_halves(logits)?;
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_pos: f64 = pos.iter().map(|&f| (f - m).exp()).sum();
    let s_neg: f64 = neg.iter().map(|&f| (f - m).exp()).sum();
    let z = s_pos + s_neg;
    Ok((s_pos / z, s_neg / z))
}

/// Row-major `N x 2K` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    values: Vec<f64>,
    rows: usize,
    k: usize,
}

impl LogitField {
    pub fn new(values: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::OddLength(0));
        }
        if values.len() % (2 * k) != 0 {
            return Err(Error::DimensionMismatch {
                expected: 2 * k,
                found: values.len() % (2 * k),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("logits must be finite".into()));
        }
        Ok(LogitField {
            rows: values.len() / (2 * k),
            values,
            k,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn width(&self) -> usize {
        2 * self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Positive-half channels of row `i`.
    pub fn positive(&self, i: usize) -> &[f64] {
        &self.row(i)[..self.k]
    }

    /// Free energy of every row's positive half.
    pub fn positive_energies(&self, temperature: f64) -> Result<Vec<f64>> {
        (0..self.rows)
            .map(|i| free_energy(self.positive(i), temperature))
            .collect()
    }
}

/// Per-point relative energies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    pub delta_e: Vec<f64>,
}

impl ScoreField {
    pub fn len(&self) -> usize {
        self.delta_e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta_e.is_empty()
    }
}

pub fn score_field(field: &LogitField) -> ScoreField {
    let delta_e = (0..field.rows())
        .map(|i| {
            let (pos, neg) = field.row(i).split_at(field.k());
            log_sum_exp(neg) - log_sum_exp(pos)
        })
        .collect();
    ScoreField { delta_e }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Id,
    Ood,
}

/// Thresholds scores: OOD iff `ΔE > tau`, ties go to ID.
pub fn classify(scores: &ScoreField, tau: f64) -> Vec<Decision> {
    scores
        .delta_e
        .iter()
        .map(|&s| if s > tau { Decision::Ood } else { Decision::Id })
        .collect()
}
