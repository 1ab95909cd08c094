//! Training objectives over per-point statistics.
//!
//! Both objectives average separately over the in-distribution points and the
//! auxiliary (synthesized OOD) points of a batch; a partition with no points
//! contributes nothing.

use serde::{Deserialize, Serialize};

use crate::energy::{LogitField, ScoreField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelLossConfig {
    /// Weight of the auxiliary term.
    pub omega: f64,
}

impl Default for RelLossConfig {
    fn default() -> Self {
        RelLossConfig { omega: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HingeLossConfig {
    pub m_in: f64,
    pub m_out: f64,
    pub temperature: f64,
}

impl Default for HingeLossConfig {
    fn default() -> Self {
        HingeLossConfig {
            m_in: -10.0,
            m_out: -5.0,
            temperature: 1.0,
        }
    }
}

/// Objective selector. Serialized as `{"kind": "rel", "omega": 100}` or
/// `{"kind": "hinge", "m_in": -10, ...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossConfig {
    Rel(RelLossConfig),
    Hinge(HingeLossConfig),
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Rel(RelLossConfig::default())
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossConfig::Rel(c) if !(c.omega > 0.0 && c.omega.is_finite()) => Err(
                Error::InvalidConfig(format!("omega must be positive, got {}", c.omega)),
            ),
            LossConfig::Hinge(c) if !(c.temperature > 0.0) => {
                Err(Error::NonPositiveTemperature(c.temperature))
            }
            LossConfig::Hinge(c) if !(c.m_in.is_finite() && c.m_out.is_finite()) => {
                Err(Error::InvalidConfig("hinge margins must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossConfig::Rel(_) => "rel",
            LossConfig::Hinge(_) => "hinge",
        }
    }

    /// The OOD score the objective trains: relative energy for REL, the
    /// positive-half free energy for the hinge baseline. Larger is more OOD.
    pub fn scores(&self, field: &LogitField) -> Result<Vec<f64>> {
        match self {
            LossConfig::Rel(_) => Ok(crate::energy::score_field(field).delta_e),
            LossConfig::Hinge(c) => field.positive_energies(c.temperature),
        }
    }

    /// Natural decision threshold on [`LossConfig::scores`]: zero log-odds
    /// for REL, the midpoint of the two margins for the hinge objective.
    pub fn default_threshold(&self) -> f64 {
        match self {
            LossConfig::Rel(_) => 0.0,
            LossConfig::Hinge(c) => 0.5 * (c.m_in + c.m_out),
        }
    }
}

/// Loss value and its gradient with respect to each point's statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `log(1 + e^t)` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn partition_counts(is_ood: &[bool]) -> (usize, usize) {
    let n_aux = is_ood.iter().filter(|&&o| o).count();
    (is_ood.len() - n_aux, n_aux)
}

fn check_len(n: usize, is_ood: &[bool]) -> Result<()> {
    if n != is_ood.len() {
        return Err(Error::LengthMismatch {
            expected: n,
            found: is_ood.len(),
        });
    }
    Ok(())
}

/// Imbalance-weighted logistic loss on relative energies:
/// `mean_in softplus(ΔE) + omega * mean_aux softplus(-ΔE)`.
pub fn rel_loss(scores: &ScoreField, is_ood: &[bool], cfg: &RelLossConfig) -> Result<LossOutput> {
    rel_loss_on(&scores.delta_e, is_ood, cfg)
}

pub(crate) fn rel_loss_on(delta_e: &[f64], is_ood: &[bool], cfg: &RelLossConfig) -> Result<LossOutput> {
    check_len(delta_e.len(), is_ood)?;
    let (n_in, n_aux) = partition_counts(is_ood);
    let (mut sum_in, mut sum_aux) = (0.0, 0.0);
    let mut grad = Vec::with_capacity(delta_e.len());
    for (&d, &ood) in delta_e.iter().zip(is_ood) {
        if ood {
            sum_aux += softplus(-d);
            grad.push(-cfg.omega * sigmoid(-d) / n_aux as f64);
        } else {
            sum_in += softplus(d);
            grad.push(sigmoid(d) / n_in as f64);
        }
    }
    let mut loss = 0.0;
    if n_in > 0 {
        loss += sum_in / n_in as f64;
    }
    if n_aux > 0 {
        loss += cfg.omega * sum_aux / n_aux as f64;
    }
    Ok(LossOutput { loss, grad })
}

/// Squared-hinge energy loss on precomputed energies:
/// `mean_in max(0, E - m_in)^2 + mean_ood max(0, m_out - E)^2`.
pub fn hinge_loss_on_energies(
    energies: &[f64],
    is_ood: &[bool],
    cfg: &HingeLossConfig,
) -> Result<LossOutput> {
    check_len(energies.len(), is_ood)?;
    let (n_in, n_aux) = partition_counts(is_ood);
    let (mut sum_in, mut sum_aux) = (0.0, 0.0);
    let mut grad = Vec::with_capacity(energies.len());
    for (&e, &ood) in energies.iter().zip(is_ood) {
        if ood {
            let gap = (cfg.m_out - e).max(0.0);
            sum_aux += gap * gap;
            grad.push(-2.0 * gap / n_aux as f64);
        } else {
            let gap = (e - cfg.m_in).max(0.0);
            sum_in += gap * gap;
            grad.push(2.0 * gap / n_in as f64);
        }
    }
    let mut loss = 0.0;
    if n_in > 0 {
        loss += sum_in / n_in as f64;
    }
    if n_aux > 0 {
        loss += sum_aux / n_aux as f64;
    }
    Ok(LossOutput { loss, grad })
}

/// Hinge loss from logits; energies use only the positive half at
/// `cfg.temperature`. Gradients are with respect to those energies.
pub fn hinge_energy_loss(
    field: &LogitField,
    is_ood: &[bool],
    cfg: &HingeLossConfig,
) -> Result<LossOutput> {
    let energies = field.positive_energies(cfg.temperature)?;
    hinge_loss_on_energies(&energies, is_ood, cfg)
}

/// Energy of the positive half and its gradient with respect to every
/// channel (`-softmax(f/T)` on positives, zero on negatives).
pub(crate) fn energy_and_grad(logits: &[f64], k: usize, temperature: f64, grad: &mut [f64]) -> f64 {
    let pos = &logits[..k];
    let m = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (g, &f) in grad[..k].iter_mut().zip(pos) {
        *g = ((f - m) / temperature).exp();
        s += *g;
    }
    for g in &mut grad[..k] {
        *g = -*g / s;
    }
    for g in &mut grad[k..] {
        *g = 0.0;
    }
    -(m + temperature * s.ln())
}

/// Relative energy and its gradient with respect to every channel
/// (`-softmax` within the positive half, `+softmax` within the negative half).
pub(crate) fn relative_energy_and_grad(logits: &[f64], k: usize, grad: &mut [f64]) -> f64 {
    let mut half = |range: std::ops::Range<usize>, sign: f64| {
        let v = &logits[range.clone()];
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (g, &f) in grad[range.clone()].iter_mut().zip(v) {
            *g = (f - m).exp();
            s += *g;
        }
        for g in &mut grad[range] {
            *g *= sign / s;
        }
        m + s.ln()
    };
    let lse_pos = half(0..k, -1.0);
    let lse_neg = half(k..2 * k, 1.0);
    lse_neg - lse_pos
}
