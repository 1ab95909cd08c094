//! OOD projector training: objectives, exact backpropagation and AdamW.

mod checkpoint;
mod loss;
mod projector;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use loss::{
    hinge_energy_loss, hinge_loss_on_energies, rel_loss, sigmoid, softplus, HingeLossConfig,
    LossConfig, LossOutput, RelLossConfig,
};
pub use projector::{Linear, Projector};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng;
use projector::Activations;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Hidden width of both ReLU layers.
    pub hidden: usize,
    /// Number of in-distribution channels; the projector emits `2K` logits.
    pub k: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 8,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            hidden: 64,
            k: 4,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.hidden == 0 || self.k == 0 {
            return bad("batch_size, hidden and k must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        Ok(())
    }
}

/// Per-point features with their partition: `true` marks an auxiliary OOD
/// point, `false` an in-distribution point.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub features: FeatureMatrix,
    pub is_ood: Vec<bool>,
}

impl TrainSet {
    pub fn new(features: FeatureMatrix, is_ood: Vec<bool>) -> Result<Self> {
        if features.rows() != is_ood.len() {
            return Err(Error::LengthMismatch {
                expected: features.rows(),
                found: is_ood.len(),
            });
        }
        Ok(TrainSet { features, is_ood })
    }

    pub fn len(&self) -> usize {
        self.is_ood.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_ood.is_empty()
    }
}

/// Feature-wise affine normalisation fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; constant columns get
    /// unit scale.
    pub fn fit(x: &FeatureMatrix) -> Self {
        let (n, d) = (x.rows().max(1) as f64, x.cols());
        let mut mean = vec![0.0; d];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

/// Loss and exact parameter gradients of `loss_cfg` for a batch.
///
/// Rows are processed in order and gradients accumulated in that order, so
/// the result is bit-reproducible.
pub fn backward(
    p: &Projector,
    features: &FeatureMatrix,
    is_ood: &[bool],
    loss_cfg: &LossConfig,
) -> Result<(f64, Projector)> {
    p.check_input(features)?;
    let rows: Vec<usize> = (0..features.rows()).collect();
    let mut grads = p.zeros_like();
    let mut scratch = Scratch::new(p);
    let loss = backward_rows(p, features, is_ood, &rows, loss_cfg, &mut grads, &mut scratch)?;
    Ok((loss, grads))
}

struct Scratch {
    act: Vec<Activations>,
    stat_grad: Vec<f64>,
    d_logits: Vec<f64>,
    d_a2: Vec<f64>,
    d_a1: Vec<f64>,
    stats: Vec<f64>,
    ood: Vec<bool>,
}

impl Scratch {
    fn new(p: &Projector) -> Self {
        let [_, h1, h2, out] = p.dims();
        Scratch {
            act: Vec::new(),
            stat_grad: vec![0.0; out],
            d_logits: Vec::new(),
            d_a2: vec![0.0; h2],
            d_a1: vec![0.0; h1],
            stats: Vec::new(),
            ood: Vec::new(),
        }
    }
}

/// Accumulates gradients for `rows` of `features` into `grads` (which the
/// caller zeroes) and returns the batch loss.
fn backward_rows(
    p: &Projector,
    features: &FeatureMatrix,
    is_ood: &[bool],
    rows: &[usize],
    loss_cfg: &LossConfig,
    grads: &mut Projector,
    s: &mut Scratch,
) -> Result<f64> {
    if is_ood.len() != features.rows() {
        return Err(Error::LengthMismatch {
            expected: features.rows(),
            found: is_ood.len(),
        });
    }
    let k = p.k();
    let width = 2 * k;
    while s.act.len() < rows.len() {
        s.act.push(Activations::new(p));
    }
    s.d_logits.resize(rows.len() * width, 0.0);
    s.stats.clear();
    s.ood.clear();

    // Forward pass plus d(statistic)/d(logits) per row.
    for (b, &i) in rows.iter().enumerate() {
        let act = &mut s.act[b];
        act.forward(p, features.row(i));
        let g = &mut s.d_logits[b * width..(b + 1) * width];
        let stat = match loss_cfg {
            LossConfig::Rel(_) => loss::relative_energy_and_grad(&act.logits, k, g),
            LossConfig::Hinge(c) => loss::energy_and_grad(&act.logits, k, c.temperature, g),
        };
        s.stats.push(stat);
        s.ood.push(is_ood[i]);
    }

    let out = match loss_cfg {
        LossConfig::Rel(c) => loss::rel_loss_on(&s.stats, &s.ood, c)?,
        LossConfig::Hinge(c) => hinge_loss_on_energies(&s.stats, &s.ood, c)?,
    };

    let [g1, g2, g3] = &mut grads.layers;
    let [l1, l2, l3] = &p.layers;
    for (b, &i) in rows.iter().enumerate() {
        let act = &s.act[b];
        let dl = out.grad[b];
        if dl == 0.0 {
            continue;
        }
        for (d, &g) in s.stat_grad.iter_mut().zip(&s.d_logits[b * width..(b + 1) * width]) {
            *d = dl * g;
        }
        // Output layer.
        s.d_a2.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..l3.n_out {
            let d = s.stat_grad[o];
            g3.bias[o] += d;
            let w = &l3.weight[o * l3.n_in..(o + 1) * l3.n_in];
            let gw = &mut g3.weight[o * l3.n_in..(o + 1) * l3.n_in];
            for j in 0..l3.n_in {
                gw[j] += d * act.a2[j];
                s.d_a2[j] += d * w[j];
            }
        }
        // Second hidden layer.
        s.d_a1.iter_mut().for_each(|v| *v = 0.0);
        for o in 0..l2.n_out {
            if act.z2[o] <= 0.0 {
                continue;
            }
            let d = s.d_a2[o];
            g2.bias[o] += d;
            let w = &l2.weight[o * l2.n_in..(o + 1) * l2.n_in];
            let gw = &mut g2.weight[o * l2.n_in..(o + 1) * l2.n_in];
            for j in 0..l2.n_in {
                gw[j] += d * act.a1[j];
                s.d_a1[j] += d * w[j];
            }
        }
        // First hidden layer.
        let x = features.row(i);
        for o in 0..l1.n_out {
            if act.z1[o] <= 0.0 {
                continue;
            }
            let d = s.d_a1[o];
            g1.bias[o] += d;
            let gw = &mut g1.weight[o * l1.n_in..(o + 1) * l1.n_in];
            for j in 0..l1.n_in {
                gw[j] += d * x[j];
            }
        }
    }
    Ok(out.loss)
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Projector,
    v: Projector,
    t: i32,
}

impl AdamW {
    pub fn new(p: &Projector, cfg: &TrainConfig) -> Self {
        AdamW {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Projector, grads: &Projector) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let ps = params.tensors_mut();
        let gs = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[j]);
            }
        }
    }
}

/// Trains `projector` with AdamW over shuffled mini-batches.
///
/// Each epoch reshuffles the rows with a generator seeded by
/// `cfg.rng_seed` (stream 0) and performs `ceil(N / batch_size)` steps. The
/// returned history holds the mean batch loss of every epoch.
pub fn train(
    projector: &Projector,
    data: &TrainSet,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<(Projector, Vec<f64>)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    projector.check_input(&data.features)?;
    let n_aux = data.is_ood.iter().filter(|&&o| o).count();
    if data.is_empty() || n_aux == 0 || n_aux == data.len() {
        return Err(Error::EmptyDataset);
    }

    let mut p = projector.clone();
    let mut opt = AdamW::new(&p, cfg);
    let mut grads = p.zeros_like();
    let mut scratch = Scratch::new(&p);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::stream(cfg.rng_seed, 0);
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
            total += backward_rows(
                &p,
                &data.features,
                &data.is_ood,
                batch,
                loss_cfg,
                &mut grads,
                &mut scratch,
            )?;
            opt.step(&mut p, &grads);
            batches += 1;
        }
        history.push(total / batches as f64);
    }
    Ok((p, history))
}
