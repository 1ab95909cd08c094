use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::energy::LogitField;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Fully connected layer, weights stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn uniform(n_in: usize, n_out: usize, limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let weight = (0..n_in * n_out)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Linear {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, out_o) in out.iter_mut().enumerate() {
            let w = &self.weight[o * self.n_in..(o + 1) * self.n_in];
            *out_o = self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Three-layer ReLU head mapping per-point features to `2K` logits.
///
/// `d_in -> h1 -> ReLU -> h2 -> ReLU -> 2K`; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub layers: [Linear; 3],
}

impl Projector {
    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn new(d_in: usize, d_hidden: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let l1 = Linear::uniform(d_in, d_hidden, he(d_in), rng);
        let l2 = Linear::uniform(d_hidden, d_hidden, he(d_hidden), rng);
        let glorot = (6.0 / (d_hidden + 2 * k) as f64).sqrt();
        let l3 = Linear::uniform(d_hidden, 2 * k, glorot, rng);
        Projector {
            layers: [l1, l2, l3],
        }
    }

    pub fn zeros(d_in: usize, d_hidden: usize, k: usize) -> Self {
        Projector {
            layers: [
                Linear::zeros(d_in, d_hidden),
                Linear::zeros(d_hidden, d_hidden),
                Linear::zeros(d_hidden, 2 * k),
            ],
        }
    }

    /// Builds a projector from explicit layers, checking that they chain.
    pub fn from_layers(layers: [Linear; 3]) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::DimensionMismatch {
                    expected: w[0].n_out,
                    found: w[1].n_in,
                });
            }
        }
        for l in &layers {
            if l.weight.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::DimensionMismatch {
                    expected: l.n_in * l.n_out,
                    found: l.weight.len(),
                });
            }
        }
        let out = layers[2].n_out;
        if out == 0 || out % 2 != 0 {
            return Err(Error::OddLength(out));
        }
        Ok(Projector { layers })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn k(&self) -> usize {
        self.layers[2].n_out / 2
    }

    /// Layer widths `[d_in, h1, h2, 2K]`.
    pub fn dims(&self) -> [usize; 4] {
        [
            self.layers[0].n_in,
            self.layers[0].n_out,
            self.layers[1].n_out,
            self.layers[2].n_out,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Same-shaped projector with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let [d_in, h1, h2, out] = self.dims();
        Projector {
            layers: [
                Linear::zeros(d_in, h1),
                Linear::zeros(h1, h2),
                Linear::zeros(h2, out),
            ],
        }
    }

    /// Parameter tensors in a fixed order: `w1, b1, w2, b2, w3, b3`.
    pub fn tensors(&self) -> [&[f64]; 6] {
        let [a, b, c] = &self.layers;
        [&a.weight, &a.bias, &b.weight, &b.bias, &c.weight, &c.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        let [a, b, c] = &mut self.layers;
        [
            &mut a.weight,
            &mut a.bias,
            &mut b.weight,
            &mut b.bias,
            &mut c.weight,
            &mut c.bias,
        ]
    }

    pub fn check_input(&self, features: &FeatureMatrix) -> Result<()> {
        if features.cols() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                found: features.cols(),
            });
        }
        Ok(())
    }

    /// Logits for every feature row.
    pub fn forward(&self, features: &FeatureMatrix) -> Result<LogitField> {
        self.check_input(features)?;
        let mut act = Activations::new(self);
        let mut out = Vec::with_capacity(features.rows() * 2 * self.k());
        for i in 0..features.rows() {
            act.forward(self, features.row(i));
            out.extend_from_slice(&act.logits);
        }
        LogitField::new(out, self.k())
    }

    /// Rewrites the first layer so that the projector consumes raw features
    /// `x` while computing what it previously computed on `(x - mean) / std`.
    pub fn fold_input_affine(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let l = &mut self.layers[0];
        if mean.len() != l.n_in || std.len() != l.n_in {
            return Err(Error::DimensionMismatch {
                expected: l.n_in,
                found: mean.len(),
            });
        }
        for o in 0..l.n_out {
            let row = &mut l.weight[o * l.n_in..(o + 1) * l.n_in];
            let mut shift = 0.0;
            for j in 0..row.len() {
                row[j] /= std[j];
                shift += row[j] * mean[j];
            }
            l.bias[o] -= shift;
        }
        Ok(())
    }
}

/// Per-row forward buffers, reused across rows.
pub(crate) struct Activations {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub a2: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Activations {
    pub fn new(p: &Projector) -> Self {
        let [_, h1, h2, out] = p.dims();
        Activations {
            z1: vec![0.0; h1],
            a1: vec![0.0; h1],
            z2: vec![0.0; h2],
            a2: vec![0.0; h2],
            logits: vec![0.0; out],
        }
    }

    pub fn forward(&mut self, p: &Projector, x: &[f64]) {
        let [l1, l2, l3] = &p.layers;
        l1.apply(x, &mut self.z1);
        relu(&self.z1, &mut self.a1);
        l2.apply(&self.a1, &mut self.z2);
        relu(&self.z2, &mut self.a2);
        l3.apply(&self.a2, &mut self.logits);
    }
}

fn relu(z: &[f64], a: &mut [f64]) {
    for (a, &z) in a.iter_mut().zip(z) {
        *a = z.max(0.0);
    }
}
