//! Parameters of the excess-Gibbs network.

use gibbsnet_autodiff::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::LipschitzLinear;
use crate::{Error, Result};

/// Width of every hidden representation.
pub const HIDDEN: usize = 96;
/// Mixture network input: refined embedding, projected fraction, temperature.
pub const MIXTURE_INPUT: usize = HIDDEN + 2;
/// Similarity sharpness in `exp(-k ‖θ_i - θ_j‖²)`.
pub const SIMILARITY_SHARPNESS: f64 = 100.0;

pub const EMBEDDING_LAYER: usize = 0;
pub const MIXTURE_LAYERS: [usize; 2] = [1, 2];
pub const PROPERTY_LAYERS: [usize; 2] = [3, 4];
pub const LAYER_COUNT: usize = 5;

/// Per-dimension standardisation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Scaler {
    /// Population mean and standard deviation, with the deviation floored.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut m2: Vec<f64> = Vec::new();
        // Welford's update keeps constant columns at exactly zero variance.
        for row in rows {
            if n == 0 {
                mean = vec![0.0; row.len()];
                m2 = vec![0.0; row.len()];
            } else if row.len() != mean.len() {
                return Err(Error::Dimension {
                    what: "scaler row",
                    expected: mean.len(),
                    found: row.len(),
                });
            }
            n += 1;
            for ((m, s), &v) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let delta = v - *m;
                *m += delta / n as f64;
                *s += delta * (v - *m);
            }
        }
        if n == 0 {
            return Err(Error::Data("cannot fit a scaler on an empty set".into()));
        }
        let std = m2.iter().map(|s| (s / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_fitted(&self) -> bool {
        !self.mean.is_empty() && self.mean.len() == self.std.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// All learnable state: five Lipschitz layers and the input scalers.
///
/// Layer order: embedding (`D → 96`), mixture (`98 → 96 → 96`),
/// property (`96 → 96 → 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub embedding_scaler: Scaler,
    pub temperature_scaler: Scaler,
    pub layers: Vec<LipschitzLinear>,
}

/// `(out, in)` of every layer for embedding dimension `dim`.
pub fn layer_shapes(dim: usize) -> [(usize, usize); LAYER_COUNT] {
    [
        (HIDDEN, dim),
        (HIDDEN, MIXTURE_INPUT),
        (HIDDEN, HIDDEN),
        (HIDDEN, HIDDEN),
        (1, HIDDEN),
    ]
}

impl ModelParams {
    pub fn init(dim: usize, seed: u64, embedding_scaler: Scaler, temperature_scaler: Scaler) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_shapes(dim)
            .iter()
            .map(|&(o, i)| LipschitzLinear::new(o, i, &mut rng))
            .collect();
        Self {
            dim,
            embedding_scaler,
            temperature_scaler,
            layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != LAYER_COUNT {
            return Err(Error::Dimension {
                what: "layer count",
                expected: LAYER_COUNT,
                found: self.layers.len(),
            });
        }
        for (layer, (o, i)) in self.layers.iter().zip(layer_shapes(self.dim)) {
            if layer.weight.shape() != (o, i)
                || layer.bias.len() != o
                || layer.u.len() != o
                || layer.v.len() != i
            {
                return Err(Error::Dimension {
                    what: "layer shape",
                    expected: o * i,
                    found: layer.weight.len(),
                });
            }
        }
        if !self.embedding_scaler.is_fitted() || self.embedding_scaler.dim() != self.dim {
            return Err(Error::Unfitted("embedding"));
        }
        if !self.temperature_scaler.is_fitted() || self.temperature_scaler.dim() != 1 {
            return Err(Error::Unfitted("temperature"));
        }
        Ok(())
    }

    /// Product of the per-layer Lipschitz bounds.
    pub fn lipschitz_product(&self) -> f64 {
        self.layers.iter().map(|l| l.lipschitz_bound()).product()
    }

    pub fn power_iteration(&mut self, iterations: usize) {
        for l in &mut self.layers {
            l.power_iteration(iterations);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len() + 1).sum()
    }

    pub fn scale_temperature(&self, t: f64) -> f64 {
        (t - self.temperature_scaler.mean[0]) / self.temperature_scaler.std[0]
    }

    /// Scaled embeddings as rows of a tensor.
    pub fn scale_embeddings(&self, vectors: &Tensor) -> Result<Tensor> {
        if !self.embedding_scaler.is_fitted() {
            return Err(Error::Unfitted("embedding"));
        }
        if vectors.cols() != self.dim {
            return Err(Error::Dimension {
                what: "embedding dimension",
                expected: self.dim,
                found: vectors.cols(),
            });
        }
        let mut out = Vec::with_capacity(vectors.len());
        for r in 0..vectors.rows() {
            out.extend(self.embedding_scaler.transform(vectors.row_slice(r)));
        }
        Ok(Tensor::new(vectors.rows(), vectors.cols(), out))
    }
}

/// Gradients with the same layout as the learnable part of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Tensor>,
    pub bias: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            weight: p
                .layers
                .iter()
                .map(|l| Tensor::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            bias: p.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            c: vec![0.0; p.layers.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            a.add_assign(b);
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.c.iter_mut().zip(&other.c).for_each(|(x, y)| *x += y);
    }

    pub fn scale(&mut self, f: f64) {
        for w in &mut self.weight {
            w.data_mut().iter_mut().for_each(|x| *x *= f);
        }
        for b in &mut self.bias {
            b.iter_mut().for_each(|x| *x *= f);
        }
        self.c.iter_mut().for_each(|x| *x *= f);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(|w| w.is_finite())
            && self.bias.iter().flatten().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gibbsnet_autodiff::functions::softplus_inverse;

    #[test]
    fn scaler_examples() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]];
        let s = Scaler::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(s.std[1], STD_FLOOR);
        assert_eq!(s.transform(&[2.0, 5.0]), vec![0.0, 0.0]);
        let z = s.transform(&[2.7, 4.0]);
        let back = s.inverse(&z);
        assert!((back[0] - 2.7).abs() < 1e-12 && (back[1] - 4.0).abs() < 1e-12);
        assert!(Scaler::fit(std::iter::empty()).is_err());
    }

    #[test]
    fn lipschitz_product_examples() {
        let mut p = ModelParams::init(8, 0, Scaler::identity(8), Scaler::identity(1));
        assert!((p.lipschitz_product() - 1.0).abs() < 1e-14);
        for l in &mut p.layers {
            l.c = softplus_inverse(2.0);
        }
        assert!((p.lipschitz_product() - 32.0).abs() < 1e-12);
        p.layers[2].c = -800.0;
        assert_eq!(p.lipschitz_product(), 0.0);
    }

    #[test]
    fn shapes() {
        let p = ModelParams::init(384, 3, Scaler::identity(384), Scaler::identity(1));
        p.validate().unwrap();
        assert_eq!(p.layers[0].weight.shape(), (96, 384));
        assert_eq!(p.layers[1].weight.shape(), (96, 98));
        assert_eq!(p.layers[4].weight.shape(), (1, 96));
        let unfitted = ModelParams::init(4, 3, Scaler::default(), Scaler::identity(1));
        assert!(matches!(unfitted.validate(), Err(Error::Unfitted(_))));
    }
}
