//! Linear layers whose spectral norm is normalised away and replaced by a
//! learnable bound `softplus(c)`.

use gibbsnet_autodiff::functions::{softplus, softplus_inverse};
use gibbsnet_autodiff::{matmul_nt, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

/// Power iterations applied to a freshly initialised layer.
pub const WARMUP_ITERATIONS: usize = 15;
/// Power iterations per training step.
pub const TRAIN_ITERATIONS: usize = 2;

const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzLinear {
    /// Raw weight, `out × in`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    /// Pre-softplus Lipschitz bound.
    pub c: f64,
    /// Left singular vector estimate (`out`).
    pub u: Vec<f64>,
    /// Right singular vector estimate (`in`).
    pub v: Vec<f64>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(NORMALIZE_EPS);
    v.iter_mut().for_each(|a| *a /= n);
}

/// `W v`
pub fn mat_vec(w: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row_slice(r).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Wᵀ u`
pub fn mat_t_vec(w: &Tensor, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &ur) in u.iter().enumerate() {
        for (o, &a) in out.iter_mut().zip(w.row_slice(r)) {
            *o += a * ur;
        }
    }
    out
}

/// One power-iteration update of `(u, v)` for `W`.
pub fn power_step(w: &Tensor, u: &mut Vec<f64>, v: &mut Vec<f64>) {
    *v = mat_t_vec(w, u);
    normalize(v);
    *u = mat_vec(w, v);
    normalize(u);
}

/// `uᵀ W v`
pub fn rayleigh_sigma(w: &Tensor, u: &[f64], v: &[f64]) -> f64 {
    mat_vec(w, v).iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Largest singular value estimate from `iterations` power iterations
/// started at a random unit `u`.
pub fn spectral_norm_estimate(w: &Tensor, iterations: usize, rng: &mut impl Rng) -> f64 {
    let mut u: Vec<f64> = (0..w.rows()).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut u);
    let mut v = vec![0.0; w.cols()];
    for _ in 0..iterations {
        power_step(w, &mut u, &mut v);
    }
    rayleigh_sigma(w, &u, &v)
}

impl LipschitzLinear {
    /// Uniform `±1/√in` weights and biases, unit Lipschitz bound, and a
    /// warmed-up singular vector pair.
    pub fn new(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor::new(
            out,
            input,
            (0..out * input).map(|_| rng.gen_range(-bound..bound)).collect(),
        );
        let bias = (0..out).map(|_| rng.gen_range(-bound..bound)).collect();
        Self::from_weight(weight, bias, softplus_inverse(1.0), rng)
    }

    pub fn from_weight(weight: Tensor, bias: Vec<f64>, c: f64, rng: &mut impl Rng) -> Self {
        let mut u: Vec<f64> = (0..weight.rows()).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&mut u);
        let mut layer = Self {
            v: vec![0.0; weight.cols()],
            weight,
            bias,
            c,
            u,
        };
        layer.power_iteration(WARMUP_ITERATIONS);
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn power_iteration(&mut self, iterations: usize) {
        for _ in 0..iterations {
            power_step(&self.weight, &mut self.u, &mut self.v);
        }
    }

    /// Current spectral norm estimate `uᵀ W v`.
    pub fn sigma(&self) -> f64 {
        rayleigh_sigma(&self.weight, &self.u, &self.v)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        softplus(self.c)
    }

    /// `W softplus(c) / σ`
    pub fn scaled_weight(&self) -> Tensor {
        let f = self.lipschitz_bound() / self.sigma();
        self.weight.map(|a| a * f)
    }

    /// Applies the layer to the rows of `x`.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = matmul_nt(x, &self.scaled_weight());
        for r in 0..y.rows() {
            let row = &mut y.data_mut()[r * self.bias.len()..(r + 1) * self.bias.len()];
            row.iter_mut().zip(&self.bias).for_each(|(a, b)| *a += b);
        }
        y
    }
}
