//! Differentiable binodal surrogate: a small network mapping a sampled
//! `Δg_mix/RT` curve to the two coexisting compositions.
//!
//! The raw network `f` sees the curve and its mirror image; the outputs are
//! combined as `½[f(g) + m(f(rev g))]` with `m(a, b) = (1 - b, 1 - a)` and
//! then sorted, so swapping the components mirrors the prediction exactly
//! for any weights.

use std::path::Path;

use gibbsnet_autodiff::{Tape, Tensor, Var};
use gibbsnet_thermo::{
    detect_gaps, refine_common_tangent, BinaryModel, BinaryPhaseSplit, DGmixCurve, GRID_POINTS,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Reader, Writer};
use crate::data::SystemId;
use crate::model::Scaler;
use crate::optim::{one_cycle_lr, AdamW, AdamWConfig, Slot};
use crate::{Error, Result};

pub const SURROGATE_MAGIC: &[u8; 4] = b"SLLE";
pub const SURROGATE_HIDDEN: usize = 64;
pub const SURROGATE_LAYERS: usize = 4;

pub fn surrogate_shapes() -> [(usize, usize); SURROGATE_LAYERS] {
    [
        (SURROGATE_HIDDEN, GRID_POINTS),
        (SURROGATE_HIDDEN, SURROGATE_HIDDEN),
        (SURROGATE_HIDDEN, SURROGATE_HIDDEN),
        (2, SURROGATE_HIDDEN),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        let b = 1.0 / (input as f64).sqrt();
        Self {
            weight: Tensor::new(out, input, (0..out * input).map(|_| rng.gen_range(-b..b)).collect()),
            bias: (0..out).map(|_| rng.gen_range(-b..b)).collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|r| {
                self.weight.row_slice(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[r]
            })
            .collect()
    }
}

/// Weights plus a per-grid-point input standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    pub layers: Vec<Dense>,
    pub input: Scaler,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SurrogateParams {
    pub fn init(seed: u64, input: Scaler) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = surrogate_shapes()
            .iter()
            .map(|&(o, i)| Dense::new(o, i, &mut rng))
            .collect();
        Self { layers, input }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != SURROGATE_LAYERS {
            return Err(Error::Dimension {
                what: "surrogate layer count",
                expected: SURROGATE_LAYERS,
                found: self.layers.len(),
            });
        }
        for (l, (o, i)) in self.layers.iter().zip(surrogate_shapes()) {
            if l.weight.shape() != (o, i) || l.bias.len() != o {
                return Err(Error::Dimension {
                    what: "surrogate layer shape",
                    expected: o * i,
                    found: l.weight.len(),
                });
            }
        }
        if self.input.dim() != GRID_POINTS || self.input.std.len() != GRID_POINTS {
            return Err(Error::Unfitted("surrogate input"));
        }
        Ok(())
    }

    /// The unsymmetrised network.
    pub fn raw(&self, curve: &[f64]) -> [f64; 2] {
        let mut h = self.input.transform(curve);
        for (k, l) in self.layers.iter().enumerate() {
            h = l.apply(&h);
            if k + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        [sigmoid(h[0]), sigmoid(h[1])]
    }

    /// Ordered `(x1_lo, x1_hi)`.
    pub fn predict(&self, curve: &[f64]) -> Result<[f64; 2]> {
        if curve.len() != GRID_POINTS {
            return Err(Error::Dimension {
                what: "curve length",
                expected: GRID_POINTS,
                found: curve.len(),
            });
        }
        let a = self.raw(curve);
        let rev: Vec<f64> = curve.iter().rev().copied().collect();
        let b = self.raw(&rev);
        let lo = 0.5 * (a[0] + 1.0 - b[1]);
        let hi = 0.5 * (a[1] + 1.0 - b[0]);
        Ok([lo.min(hi), lo.max(hi)])
    }

    pub fn place(&self, tape: &mut Tape, trainable: bool) -> SurrogateNodes {
        let leaf = |t: &mut Tape, v: Tensor| if trainable { t.param(v) } else { t.constant(v) };
        let layers = self
            .layers
            .iter()
            .map(|l| (leaf(tape, l.weight.clone()), leaf(tape, Tensor::row(l.bias.clone()))))
            .collect();
        let neg_mean = tape.constant(Tensor::row(self.input.mean.iter().map(|m| -m).collect()));
        SurrogateNodes {
            layers,
            neg_mean,
            inv_std: self.input.std.iter().map(|s| 1.0 / s).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new(SURROGATE_MAGIC, GRID_POINTS, &surrogate_shapes());
        for l in &self.layers {
            w.f64s(l.weight.data());
            w.f64s(&l.bias);
        }
        w.f64s(&self.input.mean);
        w.f64s(&self.input.std);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, SURROGATE_MAGIC)?;
        if r.width != GRID_POINTS {
            return Err(Error::Dimension {
                what: "surrogate curve length",
                expected: GRID_POINTS,
                found: r.width,
            });
        }
        if r.dims.as_slice() != surrogate_shapes().as_slice() {
            return Err(Error::Dimension {
                what: "surrogate layer table",
                expected: SURROGATE_LAYERS,
                found: r.dims.len(),
            });
        }
        let mut layers = Vec::with_capacity(SURROGATE_LAYERS);
        for (o, i) in surrogate_shapes() {
            let weight = Tensor::new(o, i, r.f64s(o * i)?);
            let bias = r.f64s(o)?;
            layers.push(Dense { weight, bias });
        }
        let input = Scaler {
            mean: r.f64s(GRID_POINTS)?,
            std: r.f64s(GRID_POINTS)?,
        };
        r.finish()?;
        if input.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Format("non-positive scaler deviation".into()));
        }
        Ok(Self { layers, input })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

/// Surrogate parameters on a tape.
#[derive(Debug, Clone)]
pub struct SurrogateNodes {
    pub layers: Vec<(Var, Var)>,
    neg_mean: Var,
    inv_std: Vec<f64>,
}

impl SurrogateNodes {
    fn raw(&self, tape: &mut Tape, curves: Var) -> Var {
        let n = tape.value(curves).rows();
        let centered = tape.add_row(curves, self.neg_mean);
        let inv = tape.constant(Tensor::new(
            n,
            GRID_POINTS,
            (0..n).flat_map(|_| self.inv_std.iter().copied()).collect(),
        ));
        let mut h = tape.mul(centered, inv);
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul_nt(h, w);
            h = tape.add_row(z, b);
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        tape.sigmoid(h)
    }

    /// Ordered predictions for the rows of an `n × 101` curve node.
    pub fn forward(&self, tape: &mut Tape, curves: Var) -> (Var, Var) {
        let a = self.raw(tape, curves);
        let rev = tape.reverse_cols(curves);
        let b = self.raw(tape, rev);
        let a_lo = tape.slice_cols(a, 0, 1);
        let a_hi = tape.slice_cols(a, 1, 1);
        let b_lo = tape.slice_cols(b, 0, 1);
        let b_hi = tape.slice_cols(b, 1, 1);
        let half = |t: &mut Tape, x: Var, y: Var| {
            let d = t.sub(x, y);
            let s = t.offset(d, 1.0);
            t.scale(s, 0.5)
        };
        let lo = half(tape, a_lo, b_hi);
        let hi = half(tape, a_hi, b_lo);
        (tape.minimum(lo, hi), tape.maximum(lo, hi))
    }
}

/// A labelled curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSample {
    pub system: SystemId,
    pub t: f64,
    pub curve: Vec<f64>,
    /// `x1_lo < x1_hi`
    pub label: [f64; 2],
}

/// Samples the curve of `model` at `t` and labels it with the outermost
/// refined split, or `None` when the curve is convex or a split does not
/// refine.
pub fn label_curve(model: &impl BinaryModel, t: f64) -> Result<Option<(DGmixCurve, [f64; 2])>> {
    let curve = DGmixCurve::from_model(model, t)?;
    let gaps = detect_gaps(&curve);
    if gaps.is_empty() {
        return Ok(None);
    }
    let mut refined: Vec<BinaryPhaseSplit> = Vec::with_capacity(gaps.len());
    for g in gaps {
        match refine_common_tangent(model, t, g) {
            Ok(s) => refined.push(s),
            Err(_) => return Ok(None),
        }
    }
    let lo = refined.iter().map(|s| s.x1_lo).fold(f64::INFINITY, f64::min);
    let hi = refined.iter().map(|s| s.x1_hi).fold(f64::NEG_INFINITY, f64::max);
    Ok(Some((curve, [lo, hi])))
}

/// Mean of `(|Δlo| + |Δhi|)/2` over the samples.
pub fn mean_absolute_error(params: &SurrogateParams, samples: &[SurrogateSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no surrogate samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let p = params.predict(&s.curve)?;
        total += 0.5 * ((p[0] - s.label[0]).abs() + (p[1] - s.label[1]).abs());
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            max_lr: 0.01,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

fn stack(samples: &[&SurrogateSample]) -> (Tensor, Tensor) {
    let curves = samples.iter().flat_map(|s| s.curve.iter().copied()).collect();
    let labels = samples.iter().flat_map(|s| s.label).collect();
    (
        Tensor::new(samples.len(), GRID_POINTS, curves),
        Tensor::new(samples.len(), 2, labels),
    )
}

/// Sum of squared errors over both outputs; the caller divides.
fn squared_error(tape: &mut Tape, nodes: &SurrogateNodes, samples: &[&SurrogateSample]) -> Var {
    let (curves, labels) = stack(samples);
    let c = tape.constant(curves);
    let (lo, hi) = nodes.forward(tape, c);
    let pred = tape.concat_cols(&[lo, hi]);
    let y = tape.constant(labels);
    let e = tape.sub(pred, y);
    let sq = tape.square(e);
    tape.sum(sq)
}

fn mse(params: &SurrogateParams, samples: &[SurrogateSample]) -> f64 {
    let refs: Vec<&SurrogateSample> = samples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(1024) {
        let mut tape = Tape::new();
        let nodes = params.place(&mut tape, false);
        let s = squared_error(&mut tape, &nodes, chunk);
        total += tape.item(s);
    }
    total / (2 * samples.len()).max(1) as f64
}

/// Fits the surrogate by mean squared error and keeps the epoch with the
/// lowest validation error (the last epoch when `val` is empty).
pub fn train_surrogate(
    train: &[SurrogateSample],
    val: &[SurrogateSample],
    config: &SurrogateTrainConfig,
) -> Result<(SurrogateParams, SurrogateReport)> {
    if train.is_empty() {
        return Err(Error::Data("empty surrogate training split".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("surrogate epochs and batch size must be positive".into()));
    }
    // both orientations, so the standardisation is mirror symmetric
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(2 * train.len());
    for s in train {
        rows.push(s.curve.clone());
        rows.push(s.curve.iter().rev().copied().collect());
    }
    let scaler = Scaler::fit(rows.iter().map(|r| r.as_slice()))?;
    let mut params = SurrogateParams::init(config.seed, scaler);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed);
    let mut opt = AdamW::new(config.optimizer);
    let batches = train.len().div_ceil(config.batch_size);
    let total_steps = batches * config.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = SurrogateReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        train_samples: train.len(),
        val_samples: val.len(),
    };
    let mut best: Option<(f64, SurrogateParams)> = None;
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SurrogateSample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let nodes = params.place(&mut tape, true);
            let sse = squared_error(&mut tape, &nodes, &batch);
            let loss = tape.scale(sse, 1.0 / (2 * batch.len()) as f64);
            let value = tape.item(loss);
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: step % batches,
                    term: "surrogate loss".into(),
                });
            }
            epoch_loss += tape.item(sse);
            let inputs: Vec<Var> = nodes.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
            let grads = tape.gradient_tensors(loss, &inputs)?;
            let lr = one_cycle_lr(step, total_steps, config.max_lr);
            let mut slots: Vec<Slot<'_>> = Vec::with_capacity(inputs.len());
            let mut gi = grads.iter();
            for l in &mut params.layers {
                let gw = gi.next().expect("weight gradient");
                let gb = gi.next().expect("bias gradient");
                slots.push(Slot {
                    values: l.weight.data_mut(),
                    grad: gw.data(),
                    decay: true,
                });
                slots.push(Slot {
                    values: &mut l.bias,
                    grad: gb.data(),
                    decay: true,
                });
            }
            opt.step(&mut slots, lr);
            step += 1;
        }
        report.train_loss.push(epoch_loss / (2 * train.len()) as f64);
        let score = if val.is_empty() {
            report.val_loss.push(f64::NAN);
            f64::NEG_INFINITY
        } else {
            let v = mse(&params, val);
            report.val_loss.push(v);
            v
        };
        if best.as_ref().map_or(true, |(b, _)| score <= *b) {
            report.best_epoch = epoch;
            best = Some((score, params.clone()));
        }
    }
    let (_, params) = best.expect("at least one epoch");
    Ok((params, report))
}
