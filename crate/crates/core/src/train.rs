//! Losses, optimisation loop and ensembles.

use std::collections::HashMap;
use std::path::Path;

use gibbsnet_autodiff::functions::softplus;
use gibbsnet_autodiff::{Tape, Tensor, Var};
use gibbsnet_thermo::{gamma_from_vle, antoine_vapor_pressure, grid_x, ideal_mixing, AntoineCoefficients, ComponentId, GRID_POINTS};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_model, EnsembleManifest, ManifestMember};
use crate::data::{fit_scalers, DataPoint, Kind, Payload, SystemId};
use crate::embeddings::EmbeddingTable;
use crate::graph::{build, ln_gamma_nodes, place_params, stability_nodes, LnGammaHandle, ParamNodes, Planner, StabilityHandle};
use crate::layers::TRAIN_ITERATIONS;
use crate::model::{Gradients, ModelParams};
use crate::optim::{one_cycle_lr, AdamW, AdamWConfig, Slot};
use crate::surrogate::{SurrogateNodes, SurrogateParams};
use crate::{Error, Result};

/// Interior grid points scanned for the stability criterion.
pub const INTERIOR: usize = GRID_POINTS - 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_lle: f64,
    pub w_gibbs: f64,
    pub w_lips: f64,
    pub beta_vle: f64,
    pub beta_aci: f64,
    pub beta_lle: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_lr: f64,
    pub min_best_epoch: usize,
    pub ensemble_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_lle: 1.0,
            w_gibbs: 0.1,
            w_lips: 0.01,
            beta_vle: 1.0,
            beta_aci: 2.0,
            beta_lle: 0.35,
            batch_size: 512,
            epochs: 200,
            max_lr: 0.01,
            min_best_epoch: 50,
            ensemble_size: 10,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_lle, self.w_gibbs, self.w_lips];
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if [self.beta_vle, self.beta_aci, self.beta_lle].iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("smooth-L1 betas must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.ensemble_size == 0 {
            return Err(Error::Config("batch size, epochs and ensemble size must be positive".into()));
        }
        if !(self.max_lr > 0.0) {
            return Err(Error::Config("max_lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Examples per parallel work unit; fixed so results do not depend on
    /// the thread count.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            optimizer: AdamWConfig::default(),
            seed: 0,
            chunk_size: 32,
        }
    }
}

/// A data point in model coordinates: component rows of the embedding table
/// and the regression target.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Vle {
        comps: Vec<usize>,
        x: Vec<f64>,
        t: f64,
        ln_gamma: Vec<f64>,
    },
    /// Solute first, at zero fraction.
    Aci {
        comps: Vec<usize>,
        x: Vec<f64>,
        t: f64,
        ln_gamma_inf: f64,
    },
    Lle {
        comps: [usize; 2],
        t: f64,
        split: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub system: SystemId,
    pub target: Target,
}

impl Example {
    pub fn kind(&self) -> Kind {
        match self.target {
            Target::Vle { .. } => Kind::Vle,
            Target::Aci { .. } => Kind::Aci,
            Target::Lle { .. } => Kind::Lle,
        }
    }

    pub fn t(&self) -> f64 {
        match self.target {
            Target::Vle { t, .. } | Target::Aci { t, .. } | Target::Lle { t, .. } => t,
        }
    }
}

/// Converts data points to examples; VLE targets come from extended
/// Raoult's law with the given vapor pressures.
pub fn prepare_examples(
    points: &[DataPoint],
    embeddings: &EmbeddingTable,
    antoine: &HashMap<ComponentId, AntoineCoefficients>,
) -> Result<Vec<Example>> {
    points
        .iter()
        .map(|p| {
            let rows = |ids: &[ComponentId]| ids.iter().map(|c| embeddings.row(c)).collect::<Result<Vec<_>>>();
            let target = match &p.payload {
                Payload::Vle { x, .. } => Target::Vle {
                    comps: rows(p.system.components())?,
                    x: x.clone(),
                    t: p.t,
                    ln_gamma: vle_ln_gamma(p, antoine)?,
                },
                Payload::Aci {
                    solute,
                    solvents,
                    solvent_x,
                    ln_gamma_inf,
                } => {
                    let mut ids = vec![solute.clone()];
                    ids.extend(solvents.iter().cloned());
                    let mut x = vec![0.0];
                    x.extend_from_slice(solvent_x);
                    Target::Aci {
                        comps: rows(&ids)?,
                        x,
                        t: p.t,
                        ln_gamma_inf: *ln_gamma_inf,
                    }
                }
                Payload::Lle { x1_lo, x1_hi, .. } => {
                    let r = rows(p.system.components())?;
                    Target::Lle {
                        comps: [r[0], r[1]],
                        t: p.t,
                        split: [*x1_lo, *x1_hi],
                    }
                }
            };
            Ok(Example {
                system: p.system.clone(),
                target,
            })
        })
        .collect()
}

/// Experimental `ln γ` of a VLE point by extended Raoult's law.
pub fn vle_ln_gamma(point: &DataPoint, antoine: &HashMap<ComponentId, AntoineCoefficients>) -> Result<Vec<f64>> {
    let Payload::Vle { p, x, y } = &point.payload else {
        return Err(Error::Data(format!("{}: not a VLE point", point.system)));
    };
    point
        .system
        .components()
        .iter()
        .zip(x)
        .zip(y)
        .map(|((c, xi), yi)| {
            let coeffs = antoine
                .get(c)
                .ok_or_else(|| Error::Data(format!("no vapor pressure for {c}")))?;
            let ps = antoine_vapor_pressure(coeffs, point.t)?;
            Ok(gamma_from_vle(*p, *yi, ps.kpa, *xi)?.ln())
        })
        .collect()
}

pub fn antoine_map(list: &[AntoineCoefficients]) -> HashMap<ComponentId, AntoineCoefficients> {
    list.iter().map(|c| (c.component_id.clone(), c.clone())).collect()
}

/// Loss terms as sums over the examples (before weighting and batch
/// normalisation).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub vle: f64,
    pub aci: f64,
    pub lle: f64,
    pub gibbs: f64,
    /// LLE examples whose curve is predicted unstable somewhere.
    pub masked: usize,
}

impl Terms {
    pub fn add(&mut self, o: &Terms) {
        self.vle += o.vle;
        self.aci += o.aci;
        self.lle += o.lle;
        self.gibbs += o.gibbs;
        self.masked += o.masked;
    }

    /// `L_VLE + L_ACI + w_LLE L_LLE + w_Gibbs L_Gibbs`
    pub fn weighted(&self, c: &LossConfig) -> f64 {
        self.vle + self.aci + c.w_lle * self.lle + c.w_gibbs * self.gibbs
    }

    /// The validation criterion, without the Gibbs term.
    pub fn data(&self, c: &LossConfig) -> f64 {
        self.vle + self.aci + c.w_lle * self.lle
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        [("VLE loss", self.vle), ("ACI loss", self.aci), ("LLE loss", self.lle), ("Gibbs loss", self.gibbs)]
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

struct TermNodes {
    vle: Option<Var>,
    aci: Option<Var>,
    lle: Option<Var>,
    gibbs: Option<Var>,
    masked: usize,
}

fn zero_or(tape: &Tape, v: Option<Var>) -> f64 {
    v.map_or(0.0, |v| tape.item(v))
}

/// Records the loss terms of `examples` on `tape`.
fn record_terms(
    tape: &mut Tape,
    nodes: &ParamNodes,
    surrogate: &SurrogateNodes,
    params: &ModelParams,
    features: &[Vec<f64>],
    examples: &[&Example],
    c: &LossConfig,
) -> TermNodes {
    let has_lle = examples.iter().any(|e| e.kind() == Kind::Lle);
    let mut plan = Planner::new(features, has_lle);
    let mut vle: Vec<(LnGammaHandle, &[f64])> = Vec::new();
    let mut aci: Vec<(LnGammaHandle, f64)> = Vec::new();
    let mut lle: Vec<[f64; 2]> = Vec::new();
    let mut stab: Vec<StabilityHandle> = Vec::new();
    for e in examples {
        match &e.target {
            Target::Vle { comps, x, t, ln_gamma } => {
                vle.push((plan.ln_gamma(comps, x, params.scale_temperature(*t)), ln_gamma));
            }
            Target::Aci { comps, x, t, ln_gamma_inf } => {
                aci.push((plan.ln_gamma(comps, x, params.scale_temperature(*t)), *ln_gamma_inf));
            }
            Target::Lle { comps, t, split } => {
                let ts = params.scale_temperature(*t);
                for i in 1..GRID_POINTS - 1 {
                    stab.push(plan.stability(*comps, grid_x(i), ts));
                }
                lle.push(*split);
            }
        }
    }
    let jets = build(tape, nodes, &plan.batch);

    let vle_node = (!vle.is_empty()).then(|| {
        let handles: Vec<LnGammaHandle> = vle.iter().map(|v| v.0.clone()).collect();
        let pred = ln_gamma_nodes(tape, &jets, &handles);
        let mut target = Vec::new();
        let mut weight = Vec::new();
        for (_, lg) in &vle {
            target.extend_from_slice(lg);
            weight.extend(std::iter::repeat(1.0 / lg.len() as f64).take(lg.len()));
        }
        let y = tape.constant(Tensor::column(target));
        let e = tape.smooth_l1(pred, y, c.beta_vle);
        let w = tape.constant(Tensor::column(weight));
        let ew = tape.mul(e, w);
        tape.sum(ew)
    });

    let aci_node = (!aci.is_empty()).then(|| {
        let handles: Vec<LnGammaHandle> = aci.iter().map(|a| a.0.clone()).collect();
        let all = ln_gamma_nodes(tape, &jets, &handles);
        let mut rows = Vec::with_capacity(aci.len());
        let mut offset = 0;
        for h in &handles {
            rows.push(offset);
            offset += h.x.len();
        }
        let pred = tape.gather_rows(all, &rows);
        let y = tape.constant(Tensor::column(aci.iter().map(|a| a.1).collect()));
        let e = tape.smooth_l1(pred, y, c.beta_aci);
        let s = tape.sum(e);
        tape.scale(s, 0.5)
    });

    let mut masked = 0;
    let (lle_node, gibbs_node) = if lle.is_empty() {
        (None, None)
    } else {
        let n = lle.len();
        let (g, s) = stability_nodes(tape, &jets, &stab);
        let s = tape.reshape(s, n, INTERIOR);
        let smin = tape.row_min(s);
        let hinge = tape.relu(smin);
        let gibbs = tape.sum(hinge);
        let mask: Vec<usize> = (0..n).filter(|&k| tape.value(smin).get(k, 0) < 0.0).collect();
        masked = mask.len();
        let lle_node = (!mask.is_empty()).then(|| {
            let g = tape.reshape(g, n, INTERIOR);
            let ideal = tape.constant(Tensor::row((1..GRID_POINTS - 1).map(|i| ideal_mixing(grid_x(i))).collect()));
            let interior = tape.add_row(g, ideal);
            let curves = tape.pad_cols(interior, 1, 1);
            let curves = tape.gather_rows(curves, &mask);
            let (lo, hi) = surrogate.forward(tape, curves);
            let pred = tape.concat_cols(&[lo, hi]);
            let y = tape.constant(Tensor::new(
                mask.len(),
                2,
                mask.iter().flat_map(|&k| lle[k]).collect(),
            ));
            let e = tape.smooth_l1(pred, y, c.beta_lle);
            let s = tape.sum(e);
            tape.scale(s, 0.5)
        });
        (lle_node, Some(gibbs))
    };
    TermNodes {
        vle: vle_node,
        aci: aci_node,
        lle: lle_node,
        gibbs: gibbs_node,
        masked,
    }
}

fn term_values(tape: &Tape, t: &TermNodes) -> Terms {
    Terms {
        vle: zero_or(tape, t.vle),
        aci: zero_or(tape, t.aci),
        lle: zero_or(tape, t.lle),
        gibbs: zero_or(tape, t.gibbs),
        masked: t.masked,
    }
}

/// Scaled embeddings for every row of the table.
pub fn scaled_features(params: &ModelParams, embeddings: &EmbeddingTable) -> Vec<Vec<f64>> {
    embeddings
        .vectors()
        .iter()
        .map(|v| params.embedding_scaler.transform(v))
        .collect()
}

/// Loss terms of a chunk and the gradient of their weighted sum.
pub fn chunk_gradient(
    params: &ModelParams,
    surrogate: &SurrogateParams,
    features: &[Vec<f64>],
    examples: &[&Example],
    c: &LossConfig,
) -> Result<(Terms, Gradients)> {
    let mut tape = Tape::new();
    let nodes = place_params(&mut tape, params, true);
    let snodes = surrogate.place(&mut tape, false);
    let t = record_terms(&mut tape, &nodes, &snodes, params, features, examples, c);
    let terms = term_values(&tape, &t);
    let mut parts = Vec::new();
    for (v, w) in [(t.vle, 1.0), (t.aci, 1.0), (t.lle, c.w_lle), (t.gibbs, c.w_gibbs)] {
        if let Some(v) = v {
            parts.push(if w == 1.0 { v } else { tape.scale(v, w) });
        }
    }
    let mut grads = Gradients::zeros_like(params);
    if terms.first_non_finite().is_some() || parts.is_empty() {
        return Ok((terms, grads));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p);
    }
    let inputs: Vec<Var> = nodes.layers.iter().flat_map(|l| [l.weight, l.bias, l.c]).collect();
    let g = tape.gradient_tensors(total, &inputs)?;
    for (k, chunk) in g.chunks(3).enumerate() {
        grads.weight[k] = chunk[0].clone();
        grads.bias[k] = chunk[1].data().to_vec();
        grads.c[k] = chunk[2].item();
    }
    Ok((terms, grads))
}

/// Loss terms without gradients, evaluated chunk-wise in parallel.
pub fn evaluate_terms(
    params: &ModelParams,
    surrogate: &SurrogateParams,
    features: &[Vec<f64>],
    examples: &[Example],
    c: &LossConfig,
    chunk_size: usize,
) -> Terms {
    let refs: Vec<&Example> = examples.iter().collect();
    let parts: Vec<Terms> = refs
        .par_chunks(chunk_size.max(1))
        .map(|chunk| {
            let mut tape = Tape::new();
            let nodes = place_params(&mut tape, params, false);
            let snodes = surrogate.place(&mut tape, false);
            let t = record_terms(&mut tape, &nodes, &snodes, params, features, chunk, c);
            term_values(&tape, &t)
        })
        .collect();
    let mut total = Terms::default();
    parts.iter().for_each(|p| total.add(p));
    total
}

/// Adds the gradient of `w_lips Π softplus(c_l)` and returns the product.
pub fn lipschitz_gradient(params: &ModelParams, w_lips: f64, grads: &mut Gradients) -> f64 {
    let mut tape = Tape::new();
    let cs: Vec<Var> = params.layers.iter().map(|l| tape.var(l.c)).collect();
    let mut prod = tape.softplus(cs[0]);
    for &c in &cs[1..] {
        let s = tape.softplus(c);
        prod = tape.mul(prod, s);
    }
    let value = tape.item(prod);
    if w_lips != 0.0 {
        let scaled = tape.scale(prod, w_lips);
        let g = tape.gradient(scaled, &cs).expect("scalar leaves on this tape");
        grads.c.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    value
}

/// Total loss of one batch, `(Σ terms + w_Lips Π) / N_b`, and its gradient.
pub fn batch_loss(
    params: &ModelParams,
    surrogate: &SurrogateParams,
    features: &[Vec<f64>],
    batch: &[&Example],
    config: &TrainConfig,
) -> Result<(f64, Terms, Gradients)> {
    let c = &config.loss;
    let parts: Vec<Result<(Terms, Gradients)>> = batch
        .par_chunks(config.chunk_size.max(1))
        .map(|chunk| chunk_gradient(params, surrogate, features, chunk, c))
        .collect();
    let mut terms = Terms::default();
    let mut grads = Gradients::zeros_like(params);
    for p in parts {
        let (t, g) = p?;
        terms.add(&t);
        grads.add_assign(&g);
    }
    let lips = lipschitz_gradient(params, c.w_lips, &mut grads);
    grads.scale(1.0 / c.batch_size as f64);
    let total = (terms.weighted(c) + c.w_lips * lips) / c.batch_size as f64;
    Ok((total, terms, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean total loss per batch.
    pub train_loss: f64,
    pub train_terms: Terms,
    /// Data loss per validation example.
    pub val_loss: f64,
    pub val_terms: Terms,
    pub lipschitz_product: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// One-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_examples: usize,
    pub val_examples: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Examples and embeddings for one split.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub embeddings: EmbeddingTable,
    pub train_points: Vec<DataPoint>,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

impl TrainingData {
    pub fn new(
        embeddings: EmbeddingTable,
        train_points: Vec<DataPoint>,
        val_points: &[DataPoint],
        antoine: &HashMap<ComponentId, AntoineCoefficients>,
    ) -> Result<Self> {
        let train = prepare_examples(&train_points, &embeddings, antoine)?;
        let val = prepare_examples(val_points, &embeddings, antoine)?;
        Ok(Self {
            embeddings,
            train_points,
            train,
            val,
        })
    }
}

fn eligible(epoch: usize, epochs: usize, min_best_epoch: usize) -> bool {
    epoch >= min_best_epoch || epochs < min_best_epoch && epoch == epochs
}

/// A finite loss never loses to NaN; a NaN incumbent is always replaced.
fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent || incumbent.is_nan()
}

/// One-based epoch kept from a run with the given validation losses.
pub fn best_epoch(val_losses: &[f64], min_best_epoch: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in val_losses.iter().enumerate() {
        let epoch = k + 1;
        if eligible(epoch, val_losses.len(), min_best_epoch) && best.map_or(true, |(_, b)| improves(v, b)) {
            best = Some((epoch, v));
        }
    }
    best.map(|(e, _)| e)
}

/// Runs the full optimisation for one seed.
///
/// Weights are selected by the lowest validation data loss among epochs
/// numbered `min_best_epoch` or later; shorter runs keep the final epoch.
pub fn train_model(
    data: &TrainingData,
    surrogate: &SurrogateParams,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let c = &config.loss;
    c.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    surrogate.validate()?;
    let scalers = fit_scalers(&data.train_points, &data.embeddings)?;
    let mut params = ModelParams::init(
        data.embeddings.dimension(),
        config.seed,
        scalers.embedding,
        scalers.temperature,
    );
    let features = scaled_features(&params, &data.embeddings);
    let mut opt = AdamW::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let batches = order.len().div_ceil(c.batch_size);
    let total_steps = batches * c.epochs;
    let mut step = 0;
    let mut records = Vec::with_capacity(c.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;
    for epoch in 1..=c.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_terms = Terms::default();
        let mut lr = 0.0;
        for (b, idx) in order.chunks(c.batch_size).enumerate() {
            params.power_iteration(TRAIN_ITERATIONS);
            let batch: Vec<&Example> = idx.iter().map(|&i| &data.train[i]).collect();
            let (loss, terms, grads) = batch_loss(&params, surrogate, &features, &batch, config)?;
            if let Some(term) = terms.first_non_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: term.into(),
                });
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: "Lipschitz term".into(),
                });
            }
            if !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: "gradient".into(),
                });
            }
            epoch_loss += loss;
            epoch_terms.add(&terms);
            lr = one_cycle_lr(step, total_steps, c.max_lr);
            apply_update(&mut opt, &mut params, &grads, lr);
            step += 1;
        }
        let val_terms = evaluate_terms(&params, surrogate, &features, &data.val, c, config.chunk_size);
        let val_loss = if data.val.is_empty() {
            f64::NAN
        } else {
            val_terms.data(c) / data.val.len() as f64
        };
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            train_terms: epoch_terms,
            val_loss,
            val_terms,
            lipschitz_product: params.lipschitz_product(),
            lr,
        };
        progress(&record);
        records.push(record);
        let better = match &best {
            None => true,
            Some((_, v, _)) => improves(val_loss, *v),
        };
        if eligible(epoch, c.epochs, c.min_best_epoch) && better {
            best = Some((epoch, val_loss, params.clone()));
        }
    }
    let (best_epoch, best_val_loss, params) = best.expect("at least one eligible epoch");
    Ok(TrainOutcome {
        params,
        report: TrainReport {
            seed: config.seed,
            epochs: records,
            best_epoch,
            best_val_loss,
            train_examples: data.train.len(),
            val_examples: data.val.len(),
        },
    })
}

fn apply_update(opt: &mut AdamW, params: &mut ModelParams, grads: &Gradients, lr: f64) {
    let mut slots: Vec<Slot<'_>> = Vec::with_capacity(3 * params.layers.len());
    let mut cs: Vec<f64> = params.layers.iter().map(|l| l.c).collect();
    for (k, l) in params.layers.iter_mut().enumerate() {
        slots.push(Slot {
            values: l.weight.data_mut(),
            grad: grads.weight[k].data(),
            decay: true,
        });
        slots.push(Slot {
            values: &mut l.bias,
            grad: &grads.bias[k],
            decay: true,
        });
    }
    slots.push(Slot {
        values: &mut cs,
        grad: &grads.c,
        decay: false,
    });
    opt.step(&mut slots, lr);
    drop(slots);
    for (l, c) in params.layers.iter_mut().zip(cs) {
        l.c = c;
    }
}

/// Trains `ensemble_size` members with seeds `seed, seed + 1, …`, calling
/// `on_member` after each so callers can persist partial results.
pub fn train_ensemble(
    data: &TrainingData,
    surrogate: &SurrogateParams,
    config: &TrainConfig,
    mut on_member: impl FnMut(usize, &TrainOutcome) -> Result<()>,
) -> Result<Vec<TrainOutcome>> {
    let mut out = Vec::with_capacity(config.loss.ensemble_size);
    for k in 0..config.loss.ensemble_size {
        let cfg = TrainConfig {
            seed: config.seed + k as u64,
            ..config.clone()
        };
        let outcome = train_model(data, surrogate, &cfg, |_| {})?;
        on_member(k, &outcome)?;
        out.push(outcome);
    }
    Ok(out)
}

/// Trains an ensemble into `dir` as `member_NN.hcnn` files plus
/// `manifest.json`, which is rewritten after each member.
pub fn train_ensemble_into(
    data: &TrainingData,
    surrogate: &SurrogateParams,
    config: &TrainConfig,
    dir: &Path,
) -> Result<EnsembleManifest> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = EnsembleManifest::new(config.loss.ensemble_size);
    let manifest_path = dir.join(MANIFEST_FILE);
    manifest.save(&manifest_path)?;
    train_ensemble(data, surrogate, config, |k, outcome| {
        let name = format!("member_{k:02}.hcnn");
        save_model(&outcome.params, dir.join(&name))?;
        manifest.members.push(ManifestMember {
            seed: outcome.report.seed,
            checkpoint: name,
            best_epoch: outcome.report.best_epoch,
            best_val_loss: outcome.report.best_val_loss,
        });
        manifest.save(&manifest_path)
    })?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// `softplus` product helper kept next to the trainer for reports.
pub fn lipschitz_product_of(cs: &[f64]) -> f64 {
    cs.iter().map(|&c| softplus(c)).product()
}
