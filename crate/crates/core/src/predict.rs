//! Inference on mixture states and binary phase diagrams.

use gibbsnet_autodiff::{AdError, Dual2, Tape};
use std::io::Write;

use gibbsnet_thermo::{
    bubble_point, detect_gaps, grid_x, ideal_mixing, refine_common_tangent, AntoineCoefficients, BinaryModel,
    BinaryPhaseSplit, ComponentId, DGmixCurve, MixtureState, StabilityScan, GRID_POINTS,
};
use rayon::prelude::*;

use crate::embeddings::EmbeddingTable;
use crate::graph::{build, ln_gamma_nodes, place_params, stability_nodes, Planner};
use crate::model::ModelParams;
use crate::{Error, Result};

/// Mixtures evaluated per tape.
pub const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `g^E/RT`.
    pub excess: f64,
    pub ln_gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Member {
    params: ModelParams,
    /// Scaled embeddings indexed by embedding-table row.
    features: Vec<Vec<f64>>,
}

/// A trained model, or an ensemble of models averaged in `g^E/RT`, bound to
/// an embedding table.
#[derive(Debug, Clone)]
pub struct Predictor {
    members: Vec<Member>,
    embeddings: EmbeddingTable,
}

impl Predictor {
    pub fn new(params: ModelParams, embeddings: EmbeddingTable) -> Result<Self> {
        Self::ensemble(vec![params], embeddings)
    }

    pub fn ensemble(members: Vec<ModelParams>, embeddings: EmbeddingTable) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        }
        let members = members
            .into_iter()
            .map(|params| {
                params.validate()?;
                if embeddings.dimension() != params.dim {
                    return Err(Error::Dimension {
                        what: "embedding dimension",
                        expected: params.dim,
                        found: embeddings.dimension(),
                    });
                }
                let features = embeddings
                    .vectors()
                    .iter()
                    .map(|v| params.embedding_scaler.transform(v))
                    .collect();
                Ok(Member { params, features })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members, embeddings })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Parameters of every member.
    pub fn members(&self) -> impl Iterator<Item = &ModelParams> {
        self.members.iter().map(|m| &m.params)
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    fn weight(&self) -> f64 {
        1.0 / self.members.len() as f64
    }

    fn rows(&self, ids: &[ComponentId]) -> Result<Vec<usize>> {
        ids.iter().map(|id| self.embeddings.row(id)).collect()
    }

    fn check(&self, state: &MixtureState) -> Result<Vec<usize>> {
        state.validate()?;
        self.rows(&state.components)
    }

    pub fn excess(&self, state: &MixtureState) -> Result<f64> {
        let rows = self.check(state)?;
        let mut total = 0.0;
        for m in &self.members {
            let mut tape = Tape::new();
            let nodes = place_params(&mut tape, &m.params, false);
            let mut plan = Planner::new(&m.features, false);
            let k = plan.excess(&rows, &state.x, m.params.scale_temperature(state.t));
            let jets = build(&mut tape, &nodes, &plan.batch);
            total += tape.value(jets.g).get(k, 0);
        }
        Ok(total * self.weight())
    }

    pub fn predict(&self, state: &MixtureState) -> Result<Prediction> {
        Ok(self.predict_many(std::slice::from_ref(state))?.remove(0))
    }

    pub fn ln_gamma(&self, state: &MixtureState) -> Result<Vec<f64>> {
        Ok(self.predict(state)?.ln_gamma)
    }

    pub fn predict_many(&self, states: &[MixtureState]) -> Result<Vec<Prediction>> {
        let rows = states
            .iter()
            .map(|s| self.check(s))
            .collect::<Result<Vec<_>>>()?;
        let chunks: Vec<Vec<Prediction>> = states
            .par_chunks(PREDICT_CHUNK)
            .zip(rows.par_chunks(PREDICT_CHUNK))
            .map(|(st, rw)| self.predict_chunk(st, rw))
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    fn predict_chunk(&self, states: &[MixtureState], rows: &[Vec<usize>]) -> Vec<Prediction> {
        let w = self.weight();
        let mut out: Vec<Prediction> = states
            .iter()
            .map(|s| Prediction {
                excess: 0.0,
                ln_gamma: vec![0.0; s.x.len()],
            })
            .collect();
        for m in &self.members {
            let mut tape = Tape::new();
            let nodes = place_params(&mut tape, &m.params, false);
            let mut plan = Planner::new(&m.features, false);
            let handles: Vec<_> = states
                .iter()
                .zip(rows)
                .map(|(s, r)| plan.ln_gamma(r, &s.x, m.params.scale_temperature(s.t)))
                .collect();
            let jets = build(&mut tape, &nodes, &plan.batch);
            let lg = ln_gamma_nodes(&mut tape, &jets, &handles);
            let g = tape.value(jets.g);
            let lg = tape.value(lg).data();
            let mut offset = 0;
            for (h, p) in handles.iter().zip(&mut out) {
                let n = h.x.len();
                p.excess += w * g.get(h.mixture, 0);
                p.ln_gamma
                    .iter_mut()
                    .zip(&lg[offset..offset + n])
                    .for_each(|(a, b)| *a += w * b);
                offset += n;
            }
        }
        out
    }

    /// The model restricted to the binary `(a, b)`, with `x1` the fraction
    /// of `a`.
    pub fn binary(&self, a: &ComponentId, b: &ComponentId) -> Result<NeuralBinary<'_>> {
        Ok(NeuralBinary {
            predictor: self,
            rows: [self.embeddings.row(a)?, self.embeddings.row(b)?],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PxyRow {
    pub x1: f64,
    /// kPa
    pub p: f64,
    pub y1: f64,
    pub out_of_range: bool,
}

/// Isothermal bubble-pressure curve of the binary `(a, b)` on the 101-point
/// grid, with `x1` and `y1` the fractions of `a`.
pub fn pxy_table(
    model: &Predictor,
    pair: [&AntoineCoefficients; 2],
    t: f64,
) -> Result<Vec<PxyRow>> {
    let comps = vec![pair[0].component_id.clone(), pair[1].component_id.clone()];
    let states = (0..GRID_POINTS)
        .map(|i| MixtureState::new(comps.clone(), vec![grid_x(i), 1.0 - grid_x(i)], t))
        .collect::<Result<Vec<_>, _>>()?;
    let predictions = model.predict_many(&states)?;
    let antoine = [pair[0].clone(), pair[1].clone()];
    states
        .iter()
        .zip(predictions)
        .map(|(s, pred)| {
            let bp = bubble_point(|_, _| Ok(pred.ln_gamma), &antoine, t, &s.x)?;
            Ok(PxyRow {
                x1: s.x[0],
                p: bp.p,
                y1: bp.y[0],
                out_of_range: bp.out_of_range,
            })
        })
        .collect()
}

/// CSV with header `x1,p_kPa,y1,out_of_range`.
pub fn write_pxy_csv(rows: &[PxyRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "x1,p_kPa,y1,out_of_range")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.x1, r.p, r.y1, r.out_of_range)?;
    }
    Ok(())
}

/// A binary system evaluated through the network.
#[derive(Debug, Clone, Copy)]
pub struct NeuralBinary<'a> {
    predictor: &'a Predictor,
    rows: [usize; 2],
}

impl NeuralBinary<'_> {
    /// `Δg_mix/RT` on the 101-point grid, from one batched evaluation.
    pub fn dgmix_curve(&self, t: f64) -> DGmixCurve {
        let p = self.predictor;
        let w = p.weight();
        let mut values: Vec<f64> = (0..GRID_POINTS).map(|i| ideal_mixing(grid_x(i))).collect();
        for m in &p.members {
            let mut tape = Tape::new();
            let nodes = place_params(&mut tape, &m.params, false);
            let mut plan = Planner::new(&m.features, false);
            let ts = m.params.scale_temperature(t);
            for i in 0..GRID_POINTS {
                let x = grid_x(i);
                plan.excess(&self.rows, &[x, 1.0 - x], ts);
            }
            let jets = build(&mut tape, &nodes, &plan.batch);
            let g = tape.value(jets.g).data();
            values.iter_mut().zip(g).for_each(|(v, g)| *v += w * g);
        }
        DGmixCurve { values, t }
    }

    /// Stability criterion at the 99 interior grid points, batched.
    pub fn stability_scan(&self, t: f64) -> StabilityScan {
        let p = self.predictor;
        let w = p.weight();
        let x: Vec<f64> = (1..GRID_POINTS - 1).map(grid_x).collect();
        let mut s = vec![0.0; x.len()];
        for m in &p.members {
            let mut tape = Tape::new();
            let nodes = place_params(&mut tape, &m.params, false);
            let mut plan = Planner::new(&m.features, true);
            let ts = m.params.scale_temperature(t);
            let handles: Vec<_> = x.iter().map(|&xi| plan.stability(self.rows, xi, ts)).collect();
            let jets = build(&mut tape, &nodes, &plan.batch);
            let (_, sv) = stability_nodes(&mut tape, &jets, &handles);
            s.iter_mut().zip(tape.value(sv).data()).for_each(|(a, b)| *a += w * b);
        }
        let (k, min) = s
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        StabilityScan {
            argmin: x[k],
            x,
            s,
            min,
        }
    }

    /// Grid splits of the convex envelope, refined where Newton converges.
    pub fn phase_splits(&self, t: f64) -> Vec<BinaryPhaseSplit> {
        detect_gaps(&self.dgmix_curve(t))
            .into_iter()
            .map(|s| refine_common_tangent(self, t, s).unwrap_or(s))
            .collect()
    }
}

impl BinaryModel for NeuralBinary<'_> {
    /// The jet components are recorded on `tape` as functions of the
    /// numeric composition; they are not differentiable with respect to the
    /// input nodes.
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError> {
        let p = self.predictor;
        let x = tape.item(x1.v);
        let slope = x1.d1.map(|d| tape.item(d));
        let curvature = x1.d2.map(|d| tape.item(d));
        let tracked = slope.is_some() || curvature.is_some();
        let second = x1.second && tracked;
        let mut total: Option<Dual2> = None;
        for m in &p.members {
            let nodes = place_params(tape, &m.params, false);
            let mut plan = Planner::new(&m.features, second);
            let ts = m.params.scale_temperature(t);
            if tracked {
                plan.stability(self.rows, x, ts);
            } else {
                plan.excess(&self.rows, &[x, 1.0 - x], ts);
            }
            let jets = build(tape, &nodes, &plan.batch);
            let jet = if tracked {
                // derivatives along e1 - e2, then the chain rule in t
                let gx = jets.d1.expect("direction requested");
                let k = slope.unwrap_or(0.0);
                let d1 = tape.scale(gx, k);
                let d2 = if second {
                    let gxx = jets.d2.expect("second order requested");
                    let a = tape.scale(gxx, k * k);
                    let b = tape.scale(gx, curvature.unwrap_or(0.0));
                    Some(tape.add(a, b))
                } else {
                    None
                };
                Dual2::from_parts(jets.g, Some(d1), d2, x1.second)
            } else {
                Dual2::constant(jets.g, x1.second)
            };
            total = Some(match total {
                None => jet,
                Some(acc) => acc.add(tape, jet),
            });
        }
        let total = total.expect("at least one member");
        Ok(if p.members.len() == 1 {
            total
        } else {
            total.scale(tape, p.weight())
        })
    }
}
