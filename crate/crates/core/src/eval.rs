//! Pointwise errors, system-wise MAE and miscibility detection.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use gibbsnet_thermo::{AntoineCoefficients, ComponentId, MixtureState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataPoint, Kind, Payload, SystemId};
use crate::predict::Predictor;
use crate::train::vle_ln_gamma;
use crate::{Error, Result};

/// `(1/N) Σ |Δ ln γ_i|`
pub fn vle_error(pred: &[f64], exp: &[f64]) -> f64 {
    pred.iter().zip(exp).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}

/// `|Δ ln γ∞|`
pub fn aci_error(pred: f64, exp: f64) -> f64 {
    (pred - exp).abs()
}

/// Mean absolute error over both phases and both components of a binary
/// split given by the fractions of component one.
pub fn lle_error(pred: [f64; 2], exp: [f64; 2]) -> f64 {
    // Δx2 = -Δx1 in each phase
    let sum = 2.0 * ((pred[0] - exp[0]).abs() + (pred[1] - exp[1]).abs());
    sum / 4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub system: SystemId,
    pub kind: Kind,
    #[serde(rename = "T")]
    pub t: f64,
    /// Missing for LLE points where no gap is predicted.
    pub error: Option<f64>,
    /// LLE only: whether the predicted curve is locally unstable somewhere.
    pub gap_detected: Option<bool>,
}

/// What a model predicts for a binary LLE state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LleOutcome {
    pub detected: bool,
    pub split: Option<[f64; 2]>,
}

fn states_for(points: &[&DataPoint]) -> Result<Vec<MixtureState>> {
    points
        .iter()
        .map(|p| {
            let (components, x) = match &p.payload {
                Payload::Vle { x, .. } => (p.system.components().to_vec(), x.clone()),
                Payload::Aci {
                    solute,
                    solvents,
                    solvent_x,
                    ..
                } => {
                    let mut c = vec![solute.clone()];
                    c.extend(solvents.iter().cloned());
                    let mut x = vec![0.0];
                    x.extend_from_slice(solvent_x);
                    (c, x)
                }
                Payload::Lle { .. } => unreachable!("LLE points are evaluated separately"),
            };
            Ok(MixtureState::new(components, x, p.t)?)
        })
        .collect()
}

/// Scores `points` given batched `ln γ` predictions and a binary LLE
/// predictor; the ideal-solution baseline and trained models share it.
pub fn evaluate_with(
    points: &[DataPoint],
    antoine: &HashMap<ComponentId, AntoineCoefficients>,
    ln_gamma: impl Fn(&[MixtureState]) -> Result<Vec<Vec<f64>>>,
    lle: impl Fn(&ComponentId, &ComponentId, f64) -> Result<LleOutcome> + Sync,
) -> Result<Vec<EvalRecord>> {
    let gamma_points: Vec<&DataPoint> = points.iter().filter(|p| p.kind() != Kind::Lle).collect();
    let states = states_for(&gamma_points)?;
    let preds = ln_gamma(&states)?;
    if preds.len() != states.len() {
        return Err(Error::Dimension {
            what: "predictions",
            expected: states.len(),
            found: preds.len(),
        });
    }
    let mut gamma_errors = Vec::with_capacity(gamma_points.len());
    for (p, pred) in gamma_points.iter().zip(&preds) {
        gamma_errors.push(match &p.payload {
            Payload::Vle { .. } => vle_error(pred, &vle_ln_gamma(p, antoine)?),
            Payload::Aci { ln_gamma_inf, .. } => aci_error(pred[0], *ln_gamma_inf),
            Payload::Lle { .. } => unreachable!(),
        });
    }
    let mut gamma_errors = gamma_errors.into_iter();
    let lle_outcomes: Vec<Result<Option<LleOutcome>>> = points
        .par_iter()
        .map(|p| match &p.payload {
            Payload::Lle { .. } => {
                let c = p.system.components();
                lle(&c[0], &c[1], p.t).map(Some)
            }
            _ => Ok(None),
        })
        .collect();
    points
        .iter()
        .zip(lle_outcomes)
        .map(|(p, outcome)| {
            let (error, gap_detected) = match (&p.payload, outcome?) {
                (Payload::Lle { x1_lo, x1_hi, .. }, Some(o)) => {
                    (o.split.map(|s| lle_error(s, [*x1_lo, *x1_hi])), Some(o.detected))
                }
                _ => (gamma_errors.next(), None),
            };
            Ok(EvalRecord {
                system: p.system.clone(),
                kind: p.kind(),
                t: p.t,
                error,
                gap_detected,
            })
        })
        .collect()
}

/// Outermost predicted split of a binary, used for `ε_LLE`.
pub fn predicted_lle(model: &Predictor, a: &ComponentId, b: &ComponentId, t: f64) -> Result<LleOutcome> {
    let binary = model.binary(a, b)?;
    let detected = binary.stability_scan(t).min < 0.0;
    let splits = if detected { binary.phase_splits(t) } else { Vec::new() };
    let split = (!splits.is_empty()).then(|| {
        [
            splits.iter().map(|s| s.x1_lo).fold(f64::INFINITY, f64::min),
            splits.iter().map(|s| s.x1_hi).fold(f64::NEG_INFINITY, f64::max),
        ]
    });
    Ok(LleOutcome { detected, split })
}

pub fn evaluate(
    model: &Predictor,
    points: &[DataPoint],
    antoine: &HashMap<ComponentId, AntoineCoefficients>,
) -> Result<Vec<EvalRecord>> {
    evaluate_with(
        points,
        antoine,
        |states| Ok(model.predict_many(states)?.into_iter().map(|p| p.ln_gamma).collect()),
        |a, b, t| predicted_lle(model, a, b, t),
    )
}

/// The ideal solution: `ln γ = 0`, never a gap.
pub fn evaluate_ideal(
    points: &[DataPoint],
    antoine: &HashMap<ComponentId, AntoineCoefficients>,
) -> Result<Vec<EvalRecord>> {
    evaluate_with(
        points,
        antoine,
        |states| Ok(states.iter().map(|s| vec![0.0; s.x.len()]).collect()),
        |_, _, _| {
            Ok(LleOutcome {
                detected: false,
                split: None,
            })
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMae {
    pub system: SystemId,
    pub kind: Kind,
    pub points: usize,
    pub mae: f64,
}

/// Mean error per system and data kind, over records that carry an error.
pub fn mae_sys(records: &[EvalRecord]) -> Vec<SystemMae> {
    let mut groups: BTreeMap<(Kind, &SystemId), (usize, f64)> = BTreeMap::new();
    for r in records {
        if let Some(e) = r.error {
            let g = groups.entry((r.kind, &r.system)).or_default();
            g.0 += 1;
            g.1 += e;
        }
    }
    groups
        .into_iter()
        .map(|((kind, system), (n, sum))| SystemMae {
            system: system.clone(),
            kind,
            points: n,
            mae: sum / n as f64,
        })
        .collect()
}

/// Box-plot summary with whiskers at the most extreme values within
/// 1.5 IQR of the quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| v.is_nan()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(Self {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            whisker_lo: *v.iter().find(|&&x| x >= lo_fence).expect("q1 lies inside"),
            whisker_hi: *v.iter().rev().find(|&&x| x <= hi_fence).expect("q3 lies inside"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Detection {
    pub points: usize,
    pub detected: usize,
    /// `detected / points`; zero without LLE points.
    pub rate: f64,
    /// `(detected, points)` per system.
    pub per_system: BTreeMap<String, (usize, usize)>,
}

pub fn detection_rate(records: &[EvalRecord]) -> Detection {
    let mut d = Detection::default();
    for r in records {
        if let Some(hit) = r.gap_detected {
            d.points += 1;
            d.detected += usize::from(hit);
            let e = d.per_system.entry(r.system.to_string()).or_default();
            e.0 += usize::from(hit);
            e.1 += 1;
        }
    }
    d.rate = if d.points == 0 {
        0.0
    } else {
        d.detected as f64 / d.points as f64
    };
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub points: usize,
    pub systems: usize,
    pub mae_sys: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kinds: BTreeMap<Kind, KindSummary>,
    /// Per-system MAE of the VLE and ACI groups together.
    pub ln_gamma: Option<BoxStats>,
    pub detection: Detection,
    pub systems: Vec<SystemMae>,
}

impl EvalReport {
    pub fn new(records: &[EvalRecord]) -> Self {
        let systems = mae_sys(records);
        let mut kinds = BTreeMap::new();
        for kind in [Kind::Vle, Kind::Aci, Kind::Lle] {
            let groups: Vec<f64> = systems.iter().filter(|s| s.kind == kind).map(|s| s.mae).collect();
            kinds.insert(
                kind,
                KindSummary {
                    points: records.iter().filter(|r| r.kind == kind).count(),
                    systems: groups.len(),
                    mae_sys: BoxStats::from_values(&groups),
                },
            );
        }
        let gamma: Vec<f64> = systems.iter().filter(|s| s.kind != Kind::Lle).map(|s| s.mae).collect();
        Self {
            kinds,
            ln_gamma: BoxStats::from_values(&gamma),
            detection: detection_rate(records),
            systems,
        }
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Per-point CSV: `system,kind,T,error,gap_detected`.
pub fn write_records_csv(records: &[EvalRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "system,kind,T,error,gap_detected")?;
    for r in records {
        let e = r.error.map(|e| e.to_string()).unwrap_or_default();
        let g = r.gap_detected.map(|g| g.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.system, r.kind, r.t, e, g)?;
    }
    Ok(())
}
