//! Binary convex envelope method.
//!
//! Gaps are lower-hull segments of the `Δg_mix/RT` grid that skip interior
//! points; each is refined by Newton iteration on isoactivity.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::mixing::{grid_x, DGmixCurve};
use crate::models::BinaryModel;
use crate::{Result, ThermoError};

/// Interior points must lie this far above a hull segment for it to count
/// as a gap.
pub const GAP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryPhaseSplit {
    pub x1_lo: f64,
    pub x1_hi: f64,
    pub refined: bool,
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Indices of the lower convex hull of points sorted by strictly increasing
/// `x`. Collinear points stay on the hull.
pub fn lower_convex_envelope(points: &[(f64, f64)]) -> Result<Vec<usize>> {
    if points.len() < 2 {
        return Err(ThermoError::TooFewPoints(points.len()));
    }
    if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(ThermoError::InvalidState(
            "hull points must have strictly increasing x".into(),
        ));
    }
    let mut hull: Vec<usize> = Vec::with_capacity(points.len());
    for (i, &p) in points.iter().enumerate() {
        while hull.len() >= 2 {
            let o = points[hull[hull.len() - 2]];
            let a = points[hull[hull.len() - 1]];
            if cross(o, a, p) < 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    Ok(hull)
}

/// Grid-resolution miscibility gaps, ordered by composition.
pub fn detect_gaps(curve: &DGmixCurve) -> Vec<BinaryPhaseSplit> {
    // Integer abscissae keep the hull exactly mirror-symmetric.
    let pts: Vec<(f64, f64)> = curve
        .values
        .iter()
        .enumerate()
        .map(|(i, &g)| (i as f64, g))
        .collect();
    let Ok(hull) = lower_convex_envelope(&pts) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 2 {
            continue;
        }
        let (ga, gb) = (curve.values[a], curve.values[b]);
        let span = (b - a) as f64;
        let lift = (a + 1..b)
            .map(|k| curve.values[k] - (ga + (gb - ga) * (k - a) as f64 / span))
            .fold(f64::NEG_INFINITY, f64::max);
        if lift > GAP_TOLERANCE {
            out.push(BinaryPhaseSplit {
                x1_lo: grid_x(a),
                x1_hi: grid_x(b),
                refined: false,
            });
        }
    }
    out
}

const MAX_NEWTON: usize = 100;
const COLLAPSE: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-10;

fn isoactivity(model: &impl BinaryModel, t: f64, lo: f64, hi: f64) -> Result<[f64; 2]> {
    let a = model.ln_gamma(lo, t)?;
    let b = model.ln_gamma(hi, t)?;
    Ok([
        lo.ln() + a[0] - hi.ln() - b[0],
        (1.0 - lo).ln() + a[1] - (1.0 - hi).ln() - b[1],
    ])
}

fn norm(r: [f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

fn admissible(lo: f64, hi: f64) -> bool {
    lo > 0.0 && hi < 1.0 && hi - lo > COLLAPSE
}

/// Refines a grid split to `x_i' γ_i' = x_i'' γ_i''` by damped Newton with a
/// finite-difference Jacobian.
pub fn refine_common_tangent(
    model: &impl BinaryModel,
    t: f64,
    init: BinaryPhaseSplit,
) -> Result<BinaryPhaseSplit> {
    let (mut lo, mut hi) = (init.x1_lo, init.x1_hi);
    // Grid endpoints are pure components; start just inside.
    lo = lo.max(1e-4);
    hi = hi.min(1.0 - 1e-4);
    if !admissible(lo, hi) {
        return Err(ThermoError::NoStableSplit);
    }
    let mut r = isoactivity(model, t, lo, hi)?;
    for _ in 0..MAX_NEWTON {
        if norm(r) < 1e-14 {
            break;
        }
        let mut jac = [[0.0; 2]; 2];
        for (col, base) in [lo, hi].into_iter().enumerate() {
            let h = 1e-7 * base.min(1.0 - base).max(1e-3);
            let (up, dn) = if col == 0 {
                (isoactivity(model, t, lo + h, hi)?, isoactivity(model, t, lo - h, hi)?)
            } else {
                (isoactivity(model, t, lo, hi + h)?, isoactivity(model, t, lo, hi - h)?)
            };
            jac[0][col] = (up[0] - dn[0]) / (2.0 * h);
            jac[1][col] = (up[1] - dn[1]) / (2.0 * h);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(ThermoError::NoStableSplit);
        }
        let d_lo = -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det;
        let d_hi = -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det;
        let current = norm(r);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let (nl, nh) = (lo + lambda * d_lo, hi + lambda * d_hi);
            if admissible(nl, nh) {
                let nr = isoactivity(model, t, nl, nh)?;
                if norm(nr).is_finite() && norm(nr) < current {
                    accepted = Some((nl, nh, nr));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nl, nh, nr)) => {
                let step = (nl - lo).abs().max((nh - hi).abs());
                lo = nl;
                hi = nh;
                r = nr;
                if step < 1e-15 {
                    break;
                }
            }
            None => break,
        }
    }
    if norm(r) < RESIDUAL_TOL && admissible(lo, hi) {
        Ok(BinaryPhaseSplit {
            x1_lo: lo,
            x1_hi: hi,
            refined: true,
        })
    } else {
        Err(ThermoError::NoStableSplit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsoluteKind {
    /// Gap at the lower temperature, none at the higher.
    Upper,
    /// No gap at the lower temperature, gap at the higher.
    Lower,
}

/// A consolute temperature lies in `(t_below, t_above)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsoluteBracket {
    pub t_below: f64,
    pub t_above: f64,
    pub kind: ConsoluteKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinodalRow {
    pub t: f64,
    pub splits: Vec<BinaryPhaseSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinodalScan {
    pub rows: Vec<BinodalRow>,
    pub consolute: Vec<ConsoluteBracket>,
}

/// Detects and refines gaps at every temperature. A split whose refinement
/// fails is reported at grid resolution with `refined = false`.
pub fn binodal_scan(model: &impl BinaryModel, temperatures: &[f64]) -> Result<BinodalScan> {
    let mut rows = Vec::with_capacity(temperatures.len());
    for &t in temperatures {
        let curve = DGmixCurve::from_model(model, t)?;
        let splits = detect_gaps(&curve)
            .into_iter()
            .map(|s| refine_common_tangent(model, t, s).unwrap_or(s))
            .collect();
        rows.push(BinodalRow { t, splits });
    }
    let consolute = rows
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (!w[0].splits.is_empty(), !w[1].splits.is_empty());
            let kind = match (a, b) {
                (true, false) => ConsoluteKind::Upper,
                (false, true) => ConsoluteKind::Lower,
                _ => return None,
            };
            Some(ConsoluteBracket {
                t_below: w[0].t,
                t_above: w[1].t,
                kind,
            })
        })
        .collect();
    Ok(BinodalScan { rows, consolute })
}

impl BinodalScan {
    /// CSV with header `T,x1_lo,x1_hi,refined`; temperatures without a gap
    /// get empty composition fields.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "T,x1_lo,x1_hi,refined")?;
        for row in &self.rows {
            if row.splits.is_empty() {
                writeln!(w, "{},,,false", row.t)?;
            }
            for s in &row.splits {
                writeln!(w, "{},{},{},{}", row.t, s.x1_lo, s.x1_hi, s.refined)?;
            }
        }
        Ok(())
    }
}
