//! Gibbs energy of mixing on the 101-point composition grid.

use gibbsnet_autodiff::{Dual2, Tape};
use serde::{Deserialize, Serialize};

use crate::models::{one_minus, BinaryModel};
use crate::Result;

pub const GRID_POINTS: usize = 101;

/// Mole fraction of grid point `i`.
pub fn grid_x(i: usize) -> f64 {
    i as f64 / (GRID_POINTS - 1) as f64
}

fn x_ln_x(x: f64) -> f64 {
    if x < 1e-300 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Ideal mixing term `x ln x + (1 - x) ln(1 - x)` with `0 ln 0 = 0`.
pub fn ideal_mixing(x1: f64) -> f64 {
    x_ln_x(x1) + x_ln_x(1.0 - x1)
}

/// `Δg_mix/RT` at `x1 = 0, 0.01, …, 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DGmixCurve {
    pub values: Vec<f64>,
    pub t: f64,
}

impl DGmixCurve {
    pub fn from_model(model: &impl BinaryModel, t: f64) -> Result<Self> {
        delta_g_mix_curve(|x| model.excess(x, t), t)
    }

    /// The same mixture with the components swapped.
    pub fn reversed(&self) -> Self {
        Self {
            values: self.values.iter().rev().copied().collect(),
            t: self.t,
        }
    }
}

/// Samples `g^E/RT + ideal mixing` on the grid.
pub fn delta_g_mix_curve<F>(mut excess: F, t: f64) -> Result<DGmixCurve>
where
    F: FnMut(f64) -> Result<f64>,
{
    let values = (0..GRID_POINTS)
        .map(|i| {
            let x = grid_x(i);
            Ok(excess(x)? + ideal_mixing(x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DGmixCurve { values, t })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityScan {
    /// Interior grid compositions.
    pub x: Vec<f64>,
    /// `∂²(Δg_mix/RT)/∂x1²` at each interior point.
    pub s: Vec<f64>,
    pub min: f64,
    pub argmin: f64,
}

impl StabilityScan {
    /// Grid points where the mixture is locally unstable.
    pub fn unstable(&self) -> impl Iterator<Item = f64> + '_ {
        self.x.iter().zip(&self.s).filter(|(_, s)| **s < 0.0).map(|(x, _)| *x)
    }
}

/// Second composition derivative of `x ln x + (1-x) ln(1-x) + g^E/RT` at
/// one interior point.
pub fn stability_at(model: &impl BinaryModel, x1: f64, t: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.scalar(x1);
    let dir = tape.scalar(1.0);
    let x = Dual2::variable(v, dir, true);
    let ge = model.excess_jet(&mut tape, x, t)?;
    let x2 = one_minus(&mut tape, x);
    let a = x.ln(&mut tape)?.mul(&mut tape, x);
    let b = x2.ln(&mut tape)?.mul(&mut tape, x2);
    let total = ge.add(&mut tape, a).add(&mut tape, b);
    Ok(total.second_derivative(&tape))
}

/// Stability criterion over the 99 interior grid points (the entropy term
/// diverges at the endpoints).
pub fn stability_scan(model: &impl BinaryModel, t: f64) -> Result<StabilityScan> {
    let x: Vec<f64> = (1..GRID_POINTS - 1).map(grid_x).collect();
    let s = x
        .iter()
        .map(|&xi| stability_at(model, xi, t))
        .collect::<Result<Vec<_>>>()?;
    let (k, min) = s
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(StabilityScan {
        argmin: x[k],
        x,
        s,
        min,
    })
}
