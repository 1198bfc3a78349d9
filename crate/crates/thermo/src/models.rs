//! Excess Gibbs energy models used as ground truth.

use gibbsnet_autodiff::{AdError, Dual2, Tape};
use serde::{Deserialize, Serialize};

use crate::{Result, ThermoError};

/// `1 - x` for a jet.
pub fn one_minus(tape: &mut Tape, x: Dual2) -> Dual2 {
    let one = tape.scalar(1.0);
    Dual2::constant(one, x.second).sub(tape, x)
}

/// A binary `g^E/RT` model in terms of the first component's mole fraction.
pub trait BinaryModel {
    /// `g^E/RT` evaluated on a jet in `x1`.
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError>;

    fn excess(&self, x1: f64, t: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.scalar(x1);
        let jet = self.excess_jet(&mut tape, Dual2::constant(v, false), t)?;
        Ok(jet.value(&tape))
    }

    /// `[ln γ1, ln γ2]` from `g + x2 g'` and `g - x1 g'`.
    fn ln_gamma(&self, x1: f64, t: f64) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let v = tape.scalar(x1);
        let dir = tape.scalar(1.0);
        let jet = self.excess_jet(&mut tape, Dual2::variable(v, dir, false), t)?;
        let (g, dg) = (jet.value(&tape), jet.first(&tape));
        Ok([g + (1.0 - x1) * dg, g - x1 * dg])
    }
}

impl<M: BinaryModel + ?Sized> BinaryModel for &M {
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError> {
        (**self).excess_jet(tape, x1, t)
    }
    fn excess(&self, x1: f64, t: f64) -> Result<f64> {
        (**self).excess(x1, t)
    }
    fn ln_gamma(&self, x1: f64, t: f64) -> Result<[f64; 2]> {
        (**self).ln_gamma(x1, t)
    }
}

/// One-parameter Margules, `g^E/RT = A(T) x1 x2` with `A(T) = a0 + a1 / T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margules {
    pub a0: f64,
    pub a1: f64,
}

impl Margules {
    pub fn constant(a: f64) -> Self {
        Self { a0: a, a1: 0.0 }
    }

    pub fn inverse_temperature(a1: f64) -> Self {
        Self { a0: 0.0, a1 }
    }

    pub fn a(&self, t: f64) -> f64 {
        self.a0 + self.a1 / t
    }
}

impl BinaryModel for Margules {
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError> {
        let x2 = one_minus(tape, x1);
        Ok(x1.mul(tape, x2).scale(tape, self.a(t)))
    }

    fn excess(&self, x1: f64, t: f64) -> Result<f64> {
        Ok(self.a(t) * x1 * (1.0 - x1))
    }

    fn ln_gamma(&self, x1: f64, t: f64) -> Result<[f64; 2]> {
        let (a, x2) = (self.a(t), 1.0 - x1);
        Ok([a * x2 * x2, a * x1 * x1])
    }
}

/// Multi-component NRTL with `τ_ij = a_ij + b_ij / T` and
/// `G_ij = exp(-α_ij τ_ij)`. Matrices are row-major `n × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NrtlParams {
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// `τ` and `G` at one temperature.
struct NrtlAt {
    n: usize,
    tau: Vec<f64>,
    g: Vec<f64>,
}

impl NrtlParams {
    pub fn new(n: usize, a: Vec<f64>, b: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        let p = Self { n, a, b, alpha };
        p.validate()?;
        Ok(p)
    }

    /// Binary parameters from `(a12, b12)`, `(a21, b21)` and `α`.
    pub fn binary(tau12: (f64, f64), tau21: (f64, f64), alpha: f64) -> Self {
        Self {
            n: 2,
            a: vec![0.0, tau12.0, tau21.0, 0.0],
            b: vec![0.0, tau12.1, tau21.1, 0.0],
            alpha: vec![0.0, alpha, alpha, 0.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ThermoError::InvalidState(m));
        let nn = self.n * self.n;
        if self.a.len() != nn || self.b.len() != nn || self.alpha.len() != nn {
            return bad(format!("NRTL matrices must be {0}x{0}", self.n));
        }
        for i in 0..self.n {
            if self.a[i * self.n + i] != 0.0 || self.b[i * self.n + i] != 0.0 {
                return bad(format!("tau[{i}][{i}] must be zero"));
            }
            for j in 0..self.n {
                let al = self.alpha[i * self.n + j];
                if al != self.alpha[j * self.n + i] {
                    return bad(format!("alpha not symmetric at ({i}, {j})"));
                }
                if i != j && !(0.0..=1.0).contains(&al) {
                    return bad(format!("alpha[{i}][{j}] = {al} outside [0, 1]"));
                }
            }
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return bad("non-finite NRTL parameter".into());
        }
        Ok(())
    }

    /// Parameters restricted to the listed components, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let m = idx.len();
        let mut out = Self {
            n: m,
            a: vec![0.0; m * m],
            b: vec![0.0; m * m],
            alpha: vec![0.0; m * m],
        };
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                let src = i * self.n + j;
                out.a[p * m + q] = self.a[src];
                out.b[p * m + q] = self.b[src];
                out.alpha[p * m + q] = self.alpha[src];
            }
        }
        out
    }

    pub fn tau(&self, i: usize, j: usize, t: f64) -> f64 {
        let k = i * self.n + j;
        self.a[k] + self.b[k] / t
    }

    fn at(&self, t: f64) -> NrtlAt {
        let n = self.n;
        let mut tau = vec![0.0; n * n];
        let mut g = vec![0.0; n * n];
        for k in 0..n * n {
            tau[k] = self.a[k] + self.b[k] / t;
            g[k] = (-self.alpha[k] * tau[k]).exp();
        }
        NrtlAt { n, tau, g }
    }

    pub fn excess(&self, x: &[f64], t: f64) -> f64 {
        let p = self.at(t);
        let n = p.n;
        (0..n)
            .map(|i| {
                let num: f64 = (0..n).map(|j| x[j] * p.tau[j * n + i] * p.g[j * n + i]).sum();
                let den: f64 = (0..n).map(|k| x[k] * p.g[k * n + i]).sum();
                x[i] * num / den
            })
            .sum()
    }

    /// Closed-form NRTL activity coefficients.
    pub fn ln_gamma(&self, x: &[f64], t: f64) -> Vec<f64> {
        let p = self.at(t);
        let n = p.n;
        let den: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|k| x[k] * p.g[k * n + j]).sum())
            .collect();
        let num: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|m| x[m] * p.tau[m * n + j] * p.g[m * n + j]).sum())
            .collect();
        (0..n)
            .map(|i| {
                let tail: f64 = (0..n)
                    .map(|j| x[j] * p.g[i * n + j] / den[j] * (p.tau[i * n + j] - num[j] / den[j]))
                    .sum();
                num[i] / den[i] + tail
            })
            .collect()
    }

    /// `g^E/RT` on composition jets.
    pub fn excess_jet(&self, tape: &mut Tape, x: &[Dual2], t: f64) -> Result<Dual2, AdError> {
        let p = self.at(t);
        let n = p.n;
        let mut total: Option<Dual2> = None;
        for i in 0..n {
            let mut num: Option<Dual2> = None;
            let mut den: Option<Dual2> = None;
            for j in 0..n {
                let tg = p.tau[j * n + i] * p.g[j * n + i];
                if tg != 0.0 {
                    let term = x[j].scale(tape, tg);
                    num = Some(match num {
                        Some(s) => s.add(tape, term),
                        None => term,
                    });
                }
                let term = x[j].scale(tape, p.g[j * n + i]);
                den = Some(match den {
                    Some(s) => s.add(tape, term),
                    None => term,
                });
            }
            let Some(num) = num else { continue };
            let frac = num.div(tape, den.expect("n >= 1"));
            let term = x[i].mul(tape, frac);
            total = Some(match total {
                Some(s) => s.add(tape, term),
                None => term,
            });
        }
        Ok(match total {
            Some(s) => s,
            None => {
                let z = tape.scalar(0.0);
                Dual2::constant(z, x[0].second)
            }
        })
    }
}

impl BinaryModel for NrtlParams {
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError> {
        assert_eq!(self.n, 2, "binary view of a {}-component NRTL model", self.n);
        let x2 = one_minus(tape, x1);
        NrtlParams::excess_jet(self, tape, &[x1, x2], t)
    }

    fn excess(&self, x1: f64, t: f64) -> Result<f64> {
        Ok(NrtlParams::excess(self, &[x1, 1.0 - x1], t))
    }

    fn ln_gamma(&self, x1: f64, t: f64) -> Result<[f64; 2]> {
        let v = NrtlParams::ln_gamma(self, &[x1, 1.0 - x1], t);
        Ok([v[0], v[1]])
    }
}

/// Adapter turning a jet closure into a [`BinaryModel`].
pub struct ExcessFn<F>(pub F);

impl<F> BinaryModel for ExcessFn<F>
where
    F: Fn(&mut Tape, Dual2, f64) -> Result<Dual2, AdError>,
{
    fn excess_jet(&self, tape: &mut Tape, x1: Dual2, t: f64) -> Result<Dual2, AdError> {
        (self.0)(tape, x1, t)
    }
}
