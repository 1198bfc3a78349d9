//! Second-order forward jets whose components live on the tape.
//!
//! A [`Dual2`] carries a value together with its first and second
//! derivatives along one scalar direction `t`. Because each component is a
//! tape node, reverse sweeps differentiate all three with respect to the
//! tape's parameters (forward-over-reverse).

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::AdError;

/// Value, first and second directional derivative. `None` marks a
/// component that is identically zero; `second == false` means the second
/// derivative is not tracked at all.
#[derive(Clone, Copy, Debug)]
pub struct Dual2 {
    pub v: Var,
    pub d1: Option<Var>,
    pub d2: Option<Var>,
    pub second: bool,
}

fn add_opt(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Option<Var> {
    match (a, b) {
        (Some(a), Some(b)) => Some(tape.add(a, b)),
        (x, None) | (None, x) => x,
    }
}

fn sub_opt(tape: &mut Tape, a: Option<Var>, b: Option<Var>) -> Option<Var> {
    match (a, b) {
        (Some(a), Some(b)) => Some(tape.sub(a, b)),
        (a, None) => a,
        (None, Some(b)) => Some(tape.neg(b)),
    }
}

fn mul_opt(tape: &mut Tape, a: Option<Var>, b: Var) -> Option<Var> {
    a.map(|a| tape.mul(a, b))
}

impl Dual2 {
    /// The independent variable itself: derivative 1, second derivative 0.
    pub fn variable(value: Var, direction: Var, second: bool) -> Self {
        Self {
            v: value,
            d1: Some(direction),
            d2: None,
            second,
        }
    }

    /// A quantity that does not depend on the direction.
    pub fn constant(value: Var, second: bool) -> Self {
        Self {
            v: value,
            d1: None,
            d2: None,
            second,
        }
    }

    /// Assembles a jet from known components.
    pub fn from_parts(v: Var, d1: Option<Var>, d2: Option<Var>, second: bool) -> Self {
        Self {
            v,
            d1,
            d2: if second { d2 } else { None },
            second,
        }
    }

    /// Evaluates the value of a component, or a zero tensor shaped like the
    /// value when the component is structurally zero.
    pub fn component(&self, tape: &Tape, k: usize) -> Tensor {
        let shape = tape.value(self.v).shape();
        let pick = match k {
            0 => Some(self.v),
            1 => self.d1,
            2 => self.d2,
            _ => panic!("Dual2 has components 0..=2"),
        };
        pick.map(|p| tape.value(p).clone())
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    fn both(&self, other: &Self) -> bool {
        self.second || other.second
    }

    pub fn add(self, tape: &mut Tape, other: Self) -> Self {
        let second = self.both(&other);
        Self {
            v: tape.add(self.v, other.v),
            d1: add_opt(tape, self.d1, other.d1),
            d2: if second {
                add_opt(tape, self.d2, other.d2)
            } else {
                None
            },
            second,
        }
    }

    pub fn sub(self, tape: &mut Tape, other: Self) -> Self {
        let second = self.both(&other);
        Self {
            v: tape.sub(self.v, other.v),
            d1: sub_opt(tape, self.d1, other.d1),
            d2: if second {
                sub_opt(tape, self.d2, other.d2)
            } else {
                None
            },
            second,
        }
    }

    pub fn scale(self, tape: &mut Tape, c: f64) -> Self {
        Self {
            v: tape.scale(self.v, c),
            d1: self.d1.map(|d| tape.scale(d, c)),
            d2: self.d2.map(|d| tape.scale(d, c)),
            second: self.second,
        }
    }

    pub fn neg(self, tape: &mut Tape) -> Self {
        self.scale(tape, -1.0)
    }

    pub fn offset(self, tape: &mut Tape, c: f64) -> Self {
        Self {
            v: tape.offset(self.v, c),
            ..self
        }
    }

    /// Product rule up to second order:
    /// `(ab)'' = a''b + 2a'b' + ab''`.
    pub fn mul(self, tape: &mut Tape, other: Self) -> Self {
        let second = self.both(&other);
        let v = tape.mul(self.v, other.v);
        let t1 = mul_opt(tape, self.d1, other.v);
        let t2 = mul_opt(tape, other.d1, self.v);
        let d1 = add_opt(tape, t1, t2);
        let d2 = if second {
            let a = mul_opt(tape, self.d2, other.v);
            let b = mul_opt(tape, other.d2, self.v);
            let cross = match (self.d1, other.d1) {
                (Some(x), Some(y)) => {
                    let p = tape.mul(x, y);
                    Some(tape.scale(p, 2.0))
                }
                _ => None,
            };
            let ab = add_opt(tape, a, b);
            add_opt(tape, ab, cross)
        } else {
            None
        };
        Self { v, d1, d2, second }
    }

    /// Multiplies by a direction-independent node.
    pub fn mul_var(self, tape: &mut Tape, p: Var) -> Self {
        Self {
            v: tape.mul(self.v, p),
            d1: mul_opt(tape, self.d1, p),
            d2: mul_opt(tape, self.d2, p),
            second: self.second,
        }
    }

    /// Applies a scalar function given nodes for `f(v)`, `f'(v)` and
    /// `f''(v)`.
    fn chain(self, tape: &mut Tape, f: Var, df: Var, ddf: impl FnOnce(&mut Tape) -> Var) -> Self {
        let d1 = mul_opt(tape, self.d1, df);
        let d2 = if self.second {
            let a = self.d1.map(|d| {
                let sq = tape.square(d);
                let dd = ddf(tape);
                tape.mul(dd, sq)
            });
            let b = mul_opt(tape, self.d2, df);
            add_opt(tape, a, b)
        } else {
            None
        };
        Self {
            v: f,
            d1,
            d2,
            second: self.second,
        }
    }

    pub fn exp(self, tape: &mut Tape) -> Self {
        let e = tape.exp(self.v);
        self.chain(tape, e, e, |_| e)
    }

    pub fn ln(self, tape: &mut Tape) -> Result<Self, AdError> {
        let l = tape.ln(self.v)?;
        let one = tape.constant(Tensor::filled(
            tape.value(self.v).rows(),
            tape.value(self.v).cols(),
            1.0,
        ));
        let inv = tape.div(one, self.v);
        let v = self.v;
        Ok(self.chain(tape, l, inv, |t| {
            let sq = t.square(v);
            let r = t.div(one, sq);
            t.neg(r)
        }))
    }

    pub fn sqrt(self, tape: &mut Tape) -> Result<Self, AdError> {
        let s = tape.sqrt(self.v)?;
        let one = tape.constant(Tensor::filled(
            tape.value(self.v).rows(),
            tape.value(self.v).cols(),
            1.0,
        ));
        let inv = tape.div(one, s);
        let df = tape.scale(inv, 0.5);
        let v = self.v;
        Ok(self.chain(tape, s, df, |t| {
            // -1/4 v^{-3/2}
            let q = t.div(df, v);
            t.scale(q, -0.5)
        }))
    }

    pub fn recip(self, tape: &mut Tape) -> Self {
        let one = tape.constant(Tensor::filled(
            tape.value(self.v).rows(),
            tape.value(self.v).cols(),
            1.0,
        ));
        let r = tape.div(one, self.v);
        let r2 = tape.square(r);
        let df = tape.neg(r2);
        self.chain(tape, r, df, |t| {
            let r3 = t.mul(r2, r);
            t.scale(r3, 2.0)
        })
    }

    pub fn div(self, tape: &mut Tape, other: Self) -> Self {
        let r = other.recip(tape);
        self.mul(tape, r)
    }

    pub fn square(self, tape: &mut Tape) -> Self {
        self.mul(tape, self)
    }

    pub fn sigmoid(self, tape: &mut Tape) -> Self {
        let s = tape.sigmoid(self.v);
        let one = tape.constant(Tensor::filled(
            tape.value(s).rows(),
            tape.value(s).cols(),
            1.0,
        ));
        let om = tape.sub(one, s);
        let ds = tape.mul(s, om);
        self.chain(tape, s, ds, |t| {
            // s'' = s' (1 - 2 s)
            let two_s = t.scale(s, 2.0);
            let k = t.sub(one, two_s);
            t.mul(ds, k)
        })
    }

    /// SiLU through the fused jet primitives.
    pub fn silu(self, tape: &mut Tape) -> Self {
        let v = tape.silu(self.v);
        let d1 = self.d1.map(|d| tape.silu_jet1(self.v, d));
        let d2 = if self.second {
            match (self.d1, self.d2) {
                (Some(a), b) => Some(tape.silu_jet2(self.v, a, b)),
                (None, Some(b)) => Some(tape.silu_jet1(self.v, b)),
                (None, None) => None,
            }
        } else {
            None
        };
        Self {
            v,
            d1,
            d2,
            second: self.second,
        }
    }

    /// `self · wᵀ` for a direction-independent weight matrix.
    pub fn matmul_nt(self, tape: &mut Tape, w: Var) -> Self {
        Self {
            v: tape.matmul_nt(self.v, w),
            d1: self.d1.map(|d| tape.matmul_nt(d, w)),
            d2: self.d2.map(|d| tape.matmul_nt(d, w)),
            second: self.second,
        }
    }

    /// Adds a bias row to the value only.
    pub fn add_row(self, tape: &mut Tape, bias: Var) -> Self {
        Self {
            v: tape.add_row(self.v, bias),
            ..self
        }
    }

    pub fn gather_rows(self, tape: &mut Tape, rows: &[usize]) -> Self {
        Self {
            v: tape.gather_rows(self.v, rows),
            d1: self.d1.map(|d| tape.gather_rows(d, rows)),
            d2: self.d2.map(|d| tape.gather_rows(d, rows)),
            second: self.second,
        }
    }

    pub fn scatter_add_rows(self, tape: &mut Tape, targets: &[usize], n_out: usize) -> Self {
        Self {
            v: tape.scatter_add_rows(self.v, targets, n_out),
            d1: self.d1.map(|d| tape.scatter_add_rows(d, targets, n_out)),
            d2: self.d2.map(|d| tape.scatter_add_rows(d, targets, n_out)),
            second: self.second,
        }
    }

    pub fn row_sum(self, tape: &mut Tape) -> Self {
        Self {
            v: tape.row_sum(self.v),
            d1: self.d1.map(|d| tape.row_sum(d)),
            d2: self.d2.map(|d| tape.row_sum(d)),
            second: self.second,
        }
    }

    pub fn value(&self, tape: &Tape) -> f64 {
        tape.item(self.v)
    }

    pub fn first(&self, tape: &Tape) -> f64 {
        self.d1.map_or(0.0, |d| tape.item(d))
    }

    pub fn second_derivative(&self, tape: &Tape) -> f64 {
        self.d2.map_or(0.0, |d| tape.item(d))
    }
}

/// Result of [`second_directional`]: the jet plus the seed node.
pub struct Directional {
    pub input: Var,
    pub jet: Dual2,
}

impl Directional {
    /// `(value, d1, d2)` as plain numbers.
    pub fn values(&self, tape: &Tape) -> (f64, f64, f64) {
        (
            self.jet.value(tape),
            self.jet.first(tape),
            self.jet.second_derivative(tape),
        )
    }
}

/// Evaluates `f` at `x0` as a second-order jet along `direction`.
///
/// The seed is recorded as a differentiable scalar, so the returned
/// derivative nodes can themselves be differentiated with
/// [`Tape::gradient`].
pub fn second_directional<F>(
    tape: &mut Tape,
    x0: f64,
    direction: f64,
    f: F,
) -> Result<Directional, AdError>
where
    F: FnOnce(&mut Tape, Dual2) -> Result<Dual2, AdError>,
{
    let input = tape.var(x0);
    let dir = tape.scalar(direction);
    let x = Dual2::variable(input, dir, true);
    let jet = f(tape, x)?;
    Ok(Directional { input, jet })
}
