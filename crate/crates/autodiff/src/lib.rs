//! Minimal differentiation engine.
//!
//! Reverse-mode gradients come from a [`Tape`] of tensor-valued nodes.
//! Derivatives with respect to a scalar direction (mole fraction) come from
//! [`Dual2`] jets whose three components are themselves tape nodes, so a
//! reverse sweep differentiates first and second directional derivatives
//! with respect to the parameters.
//!
//! ```
//! use gibbsnet_autodiff::Tape;
//!
//! let mut tape = Tape::new();
//! let a = tape.var(2.0);
//! let b = tape.var(3.0);
//! let f = tape.mul(a, b);
//! assert_eq!(tape.item(f), 6.0);
//! assert_eq!(tape.gradient(f, &[a, b]).unwrap(), vec![3.0, 2.0]);
//! ```

mod dual;
pub mod functions;
mod tape;
mod tensor;

pub use dual::{second_directional, Directional, Dual2};
pub use tape::{Tape, Var};
pub use tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("detached input: variable is not recorded on this tape")]
    DetachedInput,
    #[error("domain error: {op} of {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("tape already swept; call reset() before another reverse sweep")]
    AlreadySwept,
    #[error("reverse sweep needs a 1x1 output, got {0:?}")]
    NonScalarOutput((usize, usize)),
    #[error("scalar gradient requested for a {0:?} input")]
    NonScalarInput((usize, usize)),
}

/// Largest error between reverse-mode gradients of `f` at `x` and central
/// differences with step `h`.
///
/// Errors are relative with a unit floor, `|ad - fd| / max(1, |ad|, |fd|)`,
/// so vanishing derivatives are compared absolutely. Non-smooth points
/// (e.g. `|x|` at 0) show up as large errors.
pub fn finite_difference_check<F>(f: F, x: &[f64], h: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |point: &[f64]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|&v| tape.var(v)).collect();
        let out = f(&mut tape, &vars);
        tape.item(out)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
    let out = f(&mut tape, &vars);
    let grad = tape
        .gradient(out, &vars)
        .expect("inputs were created on this tape");
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for (i, g) in grad.iter().enumerate() {
        probe[i] = x[i] + h;
        let up = eval(&probe);
        probe[i] = x[i] - h;
        let down = eval(&probe);
        probe[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        let err = (g - fd).abs() / 1f64.max(g.abs()).max(fd.abs());
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}
