//! Random smooth expression trees evaluated three ways: plain `f64`, the
//! reverse tape and second-order jets.

#![allow(dead_code)]

use gibbsnet_autodiff::{Dual2, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Small expression trees with smooth, domain-safe primitives.
#[derive(Debug, Clone)]
pub enum Expr {
    Input(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    // a / (1 + b²)
    SafeDiv(Box<Expr>, Box<Expr>),
    // exp(tanh-like squashing keeps magnitudes tame): exp(sigmoid(a))
    ExpSig(Box<Expr>),
    // ln(1 + a²)
    LogOnePlusSq(Box<Expr>),
    Sigmoid(Box<Expr>),
    Silu(Box<Expr>),
    // sqrt(1 + a²)
    Hypot(Box<Expr>),
    Square(Box<Expr>),
}

pub fn random_expr(rng: &mut ChaCha8Rng, depth: usize, n_inputs: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.8) {
            Expr::Input(rng.gen_range(0..n_inputs))
        } else {
            Expr::Const(rng.gen_range(-2.0..2.0))
        };
    }
    let op = rng.gen_range(0..11);
    let mut sub = || Box::new(random_expr(rng, depth - 1, n_inputs));
    match op {
        0 => Expr::Add(sub(), sub()),
        1 => Expr::Sub(sub(), sub()),
        2 => Expr::Mul(sub(), sub()),
        3 => Expr::SafeDiv(sub(), sub()),
        4 => Expr::ExpSig(sub()),
        5 => Expr::LogOnePlusSq(sub()),
        6 => Expr::Sigmoid(sub()),
        7 => Expr::Silu(sub()),
        8 => Expr::Hypot(sub()),
        9 => Expr::Square(sub()),
        _ => Expr::Mul(sub(), sub()),
    }
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn eval(e: &Expr, x: &[f64]) -> f64 {
    match e {
        Expr::Input(i) => x[*i],
        Expr::Const(c) => *c,
        Expr::Add(a, b) => eval(a, x) + eval(b, x),
        Expr::Sub(a, b) => eval(a, x) - eval(b, x),
        Expr::Mul(a, b) => eval(a, x) * eval(b, x),
        Expr::SafeDiv(a, b) => {
            let bv = eval(b, x);
            eval(a, x) / (1.0 + bv * bv)
        }
        Expr::ExpSig(a) => sig(eval(a, x)).exp(),
        Expr::LogOnePlusSq(a) => {
            let v = eval(a, x);
            (1.0 + v * v).ln()
        }
        Expr::Sigmoid(a) => sig(eval(a, x)),
        Expr::Silu(a) => {
            let v = eval(a, x);
            v * sig(v)
        }
        Expr::Hypot(a) => {
            let v = eval(a, x);
            (1.0 + v * v).sqrt()
        }
        Expr::Square(a) => {
            let v = eval(a, x);
            v * v
        }
    }
}

pub fn build(e: &Expr, t: &mut Tape, x: &[Var]) -> Var {
    match e {
        Expr::Input(i) => x[*i],
        Expr::Const(c) => t.scalar(*c),
        Expr::Add(a, b) => {
            let (a, b) = (build(a, t, x), build(b, t, x));
            t.add(a, b)
        }
        Expr::Sub(a, b) => {
            let (a, b) = (build(a, t, x), build(b, t, x));
            t.sub(a, b)
        }
        Expr::Mul(a, b) => {
            let (a, b) = (build(a, t, x), build(b, t, x));
            t.mul(a, b)
        }
        Expr::SafeDiv(a, b) => {
            let (a, b) = (build(a, t, x), build(b, t, x));
            let sq = t.square(b);
            let den = t.offset(sq, 1.0);
            t.div(a, den)
        }
        Expr::ExpSig(a) => {
            let a = build(a, t, x);
            let s = t.sigmoid(a);
            t.exp(s)
        }
        Expr::LogOnePlusSq(a) => {
            let a = build(a, t, x);
            let sq = t.square(a);
            let arg = t.offset(sq, 1.0);
            t.ln(arg).unwrap()
        }
        Expr::Sigmoid(a) => {
            let a = build(a, t, x);
            t.sigmoid(a)
        }
        Expr::Silu(a) => {
            let a = build(a, t, x);
            t.silu(a)
        }
        Expr::Hypot(a) => {
            let a = build(a, t, x);
            let sq = t.square(a);
            let arg = t.offset(sq, 1.0);
            t.sqrt(arg).unwrap()
        }
        Expr::Square(a) => {
            let a = build(a, t, x);
            t.square(a)
        }
    }
}

pub fn build_dual(e: &Expr, t: &mut Tape, x: Dual2, others: &[Var]) -> Dual2 {
    let lift = |v: Var| Dual2::constant(v, true);
    match e {
        Expr::Input(0) => x,
        Expr::Input(i) => lift(others[*i]),
        Expr::Const(c) => {
            let v = t.scalar(*c);
            lift(v)
        }
        Expr::Add(a, b) => {
            let (a, b) = (build_dual(a, t, x, others), build_dual(b, t, x, others));
            a.add(t, b)
        }
        Expr::Sub(a, b) => {
            let (a, b) = (build_dual(a, t, x, others), build_dual(b, t, x, others));
            a.sub(t, b)
        }
        Expr::Mul(a, b) => {
            let (a, b) = (build_dual(a, t, x, others), build_dual(b, t, x, others));
            a.mul(t, b)
        }
        Expr::SafeDiv(a, b) => {
            let (a, b) = (build_dual(a, t, x, others), build_dual(b, t, x, others));
            let den = b.square(t).offset(t, 1.0);
            a.div(t, den)
        }
        Expr::ExpSig(a) => build_dual(a, t, x, others).sigmoid(t).exp(t),
        Expr::LogOnePlusSq(a) => build_dual(a, t, x, others)
            .square(t)
            .offset(t, 1.0)
            .ln(t)
            .unwrap(),
        Expr::Sigmoid(a) => build_dual(a, t, x, others).sigmoid(t),
        Expr::Silu(a) => build_dual(a, t, x, others).silu(t),
        Expr::Hypot(a) => build_dual(a, t, x, others)
            .square(t)
            .offset(t, 1.0)
            .sqrt(t)
            .unwrap(),
        Expr::Square(a) => build_dual(a, t, x, others).square(t),
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

