//! Randomized agreement between reverse sweeps, forward jets and finite
//! differences evaluated on plain `f64` arithmetic.

mod common;

use common::{build, build_dual, eval, random_expr, rel};
use gibbsnet_autodiff::{second_directional, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn reverse_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let expr = random_expr(&mut rng, 4, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let out = build(&expr, &mut tape, &vars);
        assert!((tape.item(out) - eval(&expr, &x)).abs() <= 1e-12 * (1.0 + eval(&expr, &x).abs()));
        let grad = tape.gradient(out, &vars).unwrap();
        for i in 0..3 {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (eval(&expr, &up) - eval(&expr, &dn)) / (2.0 * h);
            worst = worst.max(rel(grad[i], fd));
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn jet_first_derivative_equals_reverse_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let expr = random_expr(&mut rng, 4, 2);
        let x0: f64 = rng.gen_range(-1.5..1.5);
        let other: f64 = rng.gen_range(-1.5..1.5);

        let mut tape = Tape::new();
        let vars = vec![tape.var(x0), tape.var(other)];
        let out = build(&expr, &mut tape, &vars);
        let g = tape.gradient(out, &vars[..1]).unwrap()[0];

        let mut tape = Tape::new();
        let o = tape.scalar(other);
        let d = second_directional(&mut tape, x0, 1.0, |t, x| {
            Ok(build_dual(&expr, t, x, &[o, o]))
        })
        .unwrap();
        let (_, d1, _) = d.values(&tape);
        assert!((d1 - g).abs() < 1e-12 * (1.0 + g.abs()), "{d1} vs {g} for {expr:?}");
    }
}

#[test]
fn jet_second_derivative_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let expr = random_expr(&mut rng, 4, 2);
        let x0: f64 = rng.gen_range(-1.5..1.5);
        let other: f64 = rng.gen_range(-1.5..1.5);
        let f = |x: f64| eval(&expr, &[x, other]);
        let fd2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);

        let mut tape = Tape::new();
        let o = tape.scalar(other);
        let d = second_directional(&mut tape, x0, 1.0, |t, x| {
            Ok(build_dual(&expr, t, x, &[o, o]))
        })
        .unwrap();
        let (v, _, d2) = d.values(&tape);
        assert!((v - f(x0)).abs() < 1e-12 * (1.0 + v.abs()));
        worst = worst.max(rel(d2, fd2));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

/// Jet components differentiated with respect to a parameter that enters
/// the expression (forward-over-reverse) against differences of the jets.
#[test]
fn jet_components_are_differentiable_in_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = 1e-6;
    for _ in 0..200 {
        let expr = random_expr(&mut rng, 4, 2);
        let x0: f64 = rng.gen_range(-1.0..1.0);
        let p0: f64 = rng.gen_range(-1.0..1.0);
        let jets = |p: f64| {
            let mut tape = Tape::new();
            let pv = tape.var(p);
            let d = second_directional(&mut tape, x0, 1.0, |t, x| {
                Ok(build_dual(&expr, t, x, &[pv, pv]))
            })
            .unwrap();
            let vals = d.values(&tape);
            (tape, pv, d, vals)
        };
        let (_, _, _, up) = jets(p0 + h);
        let (_, _, _, dn) = jets(p0 - h);
        let (mut tape, pv, d, _) = jets(p0);
        for (k, node) in [Some(d.jet.v), d.jet.d1, d.jet.d2].into_iter().enumerate() {
            let Some(node) = node else { continue };
            let g = tape.gradient(node, &[pv]).unwrap()[0];
            let fd = match k {
                0 => (up.0 - dn.0) / (2.0 * h),
                1 => (up.1 - dn.1) / (2.0 * h),
                _ => (up.2 - dn.2) / (2.0 * h),
            };
            assert!(rel(g, fd) < 1e-5, "component {k}: {g} vs {fd} for {expr:?}");
        }
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// Checks the gradient of `sum(w ⊙ f(inputs))` for random weights `w`
/// against central differences on every input entry.
fn check_tensor_op(
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    seed: u64,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |ins: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let shape = tape.value(out).shape();
        let w = weights.cloned().unwrap_or_else(|| Tensor::filled(shape.0, shape.1, 1.0));
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv);
        let s = tape.sum(prod);
        (tape.item(s), w)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let (r, c) = tape.value(out).shape();
    let w = random_tensor(&mut rng, r, c);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(out, wv);
    let s = tape.sum(prod);
    let grads = tape.gradient_tensors(s, &vars).unwrap();
    let h = 1e-6;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut up = inputs.clone();
            up[i].data_mut()[k] += h;
            let mut dn = inputs.clone();
            dn[i].data_mut()[k] -= h;
            let fd = (run(&up, Some(&w)).0 - run(&dn, Some(&w)).0) / (2.0 * h);
            let g = grads[i].data()[k];
            assert!(rel(g, fd) < 1e-6, "input {i} entry {k}: {g} vs {fd}");
        }
    }
}

#[test]
fn tensor_op_backward_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = random_tensor(&mut rng, 4, 3);
    let b = random_tensor(&mut rng, 5, 3);
    let c = random_tensor(&mut rng, 4, 3);
    let row = random_tensor(&mut rng, 1, 3);
    let s = random_tensor(&mut rng, 1, 1);
    let pos = a.map(|v| v.abs() + 0.5);

    check_tensor_op(vec![a.clone(), b.clone()], |t, v| t.matmul_nt(v[0], v[1]), 1);
    check_tensor_op(vec![a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]), 2);
    check_tensor_op(vec![a.clone(), s.clone()], |t, v| t.mul_scalar(v[0], v[1]), 3);
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]), 4);
    check_tensor_op(vec![a.clone(), pos.clone()], |t, v| t.div(v[0], v[1]), 5);
    check_tensor_op(vec![a.clone()], |t, v| t.slice_cols(v[0], 1, 2), 6);
    check_tensor_op(vec![a.clone()], |t, v| t.gather_rows(v[0], &[3, 0, 0, 2, 1]), 7);
    check_tensor_op(vec![a.clone()], |t, v| t.scatter_add_rows(v[0], &[1, 1, 0, 2], 3), 8);
    check_tensor_op(vec![a.clone()], |t, v| t.reshape(v[0], 2, 6), 9);
    check_tensor_op(vec![a.clone()], |t, v| t.pad_cols(v[0], 2, 1), 10);
    check_tensor_op(vec![a.clone()], |t, v| t.reverse_cols(v[0]), 11);
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.concat_cols(&[v[0], v[1], v[0]]), 12);
    check_tensor_op(vec![a.clone()], |t, v| t.row_sum(v[0]), 13);
    check_tensor_op(vec![a.clone()], |t, v| t.row_min(v[0]), 14);
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.minimum(v[0], v[1]), 15);
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.maximum(v[0], v[1]), 16);
    check_tensor_op(vec![a.map(|v| 3.0 * v), c.clone()], |t, v| t.smooth_l1(v[0], v[1], 0.35), 17);
    check_tensor_op(vec![a.clone()], |t, v| t.softplus(v[0]), 18);
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.silu_jet1(v[0], v[1]), 19);
    check_tensor_op(
        vec![a.clone(), c.clone(), b.clone().reshaped_for_test(4, 3)],
        |t, v| t.silu_jet2(v[0], v[1], Some(v[2])),
        20,
    );
    check_tensor_op(vec![a.clone(), c.clone()], |t, v| t.silu_jet2(v[0], v[1], None), 21);
    check_tensor_op(vec![a.map(|v| v + 2.0)], |t, v| t.relu(v[0]), 22);
    check_tensor_op(vec![a.clone()], |t, v| t.sigmoid(v[0]), 23);
}

trait ReshapeForTest {
    fn reshaped_for_test(self, rows: usize, cols: usize) -> Tensor;
}

impl ReshapeForTest for Tensor {
    fn reshaped_for_test(self, rows: usize, cols: usize) -> Tensor {
        let data: Vec<f64> = self.into_data().into_iter().cycle().take(rows * cols).collect();
        Tensor::new(rows, cols, data)
    }
}

mod prop {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn product_exp_gradient_is_exact(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let mut tape = Tape::new();
            let a = tape.var(x);
            let b = tape.var(y);
            let p = tape.mul(a, b);
            let e = tape.exp(a);
            let f = tape.add(p, e);
            let g = tape.gradient(f, &[a, b]).unwrap();
            prop_assert!((g[0] - (y + x.exp())).abs() <= 1e-12 * (1.0 + x.exp()));
            prop_assert_eq!(g[1], x);
        }

        #[test]
        fn silu_jet_matches_closed_form(x in -8.0f64..8.0, dir in -2.0f64..2.0) {
            use gibbsnet_autodiff::functions::{silu, silu_d1, silu_d2};
            let mut tape = Tape::new();
            let d = second_directional(&mut tape, x, dir, |t, v| Ok(v.silu(t))).unwrap();
            let (v, d1, d2) = d.values(&tape);
            prop_assert!((v - silu(x)).abs() < 1e-14);
            prop_assert!((d1 - dir * silu_d1(x)).abs() < 1e-13);
            prop_assert!((d2 - dir * dir * silu_d2(x)).abs() < 1e-13);
        }

        #[test]
        fn reset_sweeps_are_repeatable(x in -2.0f64..2.0) {
            let mut tape = Tape::new();
            let a = tape.var(x);
            let s = tape.sigmoid(a);
            let f = tape.mul(s, a);
            let g1 = tape.gradient(f, &[a]).unwrap();
            let g2 = tape.gradient(f, &[a]).unwrap();
            prop_assert_eq!(g1, g2);
        }
    }
}
