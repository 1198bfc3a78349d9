//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Artifacts of the end-to-end study (checkpoint, reports) are written to
//! `$CARGO_TARGET_TMPDIR/acceptance`.

mod common;
#[path = "../../autodiff/tests/common/mod.rs"]
mod expr;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use gibbsnet::checkpoint::encode_model;
use gibbsnet::data::{fit_scalers, sample_datasets, sample_surrogate_data, split_folds, Dataset, Kind, Split};
use gibbsnet::eval::{evaluate, evaluate_ideal, EvalReport};
use gibbsnet::graph::projected_fraction;
use gibbsnet::layers::{spectral_norm_estimate, LipschitzLinear, TRAIN_ITERATIONS};
use gibbsnet::model::ModelParams;
use gibbsnet::surrogate::{mean_absolute_error, train_surrogate, SurrogateParams, SurrogateTrainConfig};
use gibbsnet::train::{
    antoine_map, chunk_gradient, evaluate_terms, scaled_features, train_model, Example, LossConfig, TrainConfig,
    TrainOutcome, TrainingData,
};
use gibbsnet::world::{make_world, World, WorldConfig};
use gibbsnet::{Predictor, Scaler};
use gibbsnet_autodiff::functions::softplus_inverse;
use gibbsnet_autodiff::{second_directional, Tape, Tensor, Var};
use gibbsnet_thermo::mixing::stability_at;
use gibbsnet_thermo::{
    detect_gaps, ideal_mixing, ln_gamma_by_identities, refine_common_tangent, AntoineCoefficients,
    BinaryModel, ComponentId, DGmixCurve, Margules, MixtureState, NrtlParams,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Suite {
    total: usize,
    failed: Vec<&'static str>,
}

impl Suite {
    fn run(&mut self, name: &'static str, f: impl FnOnce() -> Verdict) {
        self.total += 1;
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.1} s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass {
            self.failed.push(name);
        }
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ids(comps: &[usize]) -> Vec<ComponentId> {
    comps.iter().map(|k| ComponentId::new(format!("k{k}"))).collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(floor..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut x: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let rest: f64 = x[1..].iter().sum();
    x[0] = 1.0 - rest;
    x
}

fn random_components(rng: &mut ChaCha8Rng, pool: usize, n: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..pool).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Five-point first derivative.
fn d1(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

/// Five-point second derivative.
fn d2(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(-2.0 * h) + 16.0 * f(-h) - 30.0 * f(0.0) + 16.0 * f(h) - f(2.0 * h)) / (12.0 * h * h)
}

const POOL: usize = 12;
const DIM: usize = 16;

fn random_models() -> Vec<Predictor> {
    (0..4).map(|s| common::random_predictor(100 + s, POOL, DIM, 2.5)).collect()
}

// ---------------------------------------------------------------- invariants

fn gibbs_duhem() -> Verdict {
    let models = random_models();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let p = &models[k % models.len()];
        let comps = ids(&random_components(&mut rng, POOL, n));
        let x = random_simplex(&mut rng, n, 0.05);
        let t = rng.gen_range(273.0..433.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let dir: Vec<f64> = raw.iter().map(|d| d - mean).collect();
        let ln_gamma_at = |s: f64| {
            let xs: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
            p.ln_gamma(&MixtureState::new(comps.clone(), xs, t).unwrap()).unwrap()
        };
        let residual: f64 = (0..n).map(|i| x[i] * d1(|s| ln_gamma_at(s)[i], 1e-3)).sum();
        worst = worst.max(residual.abs());
    }
    Verdict::new(worst < 1e-8, format!("max |Σ x_i d ln γ_i| = {worst:.2e} over 1000 states (tol 1e-8)"))
}

fn permutation_and_pure_limits() -> Verdict {
    let models = random_models();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut perm_g, mut perm_lg, mut pure): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..1000 {
        let n = 2 + k % 4;
        let p = &models[k % models.len()];
        let comps = random_components(&mut rng, POOL, n);
        let x = random_simplex(&mut rng, n, 0.0);
        let t = rng.gen_range(273.0..433.0);
        let a = p.predict(&MixtureState::new(ids(&comps), x.clone(), t).unwrap()).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let pc: Vec<usize> = order.iter().map(|&i| comps[i]).collect();
        let px: Vec<f64> = order.iter().map(|&i| x[i]).collect();
        let b = p.predict(&MixtureState::new(ids(&pc), px, t).unwrap()).unwrap();
        perm_g = perm_g.max((a.excess - b.excess).abs());
        for (k, &i) in order.iter().enumerate() {
            perm_lg = perm_lg.max((a.ln_gamma[i] - b.ln_gamma[k]).abs());
        }
        let i = rng.gen_range(0..n);
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let r = p.predict(&MixtureState::new(ids(&comps), e, t).unwrap()).unwrap();
        pure = pure.max(r.ln_gamma[i].abs());
    }
    Verdict::new(
        perm_g < 1e-12 && pure < 1e-10,
        format!(
            "max |Δg| under reordering {perm_g:.1e} (tol 1e-12), ln γ {perm_lg:.1e}; max |ln γ_i(x_i=1)| {pure:.1e} (tol 1e-10)"
        ),
    )
}

fn lumping() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let base = common::random_predictor(200 + seed, POOL, DIM, 2.5);
        let mut table = base.embeddings().clone();
        for k in 0..POOL {
            let v = table.vector(&ids(&[k])[0]).unwrap().to_vec();
            table.insert(format!("k{k}-copy").as_str().into(), v).unwrap();
        }
        let p = Predictor::new(base.members().next().unwrap().clone(), table).unwrap();
        for _ in 0..250 {
            let c = random_components(&mut rng, POOL, 2);
            let x1: f64 = rng.gen_range(0.0..=1.0);
            let share: f64 = rng.gen_range(0.0..=1.0);
            let t = rng.gen_range(273.0..433.0);
            let bin = p.predict(&MixtureState::new(ids(&c), vec![x1, 1.0 - x1], t).unwrap()).unwrap();
            let copy = ComponentId::new(format!("k{}-copy", c[0]));
            let comps = vec![ids(&c[..1])[0].clone(), copy, ids(&c[1..])[0].clone()];
            let x = vec![x1 * share, x1 * (1.0 - share), 1.0 - x1];
            let ter = p.predict(&MixtureState::new(comps, x, t).unwrap()).unwrap();
            worst = worst
                .max((bin.excess - ter.excess).abs())
                .max((bin.ln_gamma[0] - ter.ln_gamma[0]).abs())
                .max((bin.ln_gamma[0] - ter.ln_gamma[1]).abs())
                .max((bin.ln_gamma[1] - ter.ln_gamma[2]).abs());
        }
    }
    let mut proj: f64 = 0.0;
    let mut exact = 0usize;
    let total = 100_001;
    for i in 0..total {
        let x1 = i as f64 / (total - 1) as f64;
        let d = (projected_fraction(x1, 1.0 - x1) - x1).abs();
        exact += usize::from(d == 0.0);
        proj = proj.max(d);
    }
    Verdict::new(
        worst < 1e-8 && proj <= f64::EPSILON,
        format!(
            "duplicated ternary vs binary max diff {worst:.1e} (tol 1e-8); binary projection max diff {proj:.1e} \
             ({exact}/{total} bit-exact, tol: machine epsilon)"
        ),
    )
}

// ----------------------------------------------------------------- autodiff

fn expression_derivatives() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let e = expr::random_expr(&mut rng, 4, 3);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = x.iter().map(|&v| tape.var(v)).collect();
        let out = expr::build(&e, &mut tape, &vars);
        let g = tape.gradient(out, &vars).unwrap();
        for i in 0..3 {
            let fd = d1(
                |s| {
                    let mut y = x.clone();
                    y[i] += s;
                    expr::eval(&e, &y)
                },
                1e-3,
            );
            first = first.max(rel(g[i], fd));
        }
        let mut tape = Tape::new();
        let others: Vec<Var> = x.iter().map(|&v| tape.scalar(v)).collect();
        let jet = second_directional(&mut tape, x[0], 1.0, |t, v| Ok(expr::build_dual(&e, t, v, &others))).unwrap();
        let (_, _, dd) = jet.values(&tape);
        let fd = d2(|s| expr::eval(&e, &[x[0] + s, x[1], x[2]]), 1e-3);
        second = second.max(rel(dd, fd));
    }
    (first, second)
}

/// `ln γ_i = ∂(n g)/∂n_i` and the binary stability curvature against
/// differences of `g` alone.
fn model_composition_derivatives() -> (f64, f64) {
    let models = random_models();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for k in 0..200 {
        let n = 2 + k % 4;
        let p = &models[k % models.len()];
        let comps = ids(&random_components(&mut rng, POOL, n));
        let x = random_simplex(&mut rng, n, 0.05);
        let t = rng.gen_range(273.0..433.0);
        let lg = p.ln_gamma(&MixtureState::new(comps.clone(), x.clone(), t).unwrap()).unwrap();
        for i in 0..n {
            let total_g = |s: f64| {
                let mut moles = x.clone();
                moles[i] += s;
                let total: f64 = moles.iter().sum();
                let xs: Vec<f64> = moles.iter().map(|m| m / total).collect();
                total * p.excess(&MixtureState::new(comps.clone(), xs, t).unwrap()).unwrap()
            };
            first = first.max(rel(lg[i], d1(total_g, 1e-3)));
        }
        let b = p.binary(&comps[0], &comps[1]).unwrap();
        let x1 = rng.gen_range(0.05..0.95);
        let curvature = stability_at(&b, x1, t).unwrap();
        let mix = |s: f64| {
            let y = x1 + s;
            b.excess(y, t).unwrap() + ideal_mixing(y)
        };
        second = second.max(rel(curvature, d2(mix, 1e-3)));
    }
    (first, second)
}

/// Parameter gradients of the training loss, VLE, ACI and masked LLE paths.
fn loss_parameter_gradients(study: &Study) -> f64 {
    let data = &study.data;
    let lle: Vec<Example> = data.train.iter().filter(|e| e.kind() == Kind::Lle).step_by(97).take(12).cloned().collect();
    let others: Vec<Example> = data.train.iter().filter(|e| e.kind() != Kind::Lle).step_by(997).take(20).cloned().collect();
    let c = LossConfig::default();
    let scalers = fit_scalers(&data.train_points, &data.embeddings).unwrap();
    let mut params = None;
    'search: for bound in [1.5, 2.0, 2.5, 3.0, 4.0] {
        for seed in 0..4 {
            let mut p = ModelParams::init(data.embeddings.dimension(), seed, scalers.embedding.clone(), scalers.temperature.clone());
            p.layers.iter_mut().for_each(|l| l.c = softplus_inverse(bound));
            let f = scaled_features(&p, &data.embeddings);
            let t = evaluate_terms(&p, &study.surrogate, &f, &lle, &c, 4);
            if t.masked >= 2 && t.masked + 2 <= lle.len() {
                params = Some(p);
                break 'search;
            }
        }
    }
    let mut params = params.expect("parameters with a mixed stability mask");
    let examples: Vec<Example> = lle.iter().chain(&others).cloned().collect();
    let refs: Vec<&Example> = examples.iter().collect();
    let features = scaled_features(&params, &data.embeddings);
    let (terms, grads) = chunk_gradient(&params, &study.surrogate, &features, &refs, &c).unwrap();
    assert!(terms.vle > 0.0 && terms.aci > 0.0 && terms.lle > 0.0 && terms.gibbs > 0.0, "{terms:?}");
    let loss = |p: &ModelParams| {
        let t = evaluate_terms(p, &study.surrogate, &features, &examples, &c, 64);
        (t.weighted(&c), t.masked)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 30 {
        let k = rng.gen_range(0..params.layers.len());
        let which = rng.gen_range(0..3);
        let (analytic, slot): (f64, Box<dyn Fn(&mut ModelParams) -> &mut f64>) = match which {
            0 => {
                let i = rng.gen_range(0..params.layers[k].weight.len());
                (grads.weight[k].data()[i], Box::new(move |p: &mut ModelParams| &mut p.layers[k].weight.data_mut()[i]))
            }
            1 => {
                let i = rng.gen_range(0..params.layers[k].bias.len());
                (grads.bias[k][i], Box::new(move |p: &mut ModelParams| &mut p.layers[k].bias[i]))
            }
            _ => (grads.c[k], Box::new(move |p: &mut ModelParams| &mut p.layers[k].c)),
        };
        let base = *slot(&mut params);
        let mut masks_agree = true;
        let fd = d1(
            |s| {
                *slot(&mut params) = base + s;
                let (v, m) = loss(&params);
                *slot(&mut params) = base;
                masks_agree &= m == terms.masked;
                v
            },
            1e-4,
        );
        // the loss is not differentiable where the stability mask flips
        if !masks_agree {
            continue;
        }
        worst = worst.max((fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6));
        checked += 1;
    }
    worst
}

fn autodiff(study: &Study) -> Verdict {
    let (e1, e2) = expression_derivatives();
    let (m1, m2) = model_composition_derivatives();
    let p = loss_parameter_gradients(study);
    Verdict::new(
        e1.max(m1).max(p) < 1e-5 && e2.max(m2) < 1e-4,
        format!(
            "1000 expressions: first {e1:.1e}, second {e2:.1e}; 200 model states: ln γ {m1:.1e}, curvature {m2:.1e}; \
             30 loss parameter gradients {p:.1e} (tol 1e-5 / 1e-4)"
        ),
    )
}

// ---------------------------------------------------------------------- CEM

/// Root of `ln(x / (1 - x)) + A (1 - 2x)` on `(0, 1/2)` by bisection.
fn margules_binodal(a: f64) -> f64 {
    let f = |x: f64| (x / (1.0 - x)).ln() + a * (1.0 - 2.0 * x);
    let (mut lo, mut hi) = (1e-300, 0.5 - 1e-9 / a);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn random_nrtl(rng: &mut ChaCha8Rng, n: usize) -> NrtlParams {
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    let mut alpha = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                a[i * n + j] = rng.gen_range(-1.0..2.5);
                b[i * n + j] = rng.gen_range(-300.0..500.0);
            }
            if i < j {
                let al = rng.gen_range(0.2..0.47);
                alpha[i * n + j] = al;
                alpha[j * n + i] = al;
            }
        }
    }
    NrtlParams::new(n, a, b, alpha).unwrap()
}

fn cem() -> Verdict {
    let oracle = margules_binodal(2.5);
    let m = Margules::constant(2.5);
    let curve = DGmixCurve::from_model(&m, 300.0).unwrap();
    let gaps = detect_gaps(&curve);
    let binodal = match gaps.first() {
        Some(&g) => {
            let r = refine_common_tangent(&m, 300.0, g).unwrap();
            (r.x1_lo - oracle).abs().max((r.x1_hi - (1.0 - oracle)).abs())
        }
        None => f64::INFINITY,
    };
    let mut wrong = Vec::new();
    for a in [1.9, 2.0, 2.1, 2.5, 3.0] {
        let found = !detect_gaps(&DGmixCurve::from_model(&Margules::constant(a), 300.0).unwrap()).is_empty();
        if found != (a > 2.0) {
            wrong.push(a);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut nrtl: f64 = 0.0;
    for k in 0..1000 {
        let n = 2 + k % 4;
        let p = random_nrtl(&mut rng, n);
        let x = random_simplex(&mut rng, n, 0.01);
        let t = rng.gen_range(270.0..420.0);
        let closed = p.ln_gamma(&x, t);
        let ad = ln_gamma_by_identities(&x, |tape, xs| p.excess_jet(tape, xs, t)).unwrap();
        nrtl = closed.iter().zip(&ad).map(|(a, b)| (a - b).abs()).fold(nrtl, f64::max);
    }
    Verdict::new(
        binodal < 1e-8 && wrong.is_empty() && nrtl < 1e-10,
        format!(
            "Margules A=2.5 binodal {oracle:.6} (off by {binodal:.1e}, tol 1e-8); gap iff A > 2 wrong for {wrong:?}; \
             NRTL closed form vs autodiff {nrtl:.1e} (tol 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------- surrogate

fn surrogate_equivariance() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let mean: Vec<f64> = (0..101).map(|_| rng.gen_range(-0.5..0.0)).collect();
        let sym: Vec<f64> = mean.iter().zip(mean.iter().rev()).map(|(a, b)| 0.5 * (a + b)).collect();
        let s = SurrogateParams::init(
            seed,
            Scaler {
                mean: sym,
                std: vec![0.15; 101],
            },
        );
        let curve: Vec<f64> = (0..101).map(|_| rng.gen_range(-1.0..0.3)).collect();
        let rev: Vec<f64> = curve.iter().rev().copied().collect();
        let a = s.predict(&curve).unwrap();
        let b = s.predict(&rev).unwrap();
        worst = worst.max((a[0] - (1.0 - b[1])).abs()).max((a[1] - (1.0 - b[0])).abs());
    }
    worst
}

const SURROGATE_TRAIN: usize = 6000;
const SURROGATE_VAL: usize = 600;
const SURROGATE_TEST: usize = 1000;

fn fit_surrogate(world: &World, split: &Split, epochs: usize) -> (SurrogateParams, f64, usize) {
    let (train, _) = sample_surrogate_data(world, &split.train, SURROGATE_TRAIN, 1).unwrap();
    let (val, _) = sample_surrogate_data(world, &split.val, SURROGATE_VAL, 2).unwrap();
    let (test, _) = sample_surrogate_data(world, &split.test, SURROGATE_TEST, 3).unwrap();
    let cfg = SurrogateTrainConfig {
        epochs,
        ..SurrogateTrainConfig::default()
    };
    let (params, _) = train_surrogate(&train, &val, &cfg).unwrap();
    let mae = mean_absolute_error(&params, &test).unwrap();
    (params, mae, train.len())
}

fn surrogate(study: &Study) -> Verdict {
    let eq = surrogate_equivariance();
    let oracle = margules_binodal(2.5);
    let curve = DGmixCurve::from_model(&Margules::constant(2.5), 300.0).unwrap();
    let p = study.surrogate.predict(&curve.values).unwrap();
    let runtime = study.surrogate_time.as_secs_f64();
    Verdict::new(
        eq < 1e-12 && study.surrogate_train >= 5000 && study.surrogate_mae < 0.02 && runtime < 600.0,
        format!(
            "equivariance {eq:.1e} (tol 1e-12); {} training curves, held-out MAE {:.4} (tol 0.02), \
             fitted in {runtime:.0} s (limit 600); Margules A=2.5 -> ({:.4}, {:.4}) vs ({oracle:.4}, {:.4})",
            study.surrogate_train,
            study.surrogate_mae,
            p[0],
            p[1],
            1.0 - oracle
        ),
    )
}

// ------------------------------------------------------------ spectral norm

fn spectral() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut tracked, mut cold): (f64, f64) = (0.0, 0.0);
    let mut bound_ratio: f64 = 0.0;
    for _ in 0..100 {
        let (rows, cols) = (rng.gen_range(1..=98), rng.gen_range(1..=96));
        let gauss = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect() };
        let w = Tensor::new(rows, cols, gauss(&mut rng, rows * cols));
        let c = rng.gen_range(-2.0..3.0);
        let bias = gauss(&mut rng, rows);
        let mut layer = LipschitzLinear::from_weight(w, bias, c, &mut rng);
        // optimizer-sized drifts, each followed by the per-step iterations
        for _ in 0..20 {
            let noise = gauss(&mut rng, rows * cols);
            let scale = 1e-2 / ((rows * cols) as f64).sqrt() * layer.weight.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            layer.weight.data_mut().iter_mut().zip(noise).for_each(|(a, n)| *a += scale * n);
            layer.power_iteration(TRAIN_ITERATIONS);
        }
        let oracle = spectral_norm_estimate(&layer.weight, 50, &mut rng);
        tracked = tracked.max((layer.sigma() - oracle).abs() / oracle);
        cold = cold.max((spectral_norm_estimate(&layer.weight, TRAIN_ITERATIONS, &mut rng) - oracle).abs() / oracle);

        let allowed = layer.lipschitz_bound() * (oracle / layer.sigma()).max(1.0);
        for _ in 0..20 {
            let a = Tensor::row(gauss(&mut rng, cols));
            let b = Tensor::row(gauss(&mut rng, cols));
            let (ya, yb) = (layer.forward(&a), layer.forward(&b));
            let norm = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            bound_ratio = bound_ratio.max(norm(ya.data(), yb.data()) / (allowed * norm(a.data(), b.data())));
        }
    }
    Verdict::new(
        tracked < 0.05 && bound_ratio <= 1.0 + 1e-12,
        format!(
            "persistent-vector estimate after {TRAIN_ITERATIONS} iterations per step within {:.2}% of the 50-iteration \
             oracle (tol 5%; cold start {:.1}%); max output/input ratio {bound_ratio:.3} of the bound",
            100.0 * tracked,
            100.0 * cold
        ),
    )
}

// ----------------------------------------------------------- training runs

struct Study {
    world: World,
    dataset: Dataset,
    split: Split,
    antoine: HashMap<ComponentId, AntoineCoefficients>,
    data: TrainingData,
    surrogate: SurrogateParams,
    surrogate_mae: f64,
    surrogate_train: usize,
    surrogate_time: Duration,
}

impl Study {
    fn new(config: &WorldConfig, surrogate_epochs: usize) -> Self {
        let world = make_world(config).unwrap();
        let dataset = sample_datasets(&world).unwrap();
        let folds = split_folds(&dataset.systems(), &dataset.lle_systems(), 0).unwrap();
        let split = folds.get("0").unwrap().clone();
        let start = Instant::now();
        let (surrogate, surrogate_mae, surrogate_train) = fit_surrogate(&world, &split, surrogate_epochs);
        let surrogate_time = start.elapsed();
        let antoine = antoine_map(&world.antoine);
        let data = TrainingData::new(
            world.embedding_table().unwrap(),
            dataset.filter(&split.train_set()),
            &dataset.filter(&split.val_set()),
            &antoine,
        )
        .unwrap();
        Self {
            world,
            dataset,
            split,
            antoine,
            data,
            surrogate,
            surrogate_mae,
            surrogate_train,
            surrogate_time,
        }
    }

    fn train(&self, config: &TrainConfig) -> TrainOutcome {
        train_model(&self.data, &self.surrogate, config, |_| {}).unwrap()
    }

    fn evaluate(&self, params: &ModelParams) -> (EvalReport, EvalReport) {
        let test = self.dataset.filter(&self.split.test_set());
        let model = Predictor::new(params.clone(), self.world.embedding_table().unwrap()).unwrap();
        let r = evaluate(&model, &test, &self.antoine).unwrap();
        let ideal = evaluate_ideal(&test, &self.antoine).unwrap();
        (EvalReport::new(&r), EvalReport::new(&ideal))
    }
}

fn smoke_world() -> WorldConfig {
    WorldConfig {
        seed: 5,
        n_components: 60,
        embedding_dim: 32,
        vle_points: 1500,
        aci_points: 900,
        lle_points: 150,
        n_systems: 300,
        ..WorldConfig::default()
    }
}

fn smoke_train(seed: u64, w_lips: f64) -> TrainConfig {
    TrainConfig {
        loss: LossConfig {
            epochs: 12,
            batch_size: 128,
            w_lips,
            ..LossConfig::default()
        },
        seed,
        ..TrainConfig::default()
    }
}

fn ln_gamma_means(model: &EvalReport, ideal: &EvalReport) -> (f64, f64, f64, f64) {
    let m = model.ln_gamma.expect("ln γ test groups");
    let i = ideal.ln_gamma.expect("ln γ test groups");
    (m.mean, i.mean, m.median, i.median)
}

fn smoke_run(smoke: &Study, started: Instant) -> Verdict {
    let out = smoke.train(&smoke_train(0, 0.01));
    let e = &out.report.epochs;
    let (head, tail) = (e[0].train_loss, e[e.len() - 1].train_loss);
    let (model, ideal) = smoke.evaluate(&out.params);
    let (mm, im, _, _) = ln_gamma_means(&model, &ideal);
    let runtime = started.elapsed().as_secs_f64();
    Verdict::new(
        tail < head && mm < im && runtime < 300.0,
        format!(
            "{} train examples, {} epochs: train loss {head:.4} -> {tail:.4}, test ln γ MAE_sys mean {mm:.4} vs \
             ideal {im:.4}; {runtime:.0} s including data and surrogate (limit 300)",
            smoke.data.train.len(),
            e.len()
        ),
    )
}

fn lipschitz_trend(smoke: &Study) -> Verdict {
    let weights = [0.001, 0.01, 0.1];
    let products: Vec<f64> = weights
        .iter()
        .map(|&w| {
            (0..3)
                .map(|seed| {
                    let run = smoke.train(&smoke_train(seed, w));
                    run.report.epochs.last().unwrap().lipschitz_product
                })
                .sum::<f64>()
                / 3.0
        })
        .collect();
    let monotone = products.windows(2).all(|p| p[1] <= p[0]);
    Verdict::new(
        monotone,
        format!(
            "reduced config, mean final Lipschitz product over 3 seeds for w = {weights:?}: {:?}",
            products.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn determinism(smoke: &Study) -> Verdict {
    let pool = |n: usize| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let run = |threads: usize| {
        pool(threads).install(|| {
            let world = make_world(&smoke_world()).unwrap();
            let mut data = Vec::new();
            sample_datasets(&world).unwrap().write(&mut data).unwrap();
            let (sur, _, _) = fit_surrogate(&world, &smoke.split, 5);
            let out = smoke.train(&smoke_train(3, 0.01));
            let (report, _) = smoke.evaluate(&out.params);
            let mut json = serde_json::to_vec(&out.report).unwrap();
            report.write_json(&mut json).unwrap();
            (serde_json::to_vec(&world).unwrap(), data, sur.encode(), encode_model(&out.params), json)
        })
    };
    let a = run(1);
    let b = run(3);
    let same = [a.0 == b.0, a.1 == b.1, a.2 == b.2, a.3 == b.3, a.4 == b.4];
    Verdict::new(
        same.iter().all(|s| *s),
        format!(
            "1 vs 3 worker threads, identical bytes for world {}, dataset {}, surrogate {}, model checkpoint {}, reports {}",
            same[0], same[1], same[2], same[3], same[4]
        ),
    )
}

fn end_to_end(study: &Study) -> Verdict {
    let started = Instant::now();
    let config = TrainConfig::default();
    let out = train_model(&study.data, &study.surrogate, &config, |r| {
        if r.epoch % 10 == 0 {
            eprintln!("  epoch {:>3}: train {:.5} val {:.5} lipschitz {:.3}", r.epoch, r.train_loss, r.val_loss, r.lipschitz_product);
        }
    })
    .unwrap();
    let train_time = started.elapsed().as_secs_f64();
    let (model, ideal) = study.evaluate(&out.params);
    let (mm, im, md, id) = ln_gamma_means(&model, &ideal);
    let det = model.detection.rate;

    let dir = out_dir();
    gibbsnet::checkpoint::save_model(&out.params, dir.join("model.hcnn")).unwrap();
    std::fs::write(dir.join("train_report.json"), serde_json::to_vec_pretty(&out.report).unwrap()).unwrap();
    model.write_json(std::fs::File::create(dir.join("eval_report.json")).unwrap()).unwrap();
    ideal.write_json(std::fs::File::create(dir.join("ideal_report.json")).unwrap()).unwrap();

    let kinds: Vec<String> = [Kind::Vle, Kind::Aci, Kind::Lle]
        .iter()
        .filter_map(|k| {
            let m = model.kinds[k].mae_sys?;
            let i = ideal.kinds[k].mae_sys.map_or(f64::NAN, |s| s.median);
            Some(format!("{k:?} median {:.4}/{i:.4}", m.median))
        })
        .collect();
    Verdict::new(
        mm <= 0.5 * im && det >= 0.85,
        format!(
            "{} systems / {} points in the world, {} train examples, {} epochs in {:.0} min (best epoch {}); \
             test ln γ MAE_sys mean {mm:.4} vs ideal {im:.4} = {:.1}% (limit 50%), median {md:.4} vs {id:.4}; \
             detection {}/{} = {det:.3} (limit 0.85); [{}]",
            study.dataset.systems().len(),
            study.dataset.points.len(),
            study.data.train.len(),
            out.report.epochs.len(),
            train_time / 60.0,
            out.report.best_epoch,
            100.0 * mm / im,
            model.detection.detected,
            model.detection.points,
            kinds.join(", ")
        ),
    )
}

fn main() {
    // optional name filters, as with the default harness
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let started = Instant::now();
    let mut suite = Suite { total: 0, failed: Vec::new() };
    let structural: [(&'static str, fn() -> Verdict); 5] = [
        ("gibbs-duhem consistency", gibbs_duhem),
        ("permutation invariance and pure-component limits", permutation_and_pure_limits),
        ("lumping and binary reduction", lumping),
        ("cem correctness", cem),
        ("spectral norm", spectral),
    ];
    for (name, f) in structural {
        if wanted(name) {
            suite.run(name, f);
        }
    }

    let smoke_names = ["reduced-config smoke run", "lipschitz regularization trend", "determinism"];
    if smoke_names.iter().any(|n| wanted(n)) {
        let smoke_started = Instant::now();
        let smoke = Study::new(&smoke_world(), 60);
        if wanted(smoke_names[0]) {
            suite.run(smoke_names[0], || smoke_run(&smoke, smoke_started));
        }
        if wanted(smoke_names[1]) {
            suite.run(smoke_names[1], || lipschitz_trend(&smoke));
        }
        if wanted(smoke_names[2]) {
            suite.run(smoke_names[2], || determinism(&smoke));
        }
    }

    let full_names = ["surrogate solver", "autodiff correctness", "end-to-end synthetic study"];
    if full_names.iter().any(|n| wanted(n)) {
        let study = Study::new(&WorldConfig::default(), SurrogateTrainConfig::default().epochs);
        let checks: [fn(&Study) -> Verdict; 3] = [surrogate, autodiff, end_to_end];
        for (name, f) in full_names.into_iter().zip(checks) {
            if wanted(name) {
                suite.run(name, || f(&study));
            }
        }
    }

    println!(
        "{} of {} criteria passed in {:.1} min",
        suite.total - suite.failed.len(),
        suite.total,
        started.elapsed().as_secs_f64() / 60.0
    );
    if !suite.failed.is_empty() {
        std::process::exit(1);
    }
}
