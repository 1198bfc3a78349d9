//! Batched construction of the excess-Gibbs network on a tape.
//!
//! A batch holds mixtures (components, mole fractions, scaled temperature)
//! and composition directions. For every mixture the graph yields
//! `g = g^E/RT`; for every direction `k` with `x(t) = x + t·dir_k` it
//! yields `dg/dt` and, when requested, `d²g/dt²`. The value path is shared
//! by all directions of a mixture.

use std::collections::HashMap;

use gibbsnet_autodiff::{Tape, Tensor, Var};

use crate::model::{ModelParams, EMBEDDING_LAYER, HIDDEN, MIXTURE_LAYERS, PROPERTY_LAYERS, SIMILARITY_SHARPNESS};

/// A layer placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: Var,
    pub bias: Var,
    pub c: Var,
    /// `W softplus(c) / (uᵀ W v)`
    pub scaled: Var,
}

#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub layers: Vec<LayerNodes>,
}

/// Records the parameters. With `trainable`, weights, biases and bounds are
/// differentiable leaves; the singular vectors are always constants.
/// Binary-subsystem fraction `(1 + x̃_a - x̃_b) / 2` of a lumped pair.
pub fn projected_fraction(lumped_a: f64, lumped_b: f64) -> f64 {
    0.5 * (lumped_a - lumped_b) + 0.5
}

pub fn place_params(tape: &mut Tape, params: &ModelParams, trainable: bool) -> ParamNodes {
    let layers = params
        .layers
        .iter()
        .map(|l| {
            let leaf = |t: &mut Tape, v: Tensor| if trainable { t.param(v) } else { t.constant(v) };
            let weight = leaf(tape, l.weight.clone());
            let bias = leaf(tape, Tensor::row(l.bias.clone()));
            let c = leaf(tape, Tensor::scalar(l.c));
            let mut outer = Vec::with_capacity(l.u.len() * l.v.len());
            for &a in &l.u {
                outer.extend(l.v.iter().map(|&b| a * b));
            }
            let uv = tape.constant(Tensor::new(l.u.len(), l.v.len(), outer));
            let prod = tape.mul(weight, uv);
            let sigma = tape.sum(prod);
            let bound = tape.softplus(c);
            let factor = tape.div(bound, sigma);
            let scaled = tape.mul_scalar(weight, factor);
            LayerNodes {
                weight,
                bias,
                c,
                scaled,
            }
        })
        .collect();
    ParamNodes { layers }
}

#[derive(Debug, Clone)]
pub struct MixtureRow {
    /// Rows of [`Batch::features`].
    pub comps: Vec<usize>,
    pub x: Vec<f64>,
    pub t_scaled: f64,
}

#[derive(Debug, Clone)]
pub struct DirectionRow {
    pub mixture: usize,
    /// Composition direction, one entry per mixture component.
    pub dir: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch {
    /// Scaled embeddings of the components used by the batch.
    pub features: Vec<Vec<f64>>,
    pub mixtures: Vec<MixtureRow>,
    pub directions: Vec<DirectionRow>,
    /// Track second directional derivatives.
    pub second_order: bool,
}

/// Graph outputs.
#[derive(Debug, Clone, Copy)]
pub struct Jets {
    /// `M × 1` excess Gibbs energies.
    pub g: Var,
    /// `K × 1` first directional derivatives.
    pub d1: Option<Var>,
    /// `K × 1` second directional derivatives.
    pub d2: Option<Var>,
    /// Refined embeddings, one row per feature row.
    pub theta: Var,
    /// Similarity of each pair, in pair order.
    pub similarity: Var,
}

struct Pair {
    mixture: usize,
    a: usize,
    b: usize,
}

/// Value, first and second derivative nodes of a batched quantity. The
/// derivative nodes have one row per direction-pair row.
struct Jet {
    v: Var,
    d1: Option<Var>,
    d2: Option<Var>,
}

fn silu_jet(tape: &mut Tape, h: Jet, dp_to_p: &[usize], second: bool) -> Jet {
    let v = tape.silu(h.v);
    if h.d1.is_none() && h.d2.is_none() {
        return Jet { v, d1: None, d2: None };
    }
    let hv = tape.gather_rows(h.v, dp_to_p);
    let d1 = h.d1.map(|d| tape.silu_jet1(hv, d));
    let d2 = if second {
        match (h.d1, h.d2) {
            (Some(a), b) => Some(tape.silu_jet2(hv, a, b)),
            (None, Some(b)) => Some(tape.silu_jet1(hv, b)),
            (None, None) => None,
        }
    } else {
        None
    };
    Jet { v, d1, d2 }
}

fn linear_jet(tape: &mut Tape, x: Jet, layer: &LayerNodes) -> Jet {
    let mv = tape.matmul_nt(x.v, layer.scaled);
    Jet {
        v: tape.add_row(mv, layer.bias),
        d1: x.d1.map(|d| tape.matmul_nt(d, layer.scaled)),
        d2: x.d2.map(|d| tape.matmul_nt(d, layer.scaled)),
    }
}

/// Builds the network for `batch` on `tape`.
pub fn build(tape: &mut Tape, params: &ParamNodes, batch: &Batch) -> Jets {
    let n_feat = batch.features.len();
    let dim = batch.features.first().map_or(0, |f| f.len());
    let feats = tape.constant(Tensor::new(
        n_feat,
        dim,
        batch.features.iter().flatten().copied().collect(),
    ));

    // refined embeddings
    let emb = &params.layers[EMBEDDING_LAYER];
    let h = tape.matmul_nt(feats, emb.scaled);
    let h = tape.add_row(h, emb.bias);
    let theta = tape.silu(h);

    // mixture layer one split into embedding, fraction and temperature columns
    let m1 = &params.layers[MIXTURE_LAYERS[0]];
    let w_theta = tape.slice_cols(m1.scaled, 0, HIDDEN);
    let w_x = tape.slice_cols(m1.scaled, HIDDEN, 1);
    let w_t = tape.slice_cols(m1.scaled, HIDDEN + 1, 1);
    let theta_w = tape.matmul_nt(theta, w_theta);

    // pairs
    let mut pairs = Vec::new();
    let mut site_offset = Vec::with_capacity(batch.mixtures.len());
    let mut n_sites = 0;
    for (m, mix) in batch.mixtures.iter().enumerate() {
        site_offset.push(n_sites);
        n_sites += mix.comps.len();
        for a in 0..mix.comps.len() {
            for b in a + 1..mix.comps.len() {
                pairs.push(Pair { mixture: m, a, b });
            }
        }
    }
    let n_pairs = pairs.len();
    let feat_a: Vec<usize> = pairs.iter().map(|p| batch.mixtures[p.mixture].comps[p.a]).collect();
    let feat_b: Vec<usize> = pairs.iter().map(|p| batch.mixtures[p.mixture].comps[p.b]).collect();

    let ta = tape.gather_rows(theta, &feat_a);
    let tb = tape.gather_rows(theta, &feat_b);
    let diff = tape.sub(ta, tb);
    let sq = tape.square(diff);
    let dist = tape.row_sum(sq);
    let scaled_dist = tape.scale(dist, -SIMILARITY_SHARPNESS);
    let similarity = tape.exp(scaled_dist);

    // lumped fractions x̃_i = x_i + Σ_{j≠i} x_j R_ij, one row per site
    let lumped = {
        let mut base = Vec::with_capacity(n_sites);
        for mix in &batch.mixtures {
            base.extend_from_slice(&mix.x);
        }
        let base = tape.constant(Tensor::column(base));
        let mut src = Vec::with_capacity(2 * n_pairs);
        let mut coef = Vec::with_capacity(2 * n_pairs);
        let mut dst = Vec::with_capacity(2 * n_pairs);
        for (p, pr) in pairs.iter().enumerate() {
            let x = &batch.mixtures[pr.mixture].x;
            let off = site_offset[pr.mixture];
            src.push(p);
            coef.push(x[pr.b]);
            dst.push(off + pr.a);
            src.push(p);
            coef.push(x[pr.a]);
            dst.push(off + pr.b);
        }
        let r = tape.gather_rows(similarity, &src);
        let c = tape.constant(Tensor::column(coef));
        let contrib = tape.mul(r, c);
        let s = tape.scatter_add_rows(contrib, &dst, n_sites);
        tape.add(base, s)
    };
    let site_a: Vec<usize> = pairs.iter().map(|p| site_offset[p.mixture] + p.a).collect();
    let site_b: Vec<usize> = pairs.iter().map(|p| site_offset[p.mixture] + p.b).collect();
    let la = tape.gather_rows(lumped, &site_a);
    let lb = tape.gather_rows(lumped, &site_b);
    // same operation order as `projected_fraction`
    let ld = tape.sub(la, lb);
    let half = tape.scale(ld, 0.5);
    let proj_a = tape.offset(half, 0.5);
    let neg = tape.neg(proj_a);
    let proj_b = tape.offset(neg, 1.0);

    // direction-pair rows
    let mut pairs_of_mixture: Vec<Vec<usize>> = vec![Vec::new(); batch.mixtures.len()];
    for (p, pr) in pairs.iter().enumerate() {
        pairs_of_mixture[pr.mixture].push(p);
    }
    let mut dp_to_p = Vec::new();
    let mut dp_to_k = Vec::new();
    for (k, d) in batch.directions.iter().enumerate() {
        for &p in &pairs_of_mixture[d.mixture] {
            dp_to_p.push(p);
            dp_to_k.push(k);
        }
    }
    let has_dirs = !dp_to_p.is_empty();
    let second = batch.second_order && has_dirs;

    // projected-fraction derivative X'_a = (x̃'_a - x̃'_b) / 2 with
    // x̃'_i = dir_i + Σ_{j≠i} dir_j R_ij
    let proj_d1 = if has_dirs {
        let mut base = Vec::with_capacity(dp_to_p.len());
        let mut src = Vec::new();
        let mut coef = Vec::new();
        let mut dst = Vec::new();
        for (row, (&p, &k)) in dp_to_p.iter().zip(&dp_to_k).enumerate() {
            let pr = &pairs[p];
            let dir = &batch.directions[k].dir;
            base.push(0.5 * (dir[pr.a] - dir[pr.b]));
            // pairs of the same mixture that touch a or b
            for &q in &pairs_of_mixture[pr.mixture] {
                let qr = &pairs[q];
                let other = |i: usize| -> Option<usize> {
                    if qr.a == i {
                        Some(qr.b)
                    } else if qr.b == i {
                        Some(qr.a)
                    } else {
                        None
                    }
                };
                let mut w = 0.0;
                if let Some(j) = other(pr.a) {
                    w += 0.5 * dir[j];
                }
                if let Some(j) = other(pr.b) {
                    w -= 0.5 * dir[j];
                }
                if w != 0.0 {
                    src.push(q);
                    coef.push(w);
                    dst.push(row);
                }
            }
        }
        let base = tape.constant(Tensor::column(base));
        if src.is_empty() {
            Some(base)
        } else {
            let r = tape.gather_rows(similarity, &src);
            let c = tape.constant(Tensor::column(coef));
            let contrib = tape.mul(r, c);
            let s = tape.scatter_add_rows(contrib, &dst, dp_to_p.len());
            Some(tape.add(base, s))
        }
    } else {
        None
    };

    let t_col = tape.constant(Tensor::column(
        pairs.iter().map(|p| batch.mixtures[p.mixture].t_scaled).collect(),
    ));
    let t_term = tape.matmul_nt(t_col, w_t);

    // mixture network applied to each side of each pair
    let side = |tape: &mut Tape, feat: &[usize], proj: Var, sign: f64| -> Jet {
        let tw = tape.gather_rows(theta_w, feat);
        let xw = tape.matmul_nt(proj, w_x);
        let s = tape.add(tw, xw);
        let s = tape.add(s, t_term);
        let v = tape.add_row(s, m1.bias);
        let d1 = proj_d1.map(|d| {
            let d = if sign < 0.0 { tape.neg(d) } else { d };
            tape.matmul_nt(d, w_x)
        });
        // affine in t: no second derivative before the activation
        let act = silu_jet(tape, Jet { v, d1, d2: None }, &dp_to_p, second);
        let h2 = linear_jet(tape, act, &params.layers[MIXTURE_LAYERS[1]]);
        silu_jet(tape, h2, &dp_to_p, second)
    };
    let alpha_a = side(tape, &feat_a, proj_a, 1.0);
    let alpha_b = side(tape, &feat_b, proj_b, -1.0);

    let sum = Jet {
        v: tape.add(alpha_a.v, alpha_b.v),
        d1: alpha_a.d1.zip(alpha_b.d1).map(|(a, b)| tape.add(a, b)),
        d2: alpha_a.d2.zip(alpha_b.d2).map(|(a, b)| tape.add(a, b)),
    };
    let p1 = linear_jet(tape, sum, &params.layers[PROPERTY_LAYERS[0]]);
    let p1 = silu_jet(tape, p1, &dp_to_p, second);
    let phi = linear_jet(tape, p1, &params.layers[PROPERTY_LAYERS[1]]);

    // pure-component consistency
    let neg_r = tape.neg(similarity);
    let one_minus_r = tape.offset(neg_r, 1.0);
    let q_v = tape.mul(phi.v, one_minus_r);
    let omr_dp = if has_dirs {
        Some(tape.gather_rows(one_minus_r, &dp_to_p))
    } else {
        None
    };
    let q_d1 = phi.d1.map(|d| tape.mul(d, omr_dp.unwrap()));
    let q_d2 = phi.d2.map(|d| tape.mul(d, omr_dp.unwrap()));

    // g = Σ_pairs x_a x_b q
    let xx: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let x = &batch.mixtures[p.mixture].x;
            x[p.a] * x[p.b]
        })
        .collect();
    let p_to_m: Vec<usize> = pairs.iter().map(|p| p.mixture).collect();
    let xx_node = tape.constant(Tensor::column(xx.clone()));
    let terms = tape.mul(q_v, xx_node);
    let g = tape.scatter_add_rows(terms, &p_to_m, batch.mixtures.len());

    let mut c0 = Vec::with_capacity(dp_to_p.len());
    let mut c1 = Vec::with_capacity(dp_to_p.len());
    let mut c2 = Vec::with_capacity(dp_to_p.len());
    for (&p, &k) in dp_to_p.iter().zip(&dp_to_k) {
        let pr = &pairs[p];
        let x = &batch.mixtures[pr.mixture].x;
        let dir = &batch.directions[k].dir;
        c0.push(xx[p]);
        c1.push(dir[pr.a] * x[pr.b] + x[pr.a] * dir[pr.b]);
        c2.push(2.0 * dir[pr.a] * dir[pr.b]);
    }
    let n_dirs = batch.directions.len();
    let (d1, d2) = if has_dirs {
        let qv_dp = tape.gather_rows(q_v, &dp_to_p);
        let c0n = tape.constant(Tensor::column(c0));
        let c1n = tape.constant(Tensor::column(c1));
        let a = tape.mul(qv_dp, c1n);
        let b = tape.mul(q_d1.unwrap(), c0n);
        let s = tape.add(a, b);
        let d1 = tape.scatter_add_rows(s, &dp_to_k, n_dirs);
        let d2 = if second {
            let c2n = tape.constant(Tensor::column(c2));
            let a = tape.mul(qv_dp, c2n);
            let b = tape.mul(q_d1.unwrap(), c1n);
            let b = tape.scale(b, 2.0);
            let c = tape.mul(q_d2.unwrap(), c0n);
            let s = tape.add(a, b);
            let s = tape.add(s, c);
            Some(tape.scatter_add_rows(s, &dp_to_k, n_dirs))
        } else {
            None
        };
        (Some(d1), d2)
    } else if n_dirs > 0 {
        // directions on mixtures without pairs cannot occur (N ≥ 2)
        unreachable!("directions without pairs")
    } else {
        (None, None)
    };

    Jets {
        g,
        d1,
        d2,
        theta,
        similarity,
    }
}

/// Handle to the log activity coefficients of one mixture.
#[derive(Debug, Clone)]
pub struct LnGammaHandle {
    pub mixture: usize,
    pub first_direction: usize,
    pub x: Vec<f64>,
}

/// Handle to one stability evaluation of a binary mixture.
#[derive(Debug, Clone, Copy)]
pub struct StabilityHandle {
    pub mixture: usize,
    pub direction: usize,
    pub x1: f64,
}

/// Collects requests into a [`Batch`], deduplicating components.
pub struct Planner<'a> {
    table: &'a [Vec<f64>],
    feature_of: HashMap<usize, usize>,
    pub batch: Batch,
}

impl<'a> Planner<'a> {
    /// `table` holds scaled embeddings indexed by global component row.
    pub fn new(table: &'a [Vec<f64>], second_order: bool) -> Self {
        Self {
            table,
            feature_of: HashMap::new(),
            batch: Batch {
                second_order,
                ..Batch::default()
            },
        }
    }

    fn feature(&mut self, global: usize) -> usize {
        if let Some(&f) = self.feature_of.get(&global) {
            return f;
        }
        let f = self.batch.features.len();
        self.batch.features.push(self.table[global].clone());
        self.feature_of.insert(global, f);
        f
    }

    fn mixture(&mut self, comps: &[usize], x: &[f64], t_scaled: f64) -> usize {
        let comps = comps.iter().map(|&c| self.feature(c)).collect();
        self.batch.mixtures.push(MixtureRow {
            comps,
            x: x.to_vec(),
            t_scaled,
        });
        self.batch.mixtures.len() - 1
    }

    /// `g^E/RT` only.
    pub fn excess(&mut self, comps: &[usize], x: &[f64], t_scaled: f64) -> usize {
        self.mixture(comps, x, t_scaled)
    }

    /// Directions `e_j - e_N` for `j < N`.
    pub fn ln_gamma(&mut self, comps: &[usize], x: &[f64], t_scaled: f64) -> LnGammaHandle {
        let m = self.mixture(comps, x, t_scaled);
        let n = comps.len();
        let first = self.batch.directions.len();
        for j in 0..n - 1 {
            let mut dir = vec![0.0; n];
            dir[j] = 1.0;
            dir[n - 1] = -1.0;
            self.batch.directions.push(DirectionRow { mixture: m, dir });
        }
        LnGammaHandle {
            mixture: m,
            first_direction: first,
            x: x.to_vec(),
        }
    }

    /// Binary mixture along `e_1 - e_2`.
    pub fn stability(&mut self, comps: [usize; 2], x1: f64, t_scaled: f64) -> StabilityHandle {
        let m = self.mixture(&comps, &[x1, 1.0 - x1], t_scaled);
        self.batch.directions.push(DirectionRow {
            mixture: m,
            dir: vec![1.0, -1.0],
        });
        StabilityHandle {
            mixture: m,
            direction: self.batch.directions.len() - 1,
            x1,
        }
    }
}

/// `ln γ_i = g + D_i g - Σ_{j<N} x_j D_j g`, stacked over handles in order.
pub fn ln_gamma_nodes(tape: &mut Tape, jets: &Jets, handles: &[LnGammaHandle]) -> Var {
    let mut g_rows = Vec::new();
    let mut src = Vec::new();
    let mut coef = Vec::new();
    let mut dst = Vec::new();
    let mut row = 0;
    for h in handles {
        let n = h.x.len();
        for i in 0..n {
            g_rows.push(h.mixture);
            for j in 0..n - 1 {
                let c = if i == j { 1.0 } else { 0.0 } - h.x[j];
                if c != 0.0 {
                    src.push(h.first_direction + j);
                    coef.push(c);
                    dst.push(row);
                }
            }
            row += 1;
        }
    }
    let g = tape.gather_rows(jets.g, &g_rows);
    if src.is_empty() {
        return g;
    }
    let d = tape.gather_rows(jets.d1.expect("ln γ needs directions"), &src);
    let c = tape.constant(Tensor::column(coef));
    let t = tape.mul(d, c);
    let s = tape.scatter_add_rows(t, &dst, row);
    tape.add(g, s)
}

/// `g^E/RT` and the stability criterion `d²g/dx1² + 1/(x1 x2)` per handle.
pub fn stability_nodes(tape: &mut Tape, jets: &Jets, handles: &[StabilityHandle]) -> (Var, Var) {
    let g_rows: Vec<usize> = handles.iter().map(|h| h.mixture).collect();
    let k_rows: Vec<usize> = handles.iter().map(|h| h.direction).collect();
    let g = tape.gather_rows(jets.g, &g_rows);
    let d2 = tape.gather_rows(jets.d2.expect("stability needs second-order jets"), &k_rows);
    let ideal = tape.constant(Tensor::column(
        handles.iter().map(|h| 1.0 / (h.x1 * (1.0 - h.x1))).collect(),
    ));
    let s = tape.add(d2, ideal);
    (g, s)
}
