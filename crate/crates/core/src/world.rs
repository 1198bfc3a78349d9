//! Synthetic ground truth: latent component vectors, multicomponent NRTL
//! interactions derived from them, noisy observed embeddings and vapor
//! pressures.

use std::path::Path;

use gibbsnet_thermo::{
    AntoineCoefficients, ComponentId, MixtureState, NrtlParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::{Error, Result};

pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_components: usize,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub noise_std: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Scale of the temperature-independent part of `τ`.
    pub a_scale: f64,
    /// Scale of `b` in `τ = a + b/T`, in kelvin.
    pub b_scale: f64,
    /// Saturation of `|a|` and `|b/b_scale|`.
    pub tau_cap: f64,
    pub vle_points: usize,
    pub aci_points: usize,
    pub lle_points: usize,
    pub n_systems: usize,
    /// Share of ACI points with a binary solvent.
    pub mixed_solvent_fraction: f64,
    /// Share of temperatures drawn outside `[t_min, t_max]`.
    pub extrapolation_fraction: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_components: 200,
            latent_dim: 6,
            embedding_dim: 384,
            noise_std: 0.02,
            t_min: 273.0,
            t_max: 433.0,
            a_scale: 0.05,
            b_scale: 150.0,
            tau_cap: 4.0,
            vle_points: 20_000,
            aci_points: 12_000,
            lle_points: 2_000,
            n_systems: 1_500,
            mixed_solvent_fraction: 0.1,
            extrapolation_fraction: 0.05,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.n_components < 2 {
            return bad("need at least two components");
        }
        if self.latent_dim == 0 || self.embedding_dim == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative");
        }
        if !(self.t_min > 0.0 && self.t_max > self.t_min) {
            return bad("need 0 < t_min < t_max");
        }
        if !(0.0..=1.0).contains(&self.mixed_solvent_fraction)
            || !(0.0..=1.0).contains(&self.extrapolation_fraction)
        {
            return bad("fractions must lie in [0, 1]");
        }
        if !(self.tau_cap > 0.0 && self.b_scale > 0.0 && self.a_scale >= 0.0) {
            return bad("interaction scales must be positive");
        }
        Ok(())
    }
}

/// `dᵀ Q d + w·d + s (h·z_i)(h·z_j)` with `d = z_i - z_j`.
struct PairForm {
    q: Vec<f64>,
    w: Vec<f64>,
    h: Vec<f64>,
    s: f64,
}

impl PairForm {
    fn sample(rng: &mut ChaCha8Rng, dim: usize, s: f64) -> Self {
        let g: Vec<f64> = (0..dim * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // Q = Gᵀ G / dim² is positive semi-definite
        let mut q = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                q[r * dim + c] = (0..dim).map(|k| g[k * dim + r] * g[k * dim + c]).sum::<f64>()
                    / (dim * dim) as f64;
            }
        }
        let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) / (dim as f64).sqrt()).collect()
        };
        let w = unit(rng);
        let h = unit(rng);
        Self { q, w, h, s }
    }

    fn eval(&self, zi: &[f64], zj: &[f64]) -> f64 {
        let n = zi.len();
        let d: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        for r in 0..n {
            for c in 0..n {
                quad += d[r] * self.q[r * n + c] * d[c];
            }
        }
        let lin: f64 = self.w.iter().zip(&d).map(|(a, b)| a * b).sum();
        let hi: f64 = self.h.iter().zip(zi).map(|(a, b)| a * b).sum();
        let hj: f64 = self.h.iter().zip(zj).map(|(a, b)| a * b).sum();
        quad + lin + self.s * hi * hj
    }
}

/// One component's record in the world file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: ComponentId,
    pub latent: Vec<f64>,
    pub boiling_point: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub version: u32,
    pub config: WorldConfig,
    pub components: Vec<ComponentRecord>,
    /// Interactions among all components, in component order.
    pub nrtl: NrtlParams,
    pub antoine: Vec<AntoineCoefficients>,
    /// Observed embeddings, in component order.
    pub embeddings: Vec<Vec<f64>>,
}

pub fn component_name(i: usize) -> ComponentId {
    ComponentId::new(format!("c{i:03}"))
}

fn saturate(x: f64, cap: f64) -> f64 {
    cap * (x / cap).tanh()
}

/// Builds the world for `config`; the same config always yields the same
/// world.
pub fn make_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_components;
    let l = config.latent_dim;
    let latents: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.sample(StandardNormal)).collect())
        .collect();

    let form_a = PairForm::sample(&mut rng, l, 0.3);
    let form_b = PairForm::sample(&mut rng, l, -0.3);
    let alpha_dir: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * n];
    let mut alpha = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (zi, zj) = (&latents[i], &latents[j]);
            a[i * n + j] = config.a_scale * saturate(form_a.eval(zi, zj), config.tau_cap);
            b[i * n + j] = config.b_scale * saturate(form_b.eval(zi, zj), config.tau_cap);
            let mid: f64 = alpha_dir
                .iter()
                .zip(zi.iter().zip(zj))
                .map(|(w, (p, q))| w * (p + q))
                .sum::<f64>()
                / (2.0 * l as f64).sqrt();
            alpha[i * n + j] = (0.3 + 0.06 * mid).clamp(0.2, 0.47);
        }
    }
    let nrtl = NrtlParams::new(n, a, b, alpha)?;

    let projection: Vec<f64> = (0..config.embedding_dim * l)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (l as f64).sqrt())
        .collect();
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let embeddings: Vec<Vec<f64>> = latents
        .iter()
        .map(|z| {
            (0..config.embedding_dim)
                .map(|r| {
                    let clean: f64 = projection[r * l..(r + 1) * l].iter().zip(z).map(|(p, v)| p * v).sum();
                    if config.noise_std > 0.0 {
                        clean + rng.sample(noise)
                    } else {
                        clean
                    }
                })
                .collect()
        })
        .collect();

    let mut components = Vec::with_capacity(n);
    let mut antoine = Vec::with_capacity(n);
    for (i, z) in latents.into_iter().enumerate() {
        let id = component_name(i);
        let tb: f64 = rng.gen_range(300.0..480.0);
        let bb: f64 = rng.gen_range(1200.0..2000.0);
        let cc: f64 = rng.gen_range(-80.0..-30.0);
        antoine.push(AntoineCoefficients {
            component_id: id.clone(),
            a: 101.325f64.log10() + bb / (cc + tb),
            b: bb,
            c: cc,
            t_min: config.t_min - 30.0,
            t_max: config.t_max + 30.0,
        });
        components.push(ComponentRecord {
            id,
            latent: z,
            boiling_point: tb,
        });
    }
    Ok(World {
        version: WORLD_FORMAT_VERSION,
        config: config.clone(),
        components,
        nrtl,
        antoine,
        embeddings,
    })
}

impl World {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ComponentId> {
        self.components.iter().map(|c| &c.id)
    }

    pub fn index_of(&self, id: &ComponentId) -> Result<usize> {
        if let Some(i) = id.as_str().strip_prefix('c').and_then(|s| s.parse::<usize>().ok()) {
            if self.components.get(i).is_some_and(|c| &c.id == id) {
                return Ok(i);
            }
        }
        self.components
            .iter()
            .position(|c| &c.id == id)
            .ok_or_else(|| Error::UnknownComponent(id.clone()))
    }

    /// Ground-truth interactions restricted to `ids`, in that order.
    pub fn nrtl_for(&self, ids: &[ComponentId]) -> Result<NrtlParams> {
        let idx = ids.iter().map(|i| self.index_of(i)).collect::<Result<Vec<_>>>()?;
        Ok(self.nrtl.subset(&idx))
    }

    pub fn oracle_gamma(&self, state: &MixtureState) -> Result<Vec<f64>> {
        state.validate()?;
        Ok(self.nrtl_for(&state.components)?.ln_gamma(&state.x, state.t))
    }

    pub fn oracle_excess(&self, state: &MixtureState) -> Result<f64> {
        state.validate()?;
        Ok(self.nrtl_for(&state.components)?.excess(&state.x, state.t))
    }

    pub fn antoine_for(&self, ids: &[ComponentId]) -> Result<Vec<AntoineCoefficients>> {
        ids.iter()
            .map(|i| Ok(self.antoine[self.index_of(i)?].clone()))
            .collect()
    }

    pub fn embedding_table(&self) -> Result<EmbeddingTable> {
        let mut t = EmbeddingTable::new(self.config.embedding_dim);
        for (c, e) in self.components.iter().zip(&self.embeddings) {
            t.insert(c.id.clone(), e.clone())?;
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// Decodes and validates a serialized world.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let w: World = serde_json::from_slice(bytes)?;
        if w.version != WORLD_FORMAT_VERSION {
            return Err(Error::Version {
                found: w.version,
                expected: WORLD_FORMAT_VERSION,
            });
        }
        w.config.validate()?;
        w.nrtl.validate()?;
        let n = w.components.len();
        if w.nrtl.n != n || w.antoine.len() != n || w.embeddings.len() != n {
            return Err(Error::Format("world tables disagree on the component count".into()));
        }
        Ok(w)
    }
}
