//! Data points, dataset files, system-wise folds and scaler fitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use gibbsnet_thermo::{bubble_point, detect_gaps, ComponentId, DGmixCurve, MixtureState, NrtlParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingTable;
use crate::model::Scaler;
use crate::surrogate::{label_curve, SurrogateSample};
use crate::world::World;
use crate::{Error, Result};

/// A chemical system: its components in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SystemId(Vec<ComponentId>);

impl SystemId {
    pub fn new(mut components: Vec<ComponentId>) -> Self {
        components.sort();
        components.dedup();
        Self(components)
    }

    pub fn components(&self) -> &[ComponentId] {
        &self.0
    }

    pub fn contains(&self, id: &ComponentId) -> bool {
        self.0.binary_search(id).is_ok()
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Highest accepted VLE pressure, kPa.
pub const MAX_VLE_PRESSURE: f64 = 1000.0;
/// Nominal pressure carried by synthetic LLE points, kPa.
pub const LLE_PRESSURE: f64 = 101.325;
/// One mixed-solvent system per this many binary systems.
const TERNARY_SHARE: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    #[serde(rename = "VLE")]
    Vle,
    #[serde(rename = "ACI")]
    Aci,
    #[serde(rename = "LLE")]
    Lle,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Vle => "VLE",
            Kind::Aci => "ACI",
            Kind::Lle => "LLE",
        })
    }
}

/// Measurement payload. Compositions follow the order of the system's
/// components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Payload {
    #[serde(rename = "VLE")]
    Vle { p: f64, x: Vec<f64>, y: Vec<f64> },
    #[serde(rename = "ACI")]
    Aci {
        solute: ComponentId,
        /// Solvent components in system order, without the solute.
        solvents: Vec<ComponentId>,
        solvent_x: Vec<f64>,
        ln_gamma_inf: f64,
    },
    /// Coexisting fractions of the system's first component.
    #[serde(rename = "LLE")]
    Lle { p: f64, x1_lo: f64, x1_hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub system: SystemId,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl DataPoint {
    pub fn kind(&self) -> Kind {
        match self.payload {
            Payload::Vle { .. } => Kind::Vle,
            Payload::Aci { .. } => Kind::Aci,
            Payload::Lle { .. } => Kind::Lle,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.system.components().len();
        let bad = |m: String| Err(Error::Data(format!("{}: {m}", self.system)));
        if n < 2 {
            return bad("a system needs two components".into());
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("temperature {}", self.t));
        }
        let fractions = |v: &[f64]| {
            v.len() == n && v.iter().all(|x| (0.0..=1.0).contains(x)) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        match &self.payload {
            Payload::Vle { p, x, y } => {
                if !fractions(x) || !fractions(y) {
                    return bad("invalid VLE compositions".into());
                }
                if !(*p > 0.0 && *p <= MAX_VLE_PRESSURE) {
                    return bad(format!("VLE pressure {p} kPa"));
                }
            }
            Payload::Aci {
                solute,
                solvents,
                solvent_x,
                ln_gamma_inf,
            } => {
                let mut all = solvents.clone();
                all.push(solute.clone());
                if SystemId::new(all) != self.system || solvents.len() + 1 != n || solvents.contains(solute) {
                    return bad("ACI components do not match the system".into());
                }
                if solvent_x.len() != solvents.len()
                    || solvent_x.iter().any(|v| !(0.0..=1.0).contains(v))
                    || (solvent_x.iter().sum::<f64>() - 1.0).abs() > 1e-9
                {
                    return bad("invalid solvent composition".into());
                }
                if !ln_gamma_inf.is_finite() {
                    return bad("non-finite ln γ∞".into());
                }
            }
            Payload::Lle { p, x1_lo, x1_hi } => {
                if n != 2 {
                    return bad("LLE points must be binary".into());
                }
                if !(0.0 < *x1_lo && x1_lo < x1_hi && *x1_hi < 1.0) {
                    return bad(format!("LLE split ({x1_lo}, {x1_hi})"));
                }
                if !(*p > 0.0 && *p <= 10_000.0) {
                    return bad(format!("LLE pressure {p} kPa"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub world_seed: u64,
    pub kind_counts: BTreeMap<Kind, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world_seed: u64,
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn kind_counts(&self) -> BTreeMap<Kind, usize> {
        let mut m = BTreeMap::new();
        for k in [Kind::Vle, Kind::Aci, Kind::Lle] {
            m.insert(k, 0);
        }
        for p in &self.points {
            *m.entry(p.kind()).or_default() += 1;
        }
        m
    }

    pub fn systems(&self) -> BTreeSet<SystemId> {
        self.points.iter().map(|p| p.system.clone()).collect()
    }

    /// Systems with at least one LLE point.
    pub fn lle_systems(&self) -> BTreeSet<SystemId> {
        self.points
            .iter()
            .filter(|p| p.kind() == Kind::Lle)
            .map(|p| p.system.clone())
            .collect()
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let header = DatasetHeader {
            version: DATASET_FORMAT_VERSION,
            world_seed: self.world_seed,
            kind_counts: self.kind_counts(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for p in &self.points {
            writeln!(w, "{}", serde_json::to_string(p)?)?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))?;
        let header: DatasetHeader = serde_json::from_str(&header?)
            .map_err(|e| Error::Format(format!("dataset header: {e}")))?;
        if header.version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let mut points = Vec::new();
        for (line_no, line) in lines {
            let p: DataPoint = serde_json::from_str(&line?)
                .map_err(|e| Error::Format(format!("dataset line {line_no}: {e}")))?;
            p.validate()
                .map_err(|e| Error::Format(format!("dataset line {line_no}: {e}")))?;
            points.push(p);
        }
        let ds = Self {
            world_seed: header.world_seed,
            points,
        };
        let counts = ds.kind_counts();
        for (k, n) in &header.kind_counts {
            if counts.get(k).copied().unwrap_or(0) != *n {
                return Err(Error::Format(format!(
                    "header announces {n} {k} points, file holds {}",
                    counts.get(k).copied().unwrap_or(0)
                )));
            }
        }
        Ok(ds)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn filter(&self, systems: &HashSet<&SystemId>) -> Vec<DataPoint> {
        self.points
            .iter()
            .filter(|p| systems.contains(&p.system))
            .cloned()
            .collect()
    }
}

/// Temperature: uniform over the configured range, with a small share
/// drawn from 30 K bands on either side.
pub fn sample_temperature(world: &World, rng: &mut impl Rng) -> f64 {
    let c = &world.config;
    if rng.gen::<f64>() < c.extrapolation_fraction {
        if rng.gen::<bool>() {
            rng.gen_range(c.t_min - 30.0..c.t_min)
        } else {
            rng.gen_range(c.t_max..c.t_max + 30.0)
        }
    } else {
        rng.gen_range(c.t_min..c.t_max)
    }
}

/// Whether `x1` lies inside a miscibility gap of the binary at `t`.
fn inside_gap(model: &NrtlParams, t: f64, x1: f64) -> Result<bool> {
    let curve = DGmixCurve::from_model(model, t)?;
    let gaps = detect_gaps(&curve);
    if gaps.is_empty() {
        return Ok(false);
    }
    match label_curve(model, t)? {
        Some((_, [lo, hi])) => Ok(x1 > lo && x1 < hi),
        // unrefined gap: stay clear of the grid estimate
        None => Ok(gaps.iter().any(|g| x1 >= g.x1_lo && x1 <= g.x1_hi)),
    }
}

/// CEM-labelled oracle curves at random temperatures, drawn from the given
/// binary systems. Returns the samples and the number of dropped draws.
pub fn sample_surrogate_data(
    world: &World,
    systems: &[SystemId],
    count: usize,
    seed: u64,
) -> Result<(Vec<SurrogateSample>, usize)> {
    let binaries: Vec<&SystemId> = systems.iter().filter(|s| s.components().len() == 2).collect();
    let models: Vec<NrtlParams> = binaries
        .iter()
        .map(|s| world.nrtl_for(s.components()))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut dropped = 0;
    if binaries.is_empty() {
        return Ok((out, dropped));
    }
    while out.len() < count && dropped < 1000 * count.max(1) {
        let k = rng.gen_range(0..binaries.len());
        let t = sample_temperature(world, &mut rng);
        match label_curve(&models[k], t)? {
            Some((curve, label)) => out.push(SurrogateSample {
                system: binaries[k].clone(),
                t,
                curve: curve.values,
                label,
            }),
            None => dropped += 1,
        }
    }
    Ok((out, dropped))
}

/// Distinct random binary systems of the world.
pub fn sample_systems(world: &World, count: usize, rng: &mut impl Rng) -> Result<Vec<SystemId>> {
    let n = world.len();
    let max = n * (n - 1) / 2;
    if count > max {
        return Err(Error::Config(format!("{count} systems requested, the world has {max} pairs")));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let s = SystemId::new(vec![world.components[i].id.clone(), world.components[j].id.clone()]);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Draws VLE, ACI and LLE points from the world's ground truth.
pub fn sample_datasets(world: &World) -> Result<Dataset> {
    let c = &world.config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(0x0da7a));
    let systems = sample_systems(world, c.n_systems, &mut rng)?;
    let models: Vec<NrtlParams> = systems
        .iter()
        .map(|s| world.nrtl_for(s.components()))
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(c.vle_points + c.aci_points + c.lle_points);

    // systems with a gap somewhere on a 10 K grid
    let has_gap: Vec<usize> = (0..systems.len())
        .filter(|&k| {
            let mut t = c.t_min - 30.0;
            while t <= c.t_max + 30.0 {
                if let Ok(curve) = DGmixCurve::from_model(&models[k], t) {
                    if !detect_gaps(&curve).is_empty() {
                        return true;
                    }
                }
                t += 10.0;
            }
            false
        })
        .collect();

    let mut lle = 0;
    let mut attempts = 0;
    while lle < c.lle_points && !has_gap.is_empty() && attempts < 100 * c.lle_points.max(1) {
        attempts += 1;
        let k = has_gap[rng.gen_range(0..has_gap.len())];
        let t = sample_temperature(world, &mut rng);
        if let Some((_, [lo, hi])) = label_curve(&models[k], t)? {
            points.push(DataPoint {
                system: systems[k].clone(),
                t,
                payload: Payload::Lle {
                    p: LLE_PRESSURE,
                    x1_lo: lo,
                    x1_hi: hi,
                },
            });
            lle += 1;
        }
    }

    let mut vle = 0;
    let mut attempts = 0;
    while vle < c.vle_points && attempts < 100 * c.vle_points.max(1) {
        attempts += 1;
        let k = rng.gen_range(0..systems.len());
        let t = sample_temperature(world, &mut rng);
        let x1: f64 = rng.gen_range(0.01..0.99);
        if inside_gap(&models[k], t, x1)? {
            continue;
        }
        let x = vec![x1, 1.0 - x1];
        let antoine = world.antoine_for(systems[k].components())?;
        let bp = bubble_point(|x, t| Ok(models[k].ln_gamma(x, t)), &antoine, t, &x)?;
        if !(bp.p <= MAX_VLE_PRESSURE) {
            continue;
        }
        points.push(DataPoint {
            system: systems[k].clone(),
            t,
            payload: Payload::Vle { p: bp.p, x, y: bp.y },
        });
        vle += 1;
    }

    // mixed solvents: a binary system of the set plus a foreign solute
    let n_ternary = (c.n_systems / TERNARY_SHARE).max(1);
    let mut ternaries: Vec<(usize, ComponentId)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut attempts = 0;
    while c.mixed_solvent_fraction > 0.0 && ternaries.len() < n_ternary && attempts < 100 * n_ternary {
        attempts += 1;
        let k = rng.gen_range(0..systems.len());
        let solute = world.components[rng.gen_range(0..world.len())].id.clone();
        if systems[k].contains(&solute) {
            continue;
        }
        let mut ids = systems[k].components().to_vec();
        ids.push(solute.clone());
        if seen.insert(SystemId::new(ids)) {
            ternaries.push((k, solute));
        }
    }

    let mut aci = 0;
    let mut attempts = 0;
    while aci < c.aci_points && attempts < 100 * c.aci_points.max(1) {
        attempts += 1;
        let t = sample_temperature(world, &mut rng);
        if rng.gen::<f64>() < c.mixed_solvent_fraction && !ternaries.is_empty() {
            let (k, solute) = ternaries[rng.gen_range(0..ternaries.len())].clone();
            let pair = systems[k].components();
            let xs: f64 = rng.gen_range(0.1..0.9);
            if inside_gap(&models[k], t, xs)? {
                continue;
            }
            let state = MixtureState::new(
                vec![solute.clone(), pair[0].clone(), pair[1].clone()],
                vec![0.0, xs, 1.0 - xs],
                t,
            )?;
            let lg = world.oracle_gamma(&state)?[0];
            points.push(DataPoint {
                system: SystemId::new(state.components.clone()),
                t,
                payload: Payload::Aci {
                    solute,
                    solvents: pair.to_vec(),
                    solvent_x: vec![xs, 1.0 - xs],
                    ln_gamma_inf: lg,
                },
            });
        } else {
            let k = rng.gen_range(0..systems.len());
            let pair = systems[k].components();
            let s = rng.gen_range(0..2);
            let (solute, solvent) = (pair[s].clone(), pair[1 - s].clone());
            let state = MixtureState::new(vec![solute.clone(), solvent.clone()], vec![0.0, 1.0], t)?;
            let lg = world.oracle_gamma(&state)?[0];
            points.push(DataPoint {
                system: systems[k].clone(),
                t,
                payload: Payload::Aci {
                    solute,
                    solvents: vec![solvent],
                    solvent_x: vec![1.0],
                    ln_gamma_inf: lg,
                },
            });
        }
        aci += 1;
    }
    Ok(Dataset {
        world_seed: c.seed,
        points,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<SystemId>,
    pub val: Vec<SystemId>,
    pub test: Vec<SystemId>,
}

impl Split {
    fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(s) {
                return Err(Error::Data(format!("system {s} appears in more than one set")));
            }
        }
        Ok(())
    }

    pub fn train_set(&self) -> HashSet<&SystemId> {
        self.train.iter().collect()
    }

    pub fn val_set(&self) -> HashSet<&SystemId> {
        self.val.iter().collect()
    }

    pub fn test_set(&self) -> HashSet<&SystemId> {
        self.test.iter().collect()
    }
}

/// Named splits: "0" … "9" for the folds, "full" and optionally
/// "components".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FoldFile {
    pub splits: BTreeMap<String, Split>,
}

impl FoldFile {
    pub fn get(&self, name: &str) -> Result<&Split> {
        self.splits
            .get(name)
            .ok_or_else(|| Error::Data(format!("no split named {name:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.values().try_for_each(Split::check_disjoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

pub const FOLDS: usize = 10;

/// Splits `pool` into train and validation, `val_fraction` of the systems
/// (at least one) going to validation.
fn train_val(mut pool: Vec<SystemId>, val_fraction: f64, rng: &mut impl Rng) -> (Vec<SystemId>, Vec<SystemId>) {
    pool.shuffle(rng);
    let n_val = ((pool.len() as f64 * val_fraction).round() as usize).clamp(1, pool.len().saturating_sub(1).max(1));
    let val = pool.split_off(pool.len() - n_val.min(pool.len()));
    let mut train = pool;
    train.sort();
    let mut val = val;
    val.sort();
    (train, val)
}

/// Ten stratified system-wise folds plus the 95/5 "full" split.
///
/// Systems with and without LLE data are shuffled separately and dealt
/// round-robin, so every fold receives a proportional share of each.
pub fn split_folds(systems: &BTreeSet<SystemId>, lle: &BTreeSet<SystemId>, seed: u64) -> Result<FoldFile> {
    let (mut with, mut without): (Vec<SystemId>, Vec<SystemId>) =
        systems.iter().cloned().partition(|s| lle.contains(s));
    if with.len() < FOLDS || without.len() < FOLDS {
        return Err(Error::Data(format!(
            "need at least {FOLDS} systems with and {FOLDS} without LLE data, found {} and {}",
            with.len(),
            without.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    with.shuffle(&mut rng);
    without.shuffle(&mut rng);
    let mut folds: Vec<Vec<SystemId>> = vec![Vec::new(); FOLDS];
    for (i, s) in with.into_iter().enumerate() {
        folds[i % FOLDS].push(s);
    }
    // continue the deal where the first bucket stopped
    let offset = folds.iter().map(|f| f.len()).sum::<usize>();
    for (i, s) in without.into_iter().enumerate() {
        folds[(offset + i) % FOLDS].push(s);
    }
    let mut file = FoldFile::default();
    for k in 0..FOLDS {
        let mut test = folds[k].clone();
        test.sort();
        let pool: Vec<SystemId> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        let (train, val) = train_val(pool, 0.1, &mut rng);
        file.splits.insert(k.to_string(), Split { train, val, test });
    }
    let (train, val) = train_val(systems.iter().cloned().collect(), 0.05, &mut rng);
    file.splits.insert(
        "full".into(),
        Split {
            train,
            val,
            test: Vec::new(),
        },
    );
    file.validate()?;
    Ok(file)
}

/// Holds out `fraction` of the components: every system containing one of
/// them is a test system.
pub fn component_split(systems: &BTreeSet<SystemId>, fraction: f64, seed: u64) -> Result<Split> {
    let mut comps: Vec<ComponentId> = systems
        .iter()
        .flat_map(|s| s.components().iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    comps.shuffle(&mut rng);
    let n_out = ((comps.len() as f64 * fraction).round() as usize).clamp(1, comps.len() - 1);
    let held: HashSet<&ComponentId> = comps[..n_out].iter().collect();
    let (mut test, pool): (Vec<SystemId>, Vec<SystemId>) = systems
        .iter()
        .cloned()
        .partition(|s| s.components().iter().any(|c| held.contains(c)));
    if pool.len() < 2 || test.is_empty() {
        return Err(Error::Data("component split leaves an empty set".into()));
    }
    test.sort();
    let (train, val) = train_val(pool, 0.1, &mut rng);
    Ok(Split { train, val, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scalers {
    pub embedding: Scaler,
    pub temperature: Scaler,
}

/// Embedding statistics over the distinct components of the training
/// points, temperature statistics over the points themselves.
pub fn fit_scalers(train: &[DataPoint], embeddings: &EmbeddingTable) -> Result<Scalers> {
    if train.is_empty() {
        return Err(Error::Data("cannot fit scalers on an empty training set".into()));
    }
    let comps: BTreeSet<&ComponentId> = train.iter().flat_map(|p| p.system.components()).collect();
    let vectors = comps
        .into_iter()
        .map(|c| embeddings.vector(c))
        .collect::<Result<Vec<_>>>()?;
    let temps: Vec<[f64; 1]> = train.iter().map(|p| [p.t]).collect();
    Ok(Scalers {
        embedding: Scaler::fit(vectors)?,
        temperature: Scaler::fit(temps.iter().map(|t| t.as_slice()))?,
    })
}
