//! `gibbsnet` command-line interface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gibbsnet::checkpoint::{load_model, save_model, EnsembleManifest};
use gibbsnet::data::{sample_datasets, sample_surrogate_data, split_folds, Dataset, FoldFile, Split};
use gibbsnet::eval::{evaluate, evaluate_ideal, write_records_csv, EvalReport};
use gibbsnet::parallel::configure_threads;
use gibbsnet::predict::{pxy_table, write_pxy_csv};
use gibbsnet::surrogate::{mean_absolute_error, train_surrogate, SurrogateParams, SurrogateTrainConfig};
use gibbsnet::train::{antoine_map, train_ensemble_into, train_model, TrainConfig, TrainingData};
use gibbsnet::world::{make_world, World, WorldConfig};
use gibbsnet::{EmbeddingTable, Predictor};
use gibbsnet_thermo::antoine::{read_antoine_file, write_antoine_file};
use gibbsnet_thermo::{binodal_scan, AntoineCoefficients, ComponentId, MixtureState};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<gibbsnet::Error> for CliError {
    fn from(e: gibbsnet::Error) -> Self {
        use gibbsnet::Error as E;
        match e {
            E::NonFinite { .. } | E::Autodiff(_) | E::Thermo(gibbsnet_thermo::ThermoError::Autodiff(_)) => {
                CliError::Numerical(e.to_string())
            }
            E::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<gibbsnet_thermo::ThermoError> for CliError {
    fn from(e: gibbsnet_thermo::ThermoError) -> Self {
        gibbsnet::Error::from(e).into()
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "gibbsnet", version, about = "Neural excess Gibbs energy models with hard thermodynamic constraints")]
struct Cli {
    /// Run on a single worker thread for bit-exact reproduction.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic ground-truth worlds.
    #[command(subcommand)]
    World(WorldCommand),
    /// Datasets sampled from a world.
    #[command(subcommand)]
    Data(DataCommand),
    /// The differentiable binodal solver.
    #[command(subcommand)]
    Surrogate(SurrogateCommand),
    /// Train one model on a fold.
    Train(TrainArgs),
    /// Train an ensemble on a fold into a directory with a manifest.
    TrainEnsemble(EnsembleArgs),
    /// Predictions from a trained model.
    #[command(subcommand)]
    Predict(PredictCommand),
    /// Evaluate a model on one split of a fold.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum WorldCommand {
    /// Generate a world file.
    Gen(WorldGenArgs),
}

#[derive(Args, Debug)]
struct WorldGenArgs {
    /// World configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the component embeddings.
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
    /// Also write the Antoine coefficients.
    #[arg(long)]
    antoine_out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum DataCommand {
    /// Sample VLE, ACI and LLE points from a world.
    Gen {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split the systems of a dataset into folds.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct FoldArgs {
    #[arg(long)]
    folds: PathBuf,
    /// Split name inside the fold file.
    #[arg(long, default_value = "0")]
    fold: String,
}

#[derive(Subcommand, Debug)]
enum SurrogateCommand {
    /// Train on binodal-labelled curves of the fold's systems.
    Train(SurrogateArgs),
}

#[derive(Args, Debug)]
struct SurrogateArgs {
    #[arg(long)]
    world: PathBuf,
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long, default_value_t = 6000)]
    samples: usize,
    #[arg(long, default_value_t = 600)]
    val_samples: usize,
    #[arg(long, default_value_t = 1000)]
    test_samples: usize,
    /// Training configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Where embeddings and Antoine coefficients come from.
#[derive(Args, Debug)]
struct Sources {
    /// World file providing embeddings and Antoine coefficients.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long, conflicts_with = "world")]
    embeddings: Option<PathBuf>,
    #[arg(long, conflicts_with = "world")]
    antoine: Option<PathBuf>,
}

impl Sources {
    fn check(&self) -> Result<()> {
        for p in [&self.world, &self.embeddings, &self.antoine].into_iter().flatten() {
            require_file(p)?;
        }
        Ok(())
    }

    fn world(&self) -> Result<Option<World>> {
        Ok(match &self.world {
            Some(p) => Some(World::load(p)?),
            None => None,
        })
    }

    fn embeddings(&self, world: Option<&World>) -> Result<EmbeddingTable> {
        match (world, &self.embeddings) {
            (Some(w), _) => Ok(w.embedding_table()?),
            (None, Some(p)) => Ok(EmbeddingTable::load(p)?),
            (None, None) => Err(CliError::Usage("pass --world or --embeddings".into())),
        }
    }

    fn antoine(&self, world: Option<&World>) -> Result<Vec<AntoineCoefficients>> {
        match (world, &self.antoine) {
            (Some(w), _) => Ok(w.antoine.clone()),
            (None, Some(p)) => Ok(read_antoine_file(p)?),
            (None, None) => Err(CliError::Usage("pass --world or --antoine".into())),
        }
    }
}

#[derive(Args, Debug)]
struct Overrides {
    /// Training configuration (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_lr: Option<f64>,
    #[arg(long)]
    w_lle: Option<f64>,
    #[arg(long)]
    w_gibbs: Option<f64>,
    #[arg(long)]
    w_lips: Option<f64>,
}

impl Overrides {
    fn config(&self) -> Result<TrainConfig> {
        let mut c: TrainConfig = match &self.config {
            Some(p) => read_json(p)?,
            None => TrainConfig::default(),
        };
        let l = &mut c.loss;
        set(&mut l.epochs, self.epochs);
        set(&mut l.batch_size, self.batch_size);
        set(&mut l.max_lr, self.max_lr);
        set(&mut l.w_lle, self.w_lle);
        set(&mut l.w_gibbs, self.w_gibbs);
        set(&mut l.w_lips, self.w_lips);
        set(&mut c.seed, self.seed);
        c.loss.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TrainInputs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long)]
    surrogate: PathBuf,
    #[command(flatten)]
    sources: Sources,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    inputs: TrainInputs,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    #[command(flatten)]
    inputs: TrainInputs,
    #[arg(long, default_value_t = 10)]
    members: usize,
    /// Directory for member checkpoints and `manifest.json`.
    #[arg(long)]
    out_dir: PathBuf,
}

/// A single checkpoint or an ensemble manifest.
#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, required_unless_present = "ensemble")]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "checkpoint")]
    ensemble: Option<PathBuf>,
}

impl ModelArgs {
    fn check(&self) -> Result<()> {
        for p in [&self.checkpoint, &self.ensemble].into_iter().flatten() {
            require_file(p)?;
        }
        Ok(())
    }

    fn load(&self, embeddings: EmbeddingTable) -> Result<Predictor> {
        let members = match (&self.checkpoint, &self.ensemble) {
            (Some(p), _) => vec![load_model(p)?],
            (None, Some(m)) => EnsembleManifest::load_members(m)?,
            (None, None) => return Err(CliError::Usage("pass --checkpoint or --ensemble".into())),
        };
        Ok(Predictor::ensemble(members, embeddings)?)
    }
}

#[derive(Subcommand, Debug)]
enum PredictCommand {
    /// `ln γ` and `g^E/RT` of one mixture, as JSON.
    Gamma(GammaArgs),
    /// Isothermal p-x-y curve of a binary, as CSV.
    Txy(TxyArgs),
    /// Binodal compositions of a binary over a temperature range, as CSV.
    Binodal(BinodalArgs),
}

#[derive(Args, Debug)]
struct GammaArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sources: Sources,
    /// Comma-separated component ids.
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<String>,
    /// Mole fractions; the last one may be omitted.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    x: Vec<f64>,
    /// Temperature in K.
    #[arg(long = "T")]
    t: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TxyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sources: Sources,
    /// Two comma-separated component ids.
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<String>,
    /// Temperature in K.
    #[arg(long = "T")]
    t: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BinodalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sources: Sources,
    /// Two comma-separated component ids.
    #[arg(long, value_delimiter = ',', required = true)]
    components: Vec<String>,
    /// `start:stop:step` in K, inclusive of `stop` when it falls on the grid.
    #[arg(long = "T-range")]
    t_range: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    sources: Sources,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitPart,
    /// Summary report (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Per-point errors (CSV).
    #[arg(long)]
    records: Option<PathBuf>,
    /// Report of the ideal-solution baseline on the same points (JSON).
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: no such file", p.display())))
    }
}

fn require_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(CliError::Data(format!("{}: directory does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T> {
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
}

fn write_json(p: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(p, text)?;
    Ok(())
}

/// Runs `write` against `out`, or standard output when absent.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn load_split(fold: &FoldArgs) -> Result<Split> {
    require_file(&fold.folds)?;
    Ok(FoldFile::load(&fold.folds)?.get(&fold.fold)?.clone())
}

fn pair(components: &[String]) -> Result<[ComponentId; 2]> {
    match components {
        [a, b] => Ok([a.as_str().into(), b.as_str().into()]),
        _ => Err(CliError::Usage(format!("expected two components, got {}", components.len()))),
    }
}

fn antoine_pair(list: &[AntoineCoefficients], ids: &[ComponentId; 2]) -> Result<[AntoineCoefficients; 2]> {
    let find = |id: &ComponentId| {
        list.iter()
            .find(|c| &c.component_id == id)
            .cloned()
            .ok_or_else(|| CliError::Data(format!("no Antoine coefficients for {id}")))
    };
    Ok([find(&ids[0])?, find(&ids[1])?])
}

/// Inclusive `start:stop:step` grid.
fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("--T-range expects start:stop:step, got {text:?}"));
    let parts: Vec<f64> = text
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err(CliError::Usage("--T-range has more than 100000 points".into()));
    }
    Ok((0..n).map(|k| start + k as f64 * step).collect())
}

fn full_fractions(x: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    if x.len() + 1 == n {
        x.push(1.0 - x.iter().sum::<f64>());
    }
    if x.len() != n {
        return Err(CliError::Usage(format!("{} fractions for {n} components", x.len())));
    }
    Ok(x)
}

#[derive(Serialize)]
struct GammaOutput {
    components: Vec<ComponentId>,
    x: Vec<f64>,
    #[serde(rename = "T")]
    t: f64,
    ln_gamma: Vec<f64>,
    #[serde(rename = "gE_RT")]
    ge_rt: f64,
}

fn world_gen(a: &WorldGenArgs) -> Result<()> {
    for p in [Some(&a.out), a.embeddings_out.as_ref(), a.antoine_out.as_ref()].into_iter().flatten() {
        require_parent(p)?;
    }
    let mut config: WorldConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => WorldConfig::default(),
    };
    set(&mut config.seed, a.seed);
    set(&mut config.n_components, a.components);
    set(&mut config.embedding_dim, a.embedding_dim);
    let world = make_world(&config)?;
    world.save(&a.out)?;
    if let Some(p) = &a.embeddings_out {
        world.embedding_table()?.save(p)?;
    }
    if let Some(p) = &a.antoine_out {
        write_antoine_file(p, &world.antoine)?;
    }
    println!(
        "world: {} components, embedding dimension {}, seed {} -> {}",
        world.len(),
        config.embedding_dim,
        config.seed,
        a.out.display()
    );
    Ok(())
}

fn data_command(c: &DataCommand) -> Result<()> {
    match c {
        DataCommand::Gen { world, out } => {
            require_file(world)?;
            require_parent(out)?;
            let data = sample_datasets(&World::load(world)?)?;
            data.save(out)?;
            let counts: Vec<String> = data.kind_counts().iter().map(|(k, n)| format!("{k:?} {n}")).collect();
            println!(
                "dataset: {} points in {} systems ({}) -> {}",
                data.points.len(),
                data.systems().len(),
                counts.join(", "),
                out.display()
            );
        }
        DataCommand::Split { data, seed, out } => {
            require_file(data)?;
            require_parent(out)?;
            let d = Dataset::load(data)?;
            let folds = split_folds(&d.systems(), &d.lle_systems(), *seed)?;
            folds.save(out)?;
            let s = folds.get("0")?;
            println!(
                "folds: {} systems, fold 0 has {}/{}/{} train/val/test -> {}",
                d.systems().len(),
                s.train.len(),
                s.val.len(),
                s.test.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn surrogate_train(a: &SurrogateArgs) -> Result<()> {
    require_file(&a.world)?;
    require_parent(&a.out)?;
    if let Some(p) = &a.report {
        require_parent(p)?;
    }
    let mut config: SurrogateTrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SurrogateTrainConfig::default(),
    };
    set(&mut config.epochs, a.epochs);
    set(&mut config.seed, a.seed);
    let split = load_split(&a.fold)?;
    let world = World::load(&a.world)?;
    let seed = config.seed;
    let (train, dropped) = sample_surrogate_data(&world, &split.train, a.samples, seed.wrapping_add(1))?;
    let (val, _) = sample_surrogate_data(&world, &split.val, a.val_samples, seed.wrapping_add(2))?;
    let (test, _) = sample_surrogate_data(&world, &split.test, a.test_samples, seed.wrapping_add(3))?;
    let (params, report) = train_surrogate(&train, &val, &config)?;
    params.save(&a.out)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    let test_mae = if test.is_empty() {
        "n/a".to_string()
    } else {
        format!("{:.4}", mean_absolute_error(&params, &test)?)
    };
    println!(
        "surrogate: {} curves ({dropped} single-phase draws skipped), best epoch {}, held-out MAE {test_mae} -> {}",
        train.len(),
        report.best_epoch,
        a.out.display()
    );
    Ok(())
}

struct Prepared {
    data: TrainingData,
    surrogate: SurrogateParams,
    config: TrainConfig,
}

fn prepare(inputs: &TrainInputs) -> Result<Prepared> {
    require_file(&inputs.data)?;
    require_file(&inputs.surrogate)?;
    inputs.sources.check()?;
    let config = inputs.overrides.config()?;
    let split = load_split(&inputs.fold)?;
    let world = inputs.sources.world()?;
    let embeddings = inputs.sources.embeddings(world.as_ref())?;
    let antoine = antoine_map(&inputs.sources.antoine(world.as_ref())?);
    let dataset = Dataset::load(&inputs.data)?;
    let surrogate = SurrogateParams::load(&inputs.surrogate)?;
    let data = TrainingData::new(
        embeddings,
        dataset.filter(&split.train_set()),
        &dataset.filter(&split.val_set()),
        &antoine,
    )?;
    Ok(Prepared {
        data,
        surrogate,
        config,
    })
}

fn train(a: &TrainArgs) -> Result<()> {
    require_parent(&a.out)?;
    if let Some(p) = &a.report {
        require_parent(p)?;
    }
    let p = prepare(&a.inputs)?;
    println!(
        "training on {} examples, validating on {}",
        p.data.train.len(),
        p.data.val.len()
    );
    let out = train_model(&p.data, &p.surrogate, &p.config, |r| {
        println!(
            "epoch {:>3}  train {:.5}  val {:.5}  lipschitz {:.3}",
            r.epoch, r.train_loss, r.val_loss, r.lipschitz_product
        );
    })?;
    save_model(&out.params, &a.out)?;
    if let Some(path) = &a.report {
        write_json(path, &out.report)?;
    }
    println!(
        "kept epoch {} (val {:.5}) -> {}",
        out.report.best_epoch,
        out.report.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn train_ensemble(a: &EnsembleArgs) -> Result<()> {
    if a.members == 0 {
        return Err(CliError::Usage("--members must be positive".into()));
    }
    require_parent(&a.out_dir)?;
    let mut p = prepare(&a.inputs)?;
    p.config.loss.ensemble_size = a.members;
    let manifest = train_ensemble_into(&p.data, &p.surrogate, &p.config, &a.out_dir)?;
    for m in &manifest.members {
        println!(
            "member seed {:>3}: epoch {} val {:.5} -> {}",
            m.seed, m.best_epoch, m.best_val_loss, m.checkpoint
        );
    }
    println!("manifest -> {}", a.out_dir.join(gibbsnet::train::MANIFEST_FILE).display());
    Ok(())
}

fn predictor(model: &ModelArgs, sources: &Sources) -> Result<(Predictor, Option<World>)> {
    model.check()?;
    sources.check()?;
    let world = sources.world()?;
    let p = model.load(sources.embeddings(world.as_ref())?)?;
    Ok((p, world))
}

fn predict(c: &PredictCommand) -> Result<()> {
    match c {
        PredictCommand::Gamma(a) => {
            let (model, _) = predictor(&a.model, &a.sources)?;
            let components: Vec<ComponentId> = a.components.iter().map(|s| s.as_str().into()).collect();
            let x = full_fractions(&a.x, components.len())?;
            let state = MixtureState::new(components.clone(), x.clone(), a.t).map_err(|e| CliError::Usage(e.to_string()))?;
            let p = model.predict(&state)?;
            let out = GammaOutput {
                components,
                x,
                t: a.t,
                ln_gamma: p.ln_gamma,
                ge_rt: p.excess,
            };
            let mut text = serde_json::to_string_pretty(&out)?;
            text.push('\n');
            emit(a.out.as_deref(), |w| w.write_all(text.as_bytes()))
        }
        PredictCommand::Txy(a) => {
            let ids = pair(&a.components)?;
            let (model, world) = predictor(&a.model, &a.sources)?;
            let antoine = antoine_pair(&a.sources.antoine(world.as_ref())?, &ids)?;
            let rows = pxy_table(&model, [&antoine[0], &antoine[1]], a.t)?;
            emit(a.out.as_deref(), |w| write_pxy_csv(&rows, w))
        }
        PredictCommand::Binodal(a) => {
            let ids = pair(&a.components)?;
            let temps = parse_range(&a.t_range)?;
            let (model, _) = predictor(&a.model, &a.sources)?;
            let scan = binodal_scan(&model.binary(&ids[0], &ids[1])?, &temps)?;
            emit(a.out.as_deref(), |w| scan.write_csv(w))
        }
    }
}

fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.data)?;
    for p in [Some(&a.out), a.records.as_ref(), a.baseline.as_ref()].into_iter().flatten() {
        require_parent(p)?;
    }
    let split = load_split(&a.fold)?;
    let (model, world) = predictor(&a.model, &a.sources)?;
    let antoine = antoine_map(&a.sources.antoine(world.as_ref())?);
    let dataset = Dataset::load(&a.data)?;
    let systems = match a.split {
        SplitPart::Train => split.train_set(),
        SplitPart::Val => split.val_set(),
        SplitPart::Test => split.test_set(),
    };
    let points = dataset.filter(&systems);
    let records = evaluate(&model, &points, &antoine)?;
    let report = EvalReport::new(&records);
    report.write_json(BufWriter::new(File::create(&a.out)?))?;
    if let Some(p) = &a.records {
        write_records_csv(&records, BufWriter::new(File::create(p)?))?;
    }
    let baseline = match &a.baseline {
        Some(p) => {
            let ideal = EvalReport::new(&evaluate_ideal(&points, &antoine)?);
            ideal.write_json(BufWriter::new(File::create(p)?))?;
            Some(ideal)
        }
        None => None,
    };
    println!("{} points in {} systems", points.len(), systems.len());
    for (kind, s) in &report.kinds {
        if let Some(b) = s.mae_sys {
            println!("{kind:?}: {} systems, MAE_sys median {:.4} mean {:.4}", s.systems, b.median, b.mean);
        }
    }
    if let Some(b) = report.ln_gamma {
        let ideal = baseline
            .and_then(|r| r.ln_gamma)
            .map(|i| format!(" (ideal solution: median {:.4} mean {:.4})", i.median, i.mean))
            .unwrap_or_default();
        println!("ln γ: MAE_sys median {:.4} mean {:.4}{ideal}", b.median, b.mean);
    }
    let d = &report.detection;
    if d.points > 0 {
        println!("miscibility gaps detected at {}/{} LLE points ({:.3})", d.detected, d.points, d.rate);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.deterministic)?;
    match &cli.command {
        Command::World(WorldCommand::Gen(a)) => world_gen(a),
        Command::Data(c) => data_command(c),
        Command::Surrogate(SurrogateCommand::Train(a)) => surrogate_train(a),
        Command::Train(a) => train(a),
        Command::TrainEnsemble(a) => train_ensemble(a),
        Command::Predict(c) => predict(c),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
