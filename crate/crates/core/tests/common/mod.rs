#![allow(dead_code)]

use std::sync::OnceLock;

use gibbsnet::data::{sample_datasets, sample_surrogate_data, split_folds, Dataset, FoldFile};
use gibbsnet::surrogate::{train_surrogate, SurrogateParams, SurrogateTrainConfig};
use gibbsnet::train::{antoine_map, TrainingData};
use gibbsnet::world::{make_world, World, WorldConfig};

pub fn small_config() -> WorldConfig {
    WorldConfig {
        seed: 11,
        n_components: 40,
        embedding_dim: 16,
        vle_points: 400,
        aci_points: 250,
        lle_points: 120,
        n_systems: 200,
        ..WorldConfig::default()
    }
}

pub struct Fixture {
    pub world: World,
    pub data: Dataset,
    pub folds: FoldFile,
    pub surrogate: SurrogateParams,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let world = make_world(&small_config()).unwrap();
        let data = sample_datasets(&world).unwrap();
        let folds = split_folds(&data.systems(), &data.lle_systems(), 3).unwrap();
        let split = folds.get("0").unwrap();
        let (train, _) = sample_surrogate_data(&world, &split.train, 800, 5).unwrap();
        let (val, _) = sample_surrogate_data(&world, &split.val, 100, 6).unwrap();
        let cfg = SurrogateTrainConfig {
            epochs: 40,
            batch_size: 128,
            ..SurrogateTrainConfig::default()
        };
        let (surrogate, _) = train_surrogate(&train, &val, &cfg).unwrap();
        Fixture {
            world,
            data,
            folds,
            surrogate,
        }
    })
}

impl Fixture {
    pub fn training_data(&self, split: &str) -> TrainingData {
        let s = self.folds.get(split).unwrap();
        TrainingData::new(
            self.world.embedding_table().unwrap(),
            self.data.filter(&s.train_set()),
            &self.data.filter(&s.val_set()),
            &antoine_map(&self.world.antoine),
        )
        .unwrap()
    }
}

/// A randomly initialised model over `n` random components named `k0`, `k1`, ….
pub fn random_predictor(seed: u64, n: usize, dim: usize, bound: f64) -> gibbsnet::Predictor {
    use gibbsnet::model::ModelParams;
    use gibbsnet::{EmbeddingTable, Scaler};
    use gibbsnet_autodiff::functions::softplus_inverse;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut table = EmbeddingTable::new(dim);
    for k in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        table.insert(format!("k{k}").as_str().into(), v).unwrap();
    }
    let temperature = Scaler {
        mean: vec![350.0],
        std: vec![50.0],
    };
    let mut params = ModelParams::init(dim, seed, Scaler::identity(dim), temperature);
    for l in &mut params.layers {
        l.c = softplus_inverse(bound);
    }
    gibbsnet::Predictor::new(params, table).unwrap()
}
