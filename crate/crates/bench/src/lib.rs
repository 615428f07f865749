//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iagcn_core::model::{ModelParams, Trainer};
use iagcn_core::{data, IaGcn, RunConfig, Sample, Tensor};

/// A model at initialization on the default synthetic benchmark, plus the
/// test split.
pub struct Fixture {
    pub config: RunConfig,
    pub model: IaGcn,
    pub params: ModelParams,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn fixture() -> Fixture {
    let config = RunConfig::default();
    let ds = data::generate(&config.data).expect("default spec is valid");
    let trainer = Trainer::new(&config, &ds.train).expect("default config is valid");
    Fixture {
        config,
        model: trainer.model,
        params: trainer.params,
        train: ds.train,
        test: ds.test,
    }
}

/// Seeded dense matrix with entries in [-1, 1).
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}
