use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{IaGcn, ModelParams, ParamVars, Scores};
use crate::config::{RunConfig, TrainConfig};
use crate::data::{self, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::tensor::{Graph, Tensor};
use crate::variational;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v = momentum·v + (g + wd·θ)`, `θ -= lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let theta = p.data_mut();
            for ((t, &gi), vi) in theta.iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *t;
                *t -= lr * *vi;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Owns the model, its parameters, the optimizer and the run's RNG.
#[derive(Debug)]
pub struct Trainer {
    pub model: IaGcn,
    pub params: ModelParams,
    cfg: TrainConfig,
    opt: Sgd,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Builds the statistical matrix from `train`, provisions embeddings and
    /// initializes parameters, all from `config.seed`.
    pub fn new(config: &RunConfig, train: &[Sample]) -> Result<Self> {
        config.validate()?;
        let first = train.first().ok_or(Error::Empty("training set"))?;
        let (c, d) = (first.y.len(), first.x.len());
        let model = IaGcn::from_samples(config.model.clone(), config.ablation, train)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let emb_seed: u64 = rng.gen();
        let embeddings = match &config.model.embeddings_path {
            Some(path) => data::load_embeddings(path, c, config.model.embed_dim)?,
            None => data::make_embeddings(c, config.model.embed_dim, emb_seed)?,
        };
        let params = ModelParams::init(&mut rng, &config.model, d, embeddings)?;
        Ok(Trainer {
            model,
            params,
            cfg: config.train.clone(),
            opt: Sgd::new(config.train.momentum, config.train.weight_decay),
            rng,
        })
    }

    /// One forward/backward/update on `batch`. Returns the mean batch loss.
    pub fn train_step(&mut self, batch: &[&Sample], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, &self.params, true);
        let mut cache = None;
        let mut total = None;
        for s in batch {
            let eps = if self.model.ablation.var_inf {
                Some(variational::draw_epsilon(&mut self.rng, s.regions.rows()))
            } else {
                None
            };
            let fwd = self
                .model
                .forward(&mut g, &pv, s, eps.as_ref(), &mut cache)?;
            let l = self.model.sample_loss(&mut g, &fwd, s)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let total = total.expect("non-empty batch");
        let loss = g.scale(total, 1.0 / batch.len() as f64);
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            g.check_finite()?;
            return Err(Error::NonFinite {
                node: loss.index(),
                what: "loss".into(),
            });
        }
        g.backward(loss)?;
        let grads: Vec<Tensor> = pv.groups.iter().map(|&v| g.grad(v)).collect();
        self.opt.step(&mut self.params.groups_mut(), &grads, lr);
        Ok(value)
    }

    pub fn run_epoch(&mut self, samples: &[Sample], epoch: usize) -> Result<EpochLog> {
        let lr = self.cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for (step, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let l = self.train_step(&batch, lr).map_err(|e| Error::Training {
                epoch,
                step,
                source: Box::new(e),
            })?;
            sum += l;
            steps += 1;
        }
        Ok(EpochLog {
            epoch,
            lr,
            mean_loss: sum / steps.max(1) as f64,
        })
    }

    pub fn fit(&mut self, samples: &[Sample]) -> Result<Vec<EpochLog>> {
        let mut log = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            let entry = self.run_epoch(samples, epoch)?;
            debug!("epoch {epoch}: lr {} loss {:.6}", entry.lr, entry.mean_loss);
            log.push(entry);
        }
        if let Some(last) = log.last() {
            info!(
                "trained {} epochs, final loss {:.6}",
                log.len(),
                last.mean_loss
            );
        }
        Ok(log)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: IaGcn,
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

pub fn train(config: &RunConfig, samples: &[Sample]) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, samples)?;
    let log = trainer.fit(samples)?;
    Ok(TrainOutcome {
        model: trainer.model,
        params: trainer.params,
        log,
    })
}

/// Deterministic inference over `samples`; order is preserved.
pub fn predict_all(model: &IaGcn, params: &ModelParams, samples: &[Sample]) -> Result<Vec<Scores>> {
    samples
        .par_iter()
        .map(|s| model.predict(params, s))
        .collect()
}

pub fn evaluate_model(
    model: &IaGcn,
    params: &ModelParams,
    samples: &[Sample],
) -> Result<MetricsReport> {
    let preds = predict_all(model, params, samples)?;
    let scores: Vec<Vec<f64>> = preds.into_iter().map(|p| p.y_f).collect();
    let truth: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.y.iter().map(|&v| v as f64).collect())
        .collect();
    metrics::evaluate(
        &Tensor::from_rows(&scores)?,
        &Tensor::from_rows(&truth)?,
        model.config.threshold,
    )
}
