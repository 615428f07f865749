use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnStack {
    pub weights: Vec<Tensor>,
}

impl GcnStack {
    /// Layers mapping `input` through each of `dims`.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, input: usize, dims: &[usize]) -> Self {
        let mut fan_in = input;
        let weights = dims
            .iter()
            .map(|&d| {
                let w = uniform(rng, fan_in, d, fan_in);
                fan_in = d;
                w
            })
            .collect();
        GcnStack { weights }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Tensor::cols)
    }
}

/// Uniform in ±1/sqrt(fan_in).
fn uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// Every trainable tensor plus the frozen label embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub label_gcn: GcnStack,
    pub region_gcn: GcnStack,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
    pub scorer_weight: Tensor,
    pub scorer_bias: Tensor,
    pub w_mu: Tensor,
    pub w_logvar: Tensor,
    /// C x d_e, never updated.
    pub embeddings: Tensor,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        config: &ModelConfig,
        feature_dim: usize,
        embeddings: Tensor,
    ) -> Result<Self> {
        let c = embeddings.rows();
        if embeddings.cols() != config.embed_dim {
            return Err(Error::invalid(format!(
                "embeddings have width {}, config expects {}",
                embeddings.cols(),
                config.embed_dim
            )));
        }
        let label_gcn = GcnStack::init(rng, config.embed_dim, &config.label_dims());
        if label_gcn.output_dim() != feature_dim {
            return Err(Error::invalid(format!(
                "label GCN output {} does not match feature dim {feature_dim}",
                label_gcn.output_dim()
            )));
        }
        let region_gcn = GcnStack::init(rng, c, &config.region_dims());
        let h = region_gcn.output_dim();
        Ok(ModelParams {
            fc_weight: uniform(rng, h, c, h),
            fc_bias: uniform(rng, 1, c, h),
            scorer_weight: uniform(rng, feature_dim, c, feature_dim),
            scorer_bias: uniform(rng, 1, c, feature_dim),
            w_mu: uniform(rng, feature_dim, 1, feature_dim),
            w_logvar: uniform(rng, feature_dim, 1, feature_dim),
            label_gcn,
            region_gcn,
            embeddings,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.label_gcn.weights.len() + self.region_gcn.weights.len() + 6
    }

    /// Trainable tensors in a fixed order, with stable names.
    pub fn groups(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::with_capacity(self.num_groups());
        for (i, w) in self.label_gcn.weights.iter().enumerate() {
            out.push((format!("label_gcn.{i}"), w));
        }
        for (i, w) in self.region_gcn.weights.iter().enumerate() {
            out.push((format!("region_gcn.{i}"), w));
        }
        out.push(("fc.weight".into(), &self.fc_weight));
        out.push(("fc.bias".into(), &self.fc_bias));
        out.push(("scorer.weight".into(), &self.scorer_weight));
        out.push(("scorer.bias".into(), &self.scorer_bias));
        out.push(("var.w_mu".into(), &self.w_mu));
        out.push(("var.w_logvar".into(), &self.w_logvar));
        out
    }

    /// Same order as [`ModelParams::groups`].
    pub fn groups_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(self.num_groups());
        out.extend(self.label_gcn.weights.iter_mut());
        out.extend(self.region_gcn.weights.iter_mut());
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out.push(&mut self.scorer_weight);
        out.push(&mut self.scorer_bias);
        out.push(&mut self.w_mu);
        out.push(&mut self.w_logvar);
        out
    }
}

/// Graph handles for a [`ModelParams`], in group order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub groups: Vec<Var>,
    pub embeddings: Var,
    n_label: usize,
    n_region: usize,
}

impl ParamVars {
    /// Registers every group as a trainable leaf (`trainable`) or a constant.
    pub fn bind(g: &mut Graph, params: &ModelParams, trainable: bool) -> Self {
        let groups = params
            .groups()
            .into_iter()
            .map(|(name, t)| {
                if trainable {
                    g.param_named(name, t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        ParamVars {
            groups,
            embeddings: g.constant(params.embeddings.clone()),
            n_label: params.label_gcn.weights.len(),
            n_region: params.region_gcn.weights.len(),
        }
    }

    /// Swaps in `var` for group `index`, e.g. to differentiate one group.
    pub fn with_group(mut self, index: usize, var: Var) -> Self {
        self.groups[index] = var;
        self
    }

    pub fn label_gcn(&self) -> &[Var] {
        &self.groups[..self.n_label]
    }

    pub fn region_gcn(&self) -> &[Var] {
        &self.groups[self.n_label..self.n_label + self.n_region]
    }

    fn tail(&self, k: usize) -> Var {
        self.groups[self.n_label + self.n_region + k]
    }

    pub fn fc_weight(&self) -> Var {
        self.tail(0)
    }

    pub fn fc_bias(&self) -> Var {
        self.tail(1)
    }

    pub fn scorer_weight(&self) -> Var {
        self.tail(2)
    }

    pub fn scorer_bias(&self) -> Var {
        self.tail(3)
    }

    pub fn w_mu(&self) -> Var {
        self.tail(4)
    }

    pub fn w_logvar(&self) -> Var {
        self.tail(5)
    }
}
