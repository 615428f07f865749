//! The two-branch classifier.
//!
//! Label branch: a GCN over label embeddings, using either the statistical
//! or the per-image fused correlation matrix, produces one classifier per
//! label; classifiers are applied to the global feature. Region branch: a
//! GCN over region nodes whose features are the rough label scores,
//! mean-pooled and mapped to label logits. The two logit vectors are mixed
//! with weight `lambda`.

mod checkpoint;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use params::{GcnStack, ModelParams, ParamVars};
pub use train::{evaluate_model, predict_all, train, EpochLog, Sgd, TrainOutcome, Trainer};

use crate::config::{Ablation, ModelConfig, RegionAdjacencyMode};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::lcm::{self, IndividualLcm, StatLcm};
use crate::tensor::{Graph, Tensor, Var};
use crate::variational::{self, RegionPosterior};

/// `relu(Â · H · W)`.
pub fn gcn_layer(g: &mut Graph, h: Var, adj: Var, w: Var) -> Result<Var> {
    let ah = g.matmul(adj, h)?;
    let ahw = g.matmul(ah, w)?;
    Ok(g.relu(ahw))
}

pub fn gcn_stack(g: &mut Graph, mut h: Var, adj: Var, weights: &[Var]) -> Result<Var> {
    for &w in weights {
        h = gcn_layer(g, h, adj, w)?;
    }
    Ok(h)
}

/// Label-branch logits: `M · x` with `M = gcn_stack(embeddings, adj)`.
/// `x` is a D x 1 column; the result is C x 1.
pub fn label_branch(
    g: &mut Graph,
    x: Var,
    embeddings: Var,
    adj: Var,
    weights: &[Var],
) -> Result<Var> {
    let m = gcn_stack(g, embeddings, adj, weights)?;
    classify(g, m, x)
}

fn classify(g: &mut Graph, classifiers: Var, x: Var) -> Result<Var> {
    let (c, d) = g.shape(classifiers);
    if g.shape(x) != (d, 1) {
        return Err(Error::Shape {
            op: "label_branch",
            left: (c, d),
            right: g.shape(x),
        });
    }
    g.matmul(classifiers, x)
}

/// Region-to-region affinity `S · Â · Sᵀ`, normalized.
pub fn region_adjacency(
    g: &mut Graph,
    region_scores: Var,
    label_adj: Var,
    eps: f64,
) -> Result<Var> {
    let sa = g.matmul(region_scores, label_adj)?;
    let st = g.transpose(region_scores);
    let aff = g.matmul(sa, st)?;
    if g.value(aff).data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("negative region affinity"));
    }
    lcm::normalize_adjacency(g, aff, eps)
}

/// Mean-pooled GCN features over region nodes, through a fully connected
/// layer. Returns a C x 1 column.
pub fn region_branch(
    g: &mut Graph,
    node_features: Var,
    region_adj: Var,
    weights: &[Var],
    fc_weight: Var,
    fc_bias: Var,
) -> Result<Var> {
    let h = gcn_stack(g, node_features, region_adj, weights)?;
    region_head(g, h, fc_weight, fc_bias)
}

fn region_head(g: &mut Graph, h: Var, fc_weight: Var, fc_bias: Var) -> Result<Var> {
    let pooled = g.mean_rows(h)?;
    let out = g.matmul(pooled, fc_weight)?;
    let out = g.add_row(out, fc_bias)?;
    Ok(g.transpose(out))
}

/// `lambda · y_w + (1 - lambda) · y_r`.
pub fn fuse_scores(g: &mut Graph, y_w: Var, y_r: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda={lambda} must lie in [0, 1]"
        )));
    }
    let a = g.scale(y_w, lambda);
    let b = g.scale(y_r, 1.0 - lambda);
    g.add(a, b)
}

/// Mean binary cross-entropy on logits, `mean(softplus(s) - y·s)`, which is
/// the usual `-[y ln σ(s) + (1-y) ln(1-σ(s))]` without overflow.
pub fn multilabel_bce(g: &mut Graph, logits: Var, y: &[f64]) -> Result<Var> {
    let shape = g.shape(logits);
    if shape.0 * shape.1 != y.len() {
        return Err(Error::Shape {
            op: "multilabel_bce",
            left: shape,
            right: (y.len(), 1),
        });
    }
    if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("targets must be 0/1, found {v}")));
    }
    let t = g.constant(Tensor::new(shape.0, shape.1, y.to_vec())?);
    let sp = g.softplus(logits);
    let ys = g.hadamard(t, logits)?;
    let per = g.sub(sp, ys)?;
    g.mean(per)
}

/// Which correlation matrix fed the label GCN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencySource {
    Statistical,
    Fused,
}

/// Graph handles produced by one sample's forward pass.
#[derive(Clone, Debug)]
pub struct SampleForward {
    pub y_w: Var,
    pub y_r: Option<Var>,
    pub y_f: Var,
    pub region_scores: Option<Var>,
    pub individual: Option<IndividualLcm>,
    pub fused: Option<Var>,
    pub label_adj: Var,
    pub adjacency: AdjacencySource,
    pub posterior: Option<RegionPosterior>,
    pub z: Option<Var>,
    pub kl: Option<Var>,
}

/// Values of one deterministic forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub y_w: Vec<f64>,
    /// Zeros when the region branch is off.
    pub y_r: Vec<f64>,
    pub y_f: Vec<f64>,
    pub adjacency: AdjacencySource,
    /// Normalized adjacency that fed the label GCN.
    pub label_adj: Tensor,
    pub pooled: Option<Vec<f64>>,
    pub individual: Option<Tensor>,
    pub fused: Option<Tensor>,
    /// Region scaling factors (the posterior mean at inference).
    pub z: Option<Vec<f64>>,
}

/// Static model structure: config, ablation switches and the statistical
/// correlation matrix built from the training split.
#[derive(Clone, Debug)]
pub struct IaGcn {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub stat: StatLcm,
    stat_mask: Tensor,
    stat_adj: Tensor,
}

impl IaGcn {
    pub fn new(config: ModelConfig, ablation: Ablation, stat: StatLcm) -> Result<Self> {
        let stat_mask = stat.matrix(config.stat_form).clone();
        let stat_adj = lcm::normalize_adjacency_value(&stat_mask, config.adj_eps)?;
        Ok(IaGcn {
            config,
            ablation,
            stat,
            stat_mask,
            stat_adj,
        })
    }

    /// Builds the statistical matrix from training samples first.
    pub fn from_samples(config: ModelConfig, ablation: Ablation, train: &[Sample]) -> Result<Self> {
        let sets: Vec<Vec<usize>> = train.iter().map(Sample::labels).collect();
        let c = train
            .first()
            .map(|s| s.y.len())
            .ok_or(Error::Empty("training set"))?;
        let stat = StatLcm::build(&sets, c, config.tau, config.p)?;
        Self::new(config, ablation, stat)
    }

    pub fn num_labels(&self) -> usize {
        self.stat.num_labels
    }

    /// Normalized statistical adjacency `Â_S`.
    pub fn stat_adjacency(&self) -> &Tensor {
        &self.stat_adj
    }

    /// Effective fusion weight: 1 when the region branch is off.
    pub fn lambda(&self) -> f64 {
        if self.ablation.com_sco {
            self.config.lambda
        } else {
            1.0
        }
    }

    fn uses_region_scores(&self) -> bool {
        self.ablation.id_lcm || self.ablation.com_sco
    }

    /// Forward pass for one sample. `epsilon` is the N x 1 reparameterization
    /// noise; `None` means zeros. `base_classifiers` caches the statistical
    /// adjacency and label GCN output across samples of one graph, since
    /// neither depends on the image.
    pub fn forward(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        sample: &Sample,
        epsilon: Option<&Tensor>,
        base_classifiers: &mut Option<(Var, Var)>,
    ) -> Result<SampleForward> {
        let x = g.constant(Tensor::column(sample.x.clone()));
        let regions = g.constant(sample.regions.clone());
        let n = sample.regions.rows();

        let (weighted, posterior, z) = if self.ablation.var_inf {
            let post = variational::encode(g, regions, pv.w_mu(), pv.w_logvar())?;
            let zeros;
            let eps = match epsilon {
                Some(e) => e,
                None => {
                    zeros = Tensor::zeros(n, 1);
                    &zeros
                }
            };
            let z = variational::sample_z(g, post, eps)?;
            (
                variational::weight_regions(g, regions, z)?,
                Some(post),
                Some(z),
            )
        } else {
            (regions, None, None)
        };

        let region_scores = if self.uses_region_scores() {
            Some(lcm::compute_region_scores(
                g,
                weighted,
                pv.scorer_weight(),
                pv.scorer_bias(),
            )?)
        } else {
            None
        };

        let (label_adj, adjacency, individual, fused, y_w) = match region_scores {
            Some(scores) if self.ablation.id_lcm => {
                let ind = lcm::build_individual_lcm(g, scores)?;
                let fused = lcm::fuse_lcm(g, &self.stat_mask, ind.matrix)?;
                let adj = lcm::normalize_adjacency(g, fused, self.config.adj_eps)?;
                let y_w = label_branch(g, x, pv.embeddings, adj, pv.label_gcn())?;
                (adj, AdjacencySource::Fused, Some(ind), Some(fused), y_w)
            }
            _ => {
                let (adj, m) = match *base_classifiers {
                    Some(cached) => cached,
                    None => {
                        let adj = g.constant(self.stat_adj.clone());
                        let m = gcn_stack(g, pv.embeddings, adj, pv.label_gcn())?;
                        *base_classifiers = Some((adj, m));
                        (adj, m)
                    }
                };
                let y_w = classify(g, m, x)?;
                (adj, AdjacencySource::Statistical, None, None, y_w)
            }
        };

        let (y_r, y_f) = match region_scores {
            Some(scores) if self.ablation.com_sco => {
                let y_r = match self.config.region_adjacency {
                    RegionAdjacencyMode::Affinity => {
                        let radj = region_adjacency(g, scores, label_adj, self.config.adj_eps)?;
                        region_branch(
                            g,
                            scores,
                            radj,
                            pv.region_gcn(),
                            pv.fc_weight(),
                            pv.fc_bias(),
                        )?
                    }
                    RegionAdjacencyMode::LabelMixing => {
                        let ws = pv.region_gcn();
                        let mixed = g.matmul(scores, label_adj)?;
                        let mut h = g.matmul(mixed, ws[0])?;
                        h = g.relu(h);
                        for &w in &ws[1..] {
                            let hw = g.matmul(h, w)?;
                            h = g.relu(hw);
                        }
                        region_head(g, h, pv.fc_weight(), pv.fc_bias())?
                    }
                };
                let y_f = fuse_scores(g, y_w, y_r, self.config.lambda)?;
                (Some(y_r), y_f)
            }
            _ => (None, y_w),
        };

        let kl = match posterior {
            Some(post) => Some(variational::kl_loss(g, post)?),
            None => None,
        };

        Ok(SampleForward {
            y_w,
            y_r,
            y_f,
            region_scores,
            individual,
            fused,
            label_adj,
            adjacency,
            posterior,
            z,
            kl,
        })
    }

    /// `L_ML + beta · L_KL` for one sample.
    pub fn sample_loss(&self, g: &mut Graph, fwd: &SampleForward, sample: &Sample) -> Result<Var> {
        let y: Vec<f64> = sample.y.iter().map(|&v| v as f64).collect();
        let bce = multilabel_bce(g, fwd.y_f, &y)?;
        match fwd.kl {
            Some(kl) => {
                let weighted = g.scale(kl, self.config.beta);
                g.add(bce, weighted)
            }
            None => Ok(bce),
        }
    }

    /// Deterministic inference with zero reparameterization noise.
    pub fn predict(&self, params: &ModelParams, sample: &Sample) -> Result<Scores> {
        let mut g = Graph::new();
        let pv = ParamVars::bind(&mut g, params, false);
        let fwd = self.forward(&mut g, &pv, sample, None, &mut None)?;
        let vec = |v: Var| g.value(v).data().to_vec();
        let c = self.num_labels();
        Ok(Scores {
            y_w: vec(fwd.y_w),
            y_r: fwd.y_r.map_or_else(|| vec![0.0; c], vec),
            y_f: vec(fwd.y_f),
            adjacency: fwd.adjacency,
            label_adj: g.value(fwd.label_adj).clone(),
            pooled: fwd.individual.as_ref().map(|i| vec(i.pooled)),
            individual: fwd.individual.as_ref().map(|i| g.value(i.matrix).clone()),
            fused: fwd.fused.map(|f| g.value(f).clone()),
            z: fwd.z.map(vec),
        })
    }
}
