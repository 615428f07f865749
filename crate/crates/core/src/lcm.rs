//! Label correlation matrices.
//!
//! A dataset-wide statistical matrix is built once from training label sets.
//! Each image also gets an individual matrix from its region scores; the two
//! are fused element-wise and symmetrically normalized before graph
//! convolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which form of the statistical matrix enters the fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatLcmForm {
    /// Thresholded at `tau` and re-weighted with `p`.
    #[default]
    Binarized,
    /// Raw conditional probabilities P(L_j | L_i).
    CondProb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatLcm {
    pub num_labels: usize,
    /// `cond_prob[i][j] = P(L_j | L_i)`, zero rows for labels never seen.
    pub cond_prob: Tensor,
    pub binarized: Tensor,
    pub tau: f64,
    pub p: f64,
}

impl StatLcm {
    /// Counts co-occurrences over `label_sets` (one set of label indices per
    /// image), then thresholds and re-weights.
    ///
    /// Off-diagonal entries with `P(L_j | L_i) >= tau` survive and share mass
    /// `p` uniformly within their row; the diagonal is always `1 - p`.
    pub fn build<S: AsRef<[usize]>>(
        label_sets: &[S],
        num_labels: usize,
        tau: f64,
        p: f64,
    ) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::invalid("statistical LCM needs at least one label"));
        }
        if label_sets.is_empty() {
            return Err(Error::invalid("statistical LCM needs at least one image"));
        }
        if !(0.0..=1.0).contains(&tau) || !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "tau={tau} and p={p} must lie in [0, 1]"
            )));
        }

        let c = num_labels;
        let mut pair = vec![0usize; c * c];
        let mut single = vec![0usize; c];
        let mut present = vec![false; c];
        for (img, set) in label_sets.iter().enumerate() {
            present.iter_mut().for_each(|v| *v = false);
            for &l in set.as_ref() {
                if l >= c {
                    return Err(Error::invalid(format!(
                        "image {img}: label {l} out of range for {c} labels"
                    )));
                }
                present[l] = true;
            }
            let idx: Vec<usize> = (0..c).filter(|&l| present[l]).collect();
            for &i in &idx {
                single[i] += 1;
                for &j in &idx {
                    pair[i * c + j] += 1;
                }
            }
        }

        let mut cond_prob = Tensor::zeros(c, c);
        for i in 0..c {
            if single[i] == 0 {
                continue;
            }
            for j in 0..c {
                cond_prob.set(i, j, pair[i * c + j] as f64 / single[i] as f64);
            }
        }

        let mut binarized = Tensor::zeros(c, c);
        for i in 0..c {
            let survivors: Vec<usize> = (0..c)
                .filter(|&j| j != i && cond_prob.get(i, j) >= tau)
                .collect();
            if !survivors.is_empty() {
                let share = p / survivors.len() as f64;
                for &j in &survivors {
                    binarized.set(i, j, share);
                }
            }
            binarized.set(i, i, 1.0 - p);
        }

        Ok(StatLcm {
            num_labels: c,
            cond_prob,
            binarized,
            tau,
            p,
        })
    }

    pub fn matrix(&self, form: StatLcmForm) -> &Tensor {
        match form {
            StatLcmForm::Binarized => &self.binarized,
            StatLcmForm::CondProb => &self.cond_prob,
        }
    }
}

/// Rough per-region label scores: `sigmoid(X_w · W + b)`, an N x C matrix
/// with entries in (0, 1).
pub fn compute_region_scores(g: &mut Graph, regions: Var, weight: Var, bias: Var) -> Result<Var> {
    let logits = g.matmul(regions, weight)?;
    let logits = g.add_row(logits, bias)?;
    Ok(g.sigmoid(logits))
}

/// Column-max pooled scores of one image and their outer product.
#[derive(Clone, Debug)]
pub struct IndividualLcm {
    /// 1 x C row of per-label maxima over regions.
    pub pooled: Var,
    /// Winning region per label.
    pub argmax: Vec<usize>,
    /// C x C, `pooled ⊗ pooled`.
    pub matrix: Var,
}

pub fn build_individual_lcm(g: &mut Graph, region_scores: Var) -> Result<IndividualLcm> {
    if g.shape(region_scores).0 == 0 {
        return Err(Error::Empty("build_individual_lcm"));
    }
    let (pooled, argmax) = g.column_max(region_scores)?;
    let matrix = g.outer(pooled, pooled)?;
    Ok(IndividualLcm {
        pooled,
        argmax,
        matrix,
    })
}

/// Element-wise product of the (constant) statistical mask with the
/// individual matrix.
pub fn fuse_lcm(g: &mut Graph, stat_mask: &Tensor, individual: Var) -> Result<Var> {
    let shape = g.shape(individual);
    if stat_mask.shape() != shape {
        return Err(Error::Shape {
            op: "fuse_lcm",
            left: stat_mask.shape(),
            right: shape,
        });
    }
    let mask = g.constant(stat_mask.clone());
    g.hadamard(mask, individual)
}

/// `D^{-1/2} A D^{-1/2}` with `D_ii = sum_j A_ij + eps`.
pub fn normalize_adjacency(g: &mut Graph, a: Var, eps: f64) -> Result<Var> {
    let t = g.value(a);
    if t.rows() != t.cols() {
        return Err(Error::invalid(format!(
            "adjacency must be square, got {:?}",
            t.shape()
        )));
    }
    if let Some(bad) = t.data().iter().find(|&&v| v.is_nan() || v < 0.0) {
        return Err(Error::invalid(format!(
            "adjacency entries must be finite and >= 0, found {bad}"
        )));
    }
    let degree = g.row_sum(a);
    let degree = g.add_scalar(degree, eps);
    let inv_sqrt = g.powf(degree, -0.5);
    let scale = g.outer(inv_sqrt, inv_sqrt)?;
    g.hadamard(a, scale)
}

/// Value-only normalization, for matrices that never need gradients.
pub fn normalize_adjacency_value(a: &Tensor, eps: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(a.clone());
    let n = normalize_adjacency(&mut g, v, eps)?;
    Ok(g.value(n).clone())
}
