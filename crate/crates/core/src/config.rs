//! Run configuration, loadable from TOML. Every field has a default, so a
//! config file only needs the values it changes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::lcm::StatLcmForm;

/// How the region branch consumes the fused label correlations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionAdjacencyMode {
    /// Regions as graph nodes with affinity `S · Â_F · Sᵀ` (S = region scores).
    #[default]
    Affinity,
    /// No region graph; the first layer mixes label space as `S · Â_F · W`.
    LabelMixing,
}

/// Which model components are switched on. All off is the statistical-only
/// baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Per-image fused correlation matrix instead of the statistical one.
    pub id_lcm: bool,
    /// Variational region weighting and its KL term.
    pub var_inf: bool,
    /// Region branch and score fusion.
    pub com_sco: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        AblationLevel::ComSco.flags()
    }
}

/// The cumulative rows of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationLevel {
    Base,
    IdLcm,
    VarInf,
    ComSco,
}

impl AblationLevel {
    pub const ALL: [AblationLevel; 4] = [
        AblationLevel::Base,
        AblationLevel::IdLcm,
        AblationLevel::VarInf,
        AblationLevel::ComSco,
    ];

    pub fn flags(self) -> Ablation {
        Ablation {
            id_lcm: self >= AblationLevel::IdLcm,
            var_inf: self >= AblationLevel::VarInf,
            com_sco: self >= AblationLevel::ComSco,
        }
    }

    /// Row label as printed in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            AblationLevel::Base => "Base",
            AblationLevel::IdLcm => "Base+ID_LCM",
            AblationLevel::VarInf => "Base+ID_LCM+Var_Inf",
            AblationLevel::ComSco => "Base+ID_LCM+Var_Inf+Com_Sco",
        }
    }
}

impl fmt::Display for AblationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AblationLevel::Base => "base",
            AblationLevel::IdLcm => "id_lcm",
            AblationLevel::VarInf => "var_inf",
            AblationLevel::ComSco => "com_sco",
        };
        f.write_str(s)
    }
}

impl FromStr for AblationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(AblationLevel::Base),
            "id_lcm" => Ok(AblationLevel::IdLcm),
            "var_inf" => Ok(AblationLevel::VarInf),
            "com_sco" => Ok(AblationLevel::ComSco),
            other => Err(Error::invalid(format!(
                "unknown ablation level {other:?} (expected base, id_lcm, var_inf or com_sco)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Label embedding width d_e.
    pub embed_dim: usize,
    /// Optional CSV of C x d_e embeddings; seeded random rows otherwise.
    pub embeddings_path: Option<PathBuf>,
    /// Output widths of the label GCN layers before scaling. The last one,
    /// after scaling, must equal the feature dimension.
    pub label_widths: Vec<usize>,
    /// Output widths of the region GCN layers before scaling.
    pub region_widths: Vec<usize>,
    /// Every width is divided by this (minimum 1).
    pub width_divisor: usize,
    pub tau: f64,
    pub p: f64,
    pub stat_form: StatLcmForm,
    /// Score fusion weight on the global branch.
    pub lambda: f64,
    /// Weight of the KL term.
    pub beta: f64,
    /// Degree guard in adjacency normalization.
    pub adj_eps: f64,
    pub region_adjacency: RegionAdjacencyMode,
    /// Probability threshold for the count-based metrics.
    pub threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            embeddings_path: None,
            label_widths: vec![512, 1024, 2048],
            region_widths: vec![256, 512, 1024, 2048],
            width_divisor: 64,
            tau: 0.4,
            p: 0.2,
            stat_form: StatLcmForm::Binarized,
            lambda: 0.8,
            beta: 1.0,
            adj_eps: 1e-6,
            region_adjacency: RegionAdjacencyMode::Affinity,
            threshold: 0.5,
        }
    }
}

impl ModelConfig {
    fn scaled(&self, widths: &[usize]) -> Vec<usize> {
        widths
            .iter()
            .map(|w| (w / self.width_divisor.max(1)).max(1))
            .collect()
    }

    pub fn label_dims(&self) -> Vec<usize> {
        self.scaled(&self.label_widths)
    }

    pub fn region_dims(&self) -> Vec<usize> {
        self.scaled(&self.region_widths)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate is divided by this every `lr_decay_every` epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_decay_factor: 10.0,
            lr_decay_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.checked_div(self.lr_decay_every).unwrap_or(0);
        self.lr / self.lr_decay_factor.powi(steps as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds parameter init, embeddings, batch order and reparameterization noise.
    pub seed: u64,
    pub data: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            data: DatasetSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl RunConfig {
    /// Full-size shapes: 300-d embeddings, 2048-d features, 40 regions,
    /// unscaled GCN widths, learning rate 0.01 and 120 epochs with decay
    /// every 30.
    pub fn paper_preset() -> Self {
        let mut cfg = RunConfig::default();
        cfg.data.feature_dim = 2048;
        cfg.data.num_regions = 40;
        cfg.model.embed_dim = 300;
        cfg.model.width_divisor = 1;
        cfg.train.lr = 0.01;
        cfg.train.epochs = 120;
        cfg.train.lr_decay_every = 30;
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        let m = &self.model;
        if !(0.0..=1.0).contains(&m.lambda) {
            return Err(Error::invalid(format!(
                "lambda={} must lie in [0, 1]",
                m.lambda
            )));
        }
        if m.embed_dim == 0 || m.label_widths.is_empty() || m.region_widths.is_empty() {
            return Err(Error::invalid(
                "embed_dim and GCN widths must be non-empty and positive",
            ));
        }
        let last = *m.label_dims().last().expect("non-empty");
        if last != self.data.feature_dim {
            return Err(Error::invalid(format!(
                "label GCN output width {last} must equal feature_dim {}",
                self.data.feature_dim
            )));
        }
        if !(0.0..=1.0).contains(&m.tau) || !(0.0..=1.0).contains(&m.p) {
            return Err(Error::invalid("tau and p must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&m.threshold) || m.adj_eps < 0.0 || m.beta < 0.0 {
            return Err(Error::invalid(
                "threshold in [0, 1], adj_eps >= 0 and beta >= 0 required",
            ));
        }
        let t = &self.train;
        if t.batch_size == 0 || t.lr < 0.0 || t.lr_decay_factor <= 0.0 {
            return Err(Error::invalid(
                "batch_size >= 1, lr >= 0 and lr_decay_factor > 0 required",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        RunConfig::paper_preset().validate().unwrap();
        let m = ModelConfig::default();
        assert_eq!(m.label_dims(), vec![8, 16, 32]);
        assert_eq!(m.region_dims(), vec![4, 8, 16, 32]);
    }

    #[test]
    fn toml_roundtrip_and_partial() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);

        let partial = "seed = 9\n[model]\nlambda = 0.5\n[ablation]\ncom_sco = false\n";
        let p = RunConfig::from_toml_str(partial).unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.model.lambda, 0.5);
        assert!(p.ablation.id_lcm && !p.ablation.com_sco);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("[model]\nlambda = 1.5\n").is_err());
        assert!(RunConfig::from_toml_str("[model]\nwidth_divisor = 32\n").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn ablation_levels_are_cumulative() {
        let flags: Vec<_> = AblationLevel::ALL.iter().map(|l| l.flags()).collect();
        assert_eq!(
            flags[0],
            Ablation {
                id_lcm: false,
                var_inf: false,
                com_sco: false
            }
        );
        assert_eq!(
            flags[2],
            Ablation {
                id_lcm: true,
                var_inf: true,
                com_sco: false
            }
        );
        assert_eq!(flags[3], Ablation::default());
        for l in AblationLevel::ALL {
            assert_eq!(l.to_string().parse::<AblationLevel>().unwrap(), l);
        }
        assert!("full".parse::<AblationLevel>().is_err());
    }

    #[test]
    fn lr_schedule() {
        let t = TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        };
        assert_eq!(t.lr_at(0), 0.01);
        assert_eq!(t.lr_at(49), 0.01);
        assert!((t.lr_at(50) - 0.001).abs() < 1e-18);
        assert!((t.lr_at(199) - 1e-5).abs() < 1e-18);
        let flat = TrainConfig {
            lr_decay_every: 0,
            ..t
        };
        assert_eq!(flat.lr_at(500), 0.01);
    }
}
