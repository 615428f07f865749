use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IaGcn, ModelParams};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::lcm::StatLcm;

pub const CHECKPOINT_FORMAT: &str = "iagcn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate a trained model: config, the statistical
/// matrix from its training split, and all parameter groups with shapes.
/// Stored as JSON; floats survive a save/load cycle bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub stat: StatLcm,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: RunConfig, stat: StatLcm, params: ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config,
            stat,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                ck.format, ck.version
            )));
        }
        Ok(ck)
    }

    pub fn model(&self) -> Result<IaGcn> {
        IaGcn::new(
            self.config.model.clone(),
            self.config.ablation,
            self.stat.clone(),
        )
    }
}
