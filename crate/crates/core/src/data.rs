//! Synthetic multi-label samples standing in for backbone features, plus the
//! line-delimited dataset format and label-embedding provisioning.
//!
//! Every label has a prototype direction. A sample's global feature is the
//! mean of its labels' prototypes plus noise; each region either carries one
//! present label's prototype plus noise or is pure background noise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One synthetic image.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Global feature, length D.
    pub x: Vec<f64>,
    /// N x D region features.
    pub regions: Tensor,
    /// Binary ground truth, length C.
    pub y: Vec<u8>,
}

impl Sample {
    pub fn labels(&self) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    y: Vec<u8>,
    x: Vec<f64>,
    regions: Vec<Vec<f64>>,
}

/// Planted dependency: when `from` is present, `to` is added with `prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrence {
    pub from: usize,
    pub to: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_labels: usize,
    pub num_regions: usize,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Independent probability of each label before planted pairs apply.
    pub base_rate: f64,
    pub pairs: Vec<CoOccurrence>,
    pub noise_sigma: f64,
    pub background_rate: f64,
    /// Per-coordinate RMS of each prototype.
    pub prototype_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            num_labels: 8,
            num_regions: 6,
            feature_dim: 32,
            n_train: 500,
            n_test: 200,
            base_rate: 0.2,
            pairs: vec![
                CoOccurrence {
                    from: 0,
                    to: 1,
                    prob: 0.9,
                },
                CoOccurrence {
                    from: 2,
                    to: 3,
                    prob: 0.8,
                },
                CoOccurrence {
                    from: 4,
                    to: 5,
                    prob: 0.85,
                },
            ],
            noise_sigma: 0.3,
            background_rate: 0.3,
            prototype_scale: 1.0,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels == 0 || self.num_regions == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("dataset needs C, N and D all >= 1"));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name}={v} must lie in [0, 1]")))
            }
        };
        unit("base_rate", self.base_rate)?;
        unit("background_rate", self.background_rate)?;
        for p in &self.pairs {
            unit("pair probability", p.prob)?;
            if p.from >= self.num_labels || p.to >= self.num_labels {
                return Err(Error::invalid(format!(
                    "pair ({}, {}) out of range for {} labels",
                    p.from, p.to, self.num_labels
                )));
            }
        }
        let (sigma, scale) = (self.noise_sigma, self.prototype_scale);
        if sigma.is_nan() || sigma < 0.0 || scale.is_nan() || scale <= 0.0 {
            return Err(Error::invalid(
                "noise_sigma must be >= 0 and prototype_scale > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub prototypes: Tensor,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// C x D prototypes. Orthogonalized when C <= D, then rescaled so each row
/// has norm `scale * sqrt(D)`.
fn make_prototypes(rng: &mut ChaCha8Rng, spec: &DatasetSpec) -> Tensor {
    let (c, d) = (spec.num_labels, spec.feature_dim);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut v = normal_vec(rng, d, 1.0);
        if c <= d {
            for prev in &rows {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                let nn: f64 = prev.iter().map(|b| b * b).sum();
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot / nn * b);
            }
        }
        rows.push(v);
    }
    let target = spec.prototype_scale * (d as f64).sqrt();
    for v in &mut rows {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a *= target / norm);
    }
    Tensor::from_rows(&rows).expect("rows share length")
}

fn draw_labels(rng: &mut ChaCha8Rng, spec: &DatasetSpec) -> Vec<u8> {
    let c = spec.num_labels;
    let mut y: Vec<u8> = (0..c).map(|_| rng.gen_bool(spec.base_rate) as u8).collect();
    if y.iter().all(|&v| v == 0) {
        y[rng.gen_range(0..c)] = 1;
    }
    for p in &spec.pairs {
        if y[p.from] == 1 && rng.gen_bool(p.prob) {
            y[p.to] = 1;
        }
    }
    y
}

fn draw_sample(rng: &mut ChaCha8Rng, spec: &DatasetSpec, prototypes: &Tensor) -> Sample {
    let d = spec.feature_dim;
    let y = draw_labels(rng, spec);
    let present: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();

    let mut x = normal_vec(rng, d, spec.noise_sigma);
    for &l in &present {
        for (xi, &p) in x.iter_mut().zip(prototypes.row_slice(l)) {
            *xi += p / present.len() as f64;
        }
    }

    let mut rows = Vec::with_capacity(spec.num_regions);
    for _ in 0..spec.num_regions {
        let mut r = normal_vec(rng, d, spec.noise_sigma);
        if !rng.gen_bool(spec.background_rate) {
            let l = *present.choose(rng).expect("at least one label");
            r.iter_mut()
                .zip(prototypes.row_slice(l))
                .for_each(|(a, &p)| *a += p);
        }
        rows.push(r);
    }
    Sample {
        x,
        regions: Tensor::from_rows(&rows).expect("rows share length"),
        y,
    }
}

/// Deterministic given `spec.seed`: prototypes, then training samples, then
/// test samples, all from one stream.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = make_prototypes(&mut rng, spec);
    let train = (0..spec.n_train)
        .map(|_| draw_sample(&mut rng, spec, &prototypes))
        .collect();
    let test = (0..spec.n_test)
        .map(|_| draw_sample(&mut rng, spec, &prototypes))
        .collect();
    Ok(Dataset {
        prototypes,
        train,
        test,
    })
}

/// One JSON object per line: `{"y":[...],"x":[...],"regions":[[...],...]}`.
pub fn save_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in samples {
        let rec = SampleRecord {
            y: s.y.clone(),
            x: s.x.clone(),
            regions: s.regions.row_iter().map(<[f64]>::to_vec).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples: Vec<Sample> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.y.iter().any(|&v| v > 1) {
            return Err(err("labels must be 0 or 1".into()));
        }
        let regions = Tensor::from_rows(&rec.regions).map_err(|e| err(e.to_string()))?;
        if regions.rows() == 0 || regions.cols() != rec.x.len() {
            return Err(err(format!(
                "regions {:?} do not match feature length {}",
                regions.shape(),
                rec.x.len()
            )));
        }
        if let Some(first) = samples.first() {
            if first.y.len() != rec.y.len() || first.regions.shape() != regions.shape() {
                return Err(err(format!(
                    "sample shape (C={}, regions {:?}) differs from line 1 (C={}, regions {:?})",
                    rec.y.len(),
                    regions.shape(),
                    first.y.len(),
                    first.regions.shape()
                )));
            }
        }
        samples.push(Sample {
            x: rec.x,
            regions,
            y: rec.y,
        });
    }
    Ok(samples)
}

/// Seeded C x d_e label embeddings, uniform in [-1, 1].
pub fn make_embeddings(num_labels: usize, dim: usize, seed: u64) -> Result<Tensor> {
    if dim == 0 || num_labels == 0 {
        return Err(Error::invalid("embeddings need C >= 1 and d_e >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..num_labels * dim)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect();
    Tensor::new(num_labels, dim, data)
}

/// Reads a headerless CSV of C rows with d_e reals each.
pub fn load_embeddings(path: &Path, num_labels: usize, dim: usize) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if rec.len() != dim {
            return Err(err(format!("expected {dim} columns, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("{f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.len() != num_labels {
        return Err(Error::invalid(format!(
            "{}: expected {num_labels} embedding rows, found {}",
            path.display(),
            rows.len()
        )));
    }
    Tensor::from_rows(&rows)
}
