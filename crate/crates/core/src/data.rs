//! Two-orientation synthetic datasets and line-delimited record files.
//!
//! Every generated sample carries two labelings: `default`, the split the
//! data favours without guidance, and `personalized`, the alternative an
//! oracle steers toward.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

pub const DEFAULT_ORIENTATION: &str = "default";
pub const PERSONALIZED_ORIENTATION: &str = "personalized";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub x: Vec<f64>,
    pub labels: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_ref: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    records: Vec<DatasetRecord>,
    dim: usize,
}

impl Dataset {
    /// Checks equal dimensionality, unique ids and complete labelings.
    /// Indices in error messages are 1-based record numbers.
    pub fn from_records(records: Vec<DatasetRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(Error::Record {
                line: 1,
                message: "field x is empty".into(),
            });
        }
        let orientations: Vec<String> = first.labels.keys().cloned().collect();
        let mut ids = HashSet::with_capacity(records.len());
        for (idx, r) in records.iter().enumerate() {
            let line = idx + 1;
            if r.x.len() != dim {
                return Err(Error::Record {
                    line,
                    message: format!("field x has {} values, expected {dim}", r.x.len()),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Record {
                    line,
                    message: "field x has a non-finite value".into(),
                });
            }
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Record {
                    line,
                    message: format!("duplicate id {:?}", r.id),
                });
            }
            for o in &orientations {
                if !r.labels.contains_key(o) {
                    return Err(Error::Record {
                        line,
                        message: format!("field labels.{o} is missing"),
                    });
                }
            }
            if r.labels.len() != orientations.len() {
                return Err(Error::Record {
                    line,
                    message: "field labels declares an orientation the first record lacks".into(),
                });
            }
        }
        Ok(Self { records, dim })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn features(&self) -> Matrix {
        let data = self.records.iter().flat_map(|r| r.x.iter().copied()).collect();
        Matrix::from_vec(self.records.len(), self.dim, data).expect("validated dimensions")
    }

    pub fn orientations(&self) -> Vec<String> {
        self.records[0].labels.keys().cloned().collect()
    }

    pub fn labels(&self, orientation: &str) -> Result<Vec<usize>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.labels.get(orientation).copied().ok_or_else(|| Error::MissingLabel {
                    sample: i,
                    orientation: orientation.to_string(),
                })
            })
            .collect()
    }

    /// Number of distinct labels under an orientation.
    pub fn cluster_count(&self, orientation: &str) -> Result<usize> {
        let mut l = self.labels(orientation)?;
        l.sort_unstable();
        l.dedup();
        Ok(l.len())
    }

    /// Sub-dataset with the listed rows, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::from_records(idx.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::from_records(records)
    }
}

pub fn save_records(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    dataset.write(&mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Dataset> {
    Dataset::read(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Seeded split into train and held-out indices, each sorted.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    let cut = ((n as f64) * train_fraction).round() as usize;
    let mut train = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Keeps the split stream apart from generator and trainer streams that
/// share the same user seed.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    pub dim: usize,
    pub default_gap: f64,
    pub personalized_gap: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n: 800,
            dim: 8,
            default_gap: 8.0,
            personalized_gap: 4.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    fn validate_common(&self, min_dim: usize) -> Result<()> {
        if self.n < 4 {
            return Err(Error::InvalidConfig(format!("need at least 4 samples, got {}", self.n)));
        }
        if self.dim < min_dim {
            return Err(Error::InvalidConfig(format!(
                "dim must be at least {min_dim}, got {}",
                self.dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// The default split must be the wider one.
    pub fn validate_cross(&self) -> Result<()> {
        self.validate_common(2)?;
        if !(self.default_gap > self.personalized_gap && self.personalized_gap > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need default_gap > personalized_gap > 0, got {} and {}",
                self.default_gap, self.personalized_gap
            )));
        }
        Ok(())
    }

    pub fn validate_bundle(&self) -> Result<()> {
        self.validate_common(2)?;
        if !(self.default_gap >= self.personalized_gap && self.personalized_gap >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need default_gap >= personalized_gap >= 0, got {} and {}",
                self.default_gap, self.personalized_gap
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Seeded random orthogonal matrix (Gram-Schmidt on Gaussian rows).
pub fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let nv = dot(&v, &v).sqrt();
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    Matrix::from_rows(&basis).expect("square basis")
}

fn record(i: usize, x: Vec<f64>, default: usize, personalized: usize) -> DatasetRecord {
    DatasetRecord {
        id: format!("s{i:05}"),
        x,
        labels: BTreeMap::from([
            (DEFAULT_ORIENTATION.to_string(), default),
            (PERSONALIZED_ORIENTATION.to_string(), personalized),
        ]),
        payload_ref: None,
    }
}

/// Four Gaussian blobs at `(±default_gap/2, ±personalized_gap/2)` padded
/// with noise dimensions and rotated. Sample `i` sits in blob `i % 4`.
pub fn gen_gauss_cross(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate_cross()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rotation = random_rotation(config.dim, &mut rng);
    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let blob = i % 4;
        let (d, p) = (blob & 1, blob >> 1);
        let sign = |b: usize| if b == 1 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = (0..config.dim)
            .map(|_| config.noise_sigma * gaussian(&mut rng))
            .collect();
        v[0] += sign(d) * config.default_gap / 2.0;
        v[1] += sign(p) * config.personalized_gap / 2.0;
        let x = (0..config.dim).map(|r| dot(rotation.row(r), &v)).collect();
        records.push(record(i, x, d, p));
    }
    Dataset::from_records(records)
}

/// `[u_A ; u_B ; noise]`: attribute `A` (default) and attribute `B`
/// (personalized) each own a block of `dim / 4` coordinates (at least one);
/// the class offset is `±gap/2` along a seeded unit direction of the block.
/// Labels are `i % 2` for `A` and `(i / 2) % 2` for `B`.
pub fn gen_feature_bundle(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate_bundle()?;
    let block = (config.dim / 4).max(1);
    if 2 * block > config.dim {
        return Err(Error::InvalidConfig(format!(
            "dim {} too small for two blocks",
            config.dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..block).map(|_| gaussian(rng)).collect();
        let n = dot(&v, &v).sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let dir_a = unit(&mut rng);
    let dir_b = unit(&mut rng);
    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let (a, b) = (i % 2, (i / 2) % 2);
        let sign = |c: usize| if c == 1 { 1.0 } else { -1.0 };
        let mut x: Vec<f64> = (0..config.dim)
            .map(|_| config.noise_sigma * gaussian(&mut rng))
            .collect();
        for k in 0..block {
            x[k] += sign(a) * config.default_gap / 2.0 * dir_a[k];
            x[block + k] += sign(b) * config.personalized_gap / 2.0 * dir_b[k];
        }
        records.push(record(i, x, a, b));
    }
    Dataset::from_records(records)
}
