//! Binary classification datasets and their split across users.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{DataKind, DataSection};
use super::SimError;
use crate::rng::{self, Stream};

/// Row-major feature matrix with 0/1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    features: usize,
    x: Vec<f64>,
    y: Vec<u8>,
}

impl Samples {
    pub fn new(features: usize, x: Vec<f64>, y: Vec<u8>) -> Result<Self, SimError> {
        if features == 0 || x.len() != features * y.len() {
            return Err(SimError::Data(format!(
                "{} values do not form {} rows of {} features",
                x.len(),
                y.len(),
                features
            )));
        }
        if y.iter().any(|&l| l > 1) {
            return Err(SimError::Data("labels must be 0 or 1".into()));
        }
        Ok(Self { features, x, y })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.y[i]
    }

    /// Two spherical unit-variance Gaussians whose means sit at
    /// `+-separation / 2` along the all-ones direction. Classes are balanced
    /// in expectation.
    pub fn gaussian_mixture<R: Rng + ?Sized>(n: usize, features: usize, separation: f64, rng: &mut R) -> Self {
        let offset = separation / 2.0 / (features as f64).sqrt();
        let mut x = Vec::with_capacity(n * features);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let label = rng.gen_range(0..2u8);
            let sign = if label == 1 { 1.0 } else { -1.0 };
            for _ in 0..features {
                let z: f64 = rng.sample(StandardNormal);
                x.push(sign * offset + z);
            }
            y.push(label);
        }
        Self { features, x, y }
    }

    /// CSV with a header row; the first column is the 0/1 label and the
    /// remaining columns are features.
    pub fn from_csv(path: &Path) -> Result<Self, SimError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut features = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let width = record.len().saturating_sub(1);
            if width == 0 || *features.get_or_insert(width) != width {
                return Err(SimError::Data(format!("{}: row {} has the wrong width", path.display(), line + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| SimError::Data(format!("{}: row {}: bad number `{s}`", path.display(), line + 1)))
            };
            let label = parse(&record[0])?;
            if label != 0.0 && label != 1.0 {
                return Err(SimError::Data(format!("{}: row {}: label must be 0 or 1", path.display(), line + 1)));
            }
            y.push(label as u8);
            for field in record.iter().skip(1) {
                x.push(parse(field)?);
            }
        }
        let Some(features) = features else {
            return Err(SimError::Data(format!("{}: no rows", path.display())));
        };
        Self::new(features, x, y)
    }
}

/// Training and test samples plus each user's share of the training rows.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Samples,
    pub test: Samples,
    pub partitions: Vec<Vec<usize>>,
}

/// IID split: shuffle, then deal contiguous chunks whose sizes differ by at most one.
pub fn partition_iid<R: Rng + ?Sized>(n_samples: usize, n_users: usize, rng: &mut R) -> Result<Vec<Vec<usize>>, SimError> {
    if n_users == 0 || n_samples < n_users {
        return Err(SimError::Data(format!("cannot split {n_samples} samples across {n_users} users")));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(rng);
    let base = n_samples / n_users;
    let extra = n_samples % n_users;
    let mut out = Vec::with_capacity(n_users);
    let mut start = 0;
    for u in 0..n_users {
        let len = base + usize::from(u < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

pub fn load(section: &DataSection, users: usize, seed: u64) -> Result<Dataset, SimError> {
    let mut rng = rng::stream(seed, Stream::Data, &[]);
    let (train, test) = match section.kind {
        DataKind::GaussianMixture => {
            let train = Samples::gaussian_mixture(section.train_samples, section.features, section.separation, &mut rng);
            let test = Samples::gaussian_mixture(section.test_samples, section.features, section.separation, &mut rng);
            (train, test)
        }
        DataKind::Csv => {
            let missing = || SimError::Config("csv data needs train_path and test_path".into());
            let train = Samples::from_csv(section.train_path.as_deref().ok_or_else(missing)?)?;
            let test = Samples::from_csv(section.test_path.as_deref().ok_or_else(missing)?)?;
            if train.features() != test.features() {
                return Err(SimError::Data("train and test feature counts differ".into()));
            }
            (train, test)
        }
    };
    let partitions = partition_iid(train.len(), users, &mut rng)?;
    Ok(Dataset { train, test, partitions })
}
