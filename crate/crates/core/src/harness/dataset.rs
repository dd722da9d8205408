//! Seeded synthetic classification data.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    GaussianBlobs,
    TwoSpirals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub generator: Generator,
    pub n_samples: usize,
    pub classes: usize,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    /// Feature dimension for blobs; spirals are always 2-D.
    pub input_dim: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            generator: Generator::GaussianBlobs,
            n_samples: 2000,
            classes: 4,
            noise: 1.0,
            seed: 0,
            input_dim: 16,
        }
    }
}

impl DatasetSpec {
    pub fn feature_dim(&self) -> usize {
        match self.generator {
            Generator::GaussianBlobs => self.input_dim,
            Generator::TwoSpirals => 2,
        }
    }
}

/// Labelled samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

/// Disjoint search-time halves: ω trains on `train`, α on `val`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub val: Dataset,
}

const CENTER_RANGE: f64 = 4.0;

pub fn generate_dataset(spec: &DatasetSpec) -> Result<SplitDataset, HarnessError> {
    if spec.classes < 2 {
        return Err(HarnessError::Config(
            "dataset needs at least 2 classes".into(),
        ));
    }
    if spec.n_samples < 2 * spec.classes {
        return Err(HarnessError::Config(format!(
            "n_samples ({}) must be at least 2 * classes ({})",
            spec.n_samples, spec.classes
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(HarnessError::Config(format!(
            "noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.classes).collect();
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { spec.noise * rng.sample::<f64, _>(StandardNormal) };

    let features: Vec<Vec<f64>> = match spec.generator {
        Generator::GaussianBlobs => {
            if spec.input_dim == 0 {
                return Err(HarnessError::Config("input_dim must be >= 1".into()));
            }
            let centers: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| {
                    (0..spec.input_dim)
                        .map(|_| rng.random_range(-CENTER_RANGE..CENTER_RANGE))
                        .collect()
                })
                .collect();
            labels
                .iter()
                .map(|&y| centers[y].iter().map(|c| c + gauss(&mut rng)).collect())
                .collect()
        }
        Generator::TwoSpirals => {
            if spec.classes != 2 {
                return Err(HarnessError::Config(
                    "two_spirals produces exactly 2 classes".into(),
                ));
            }
            labels
                .iter()
                .map(|&y| {
                    let t = 0.25 * PI + rng.random::<f64>().sqrt() * 2.75 * PI;
                    let phase = y as f64 * PI;
                    vec![
                        t * (t + phase).cos() + gauss(&mut rng),
                        t * (t + phase).sin() + gauss(&mut rng),
                    ]
                })
                .collect()
        }
    };

    // stratified 50/50 split over a seeded shuffle
    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    order.shuffle(&mut rng);
    let mut seen = vec![0usize; spec.classes];
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for i in order {
        let y = labels[i];
        if seen[y].is_multiple_of(2) {
            train.push(i);
        } else {
            val.push(i);
        }
        seen[y] += 1;
    }
    let pick = |idx: &[usize]| Dataset {
        features: idx.iter().map(|&i| features[i].clone()).collect(),
        labels: idx.iter().map(|&i| labels[i]).collect(),
        classes: spec.classes,
    };
    Ok(SplitDataset {
        train: pick(&train),
        val: pick(&val),
    })
}
