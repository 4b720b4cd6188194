//! Synthetic classification data, CSV ingestion, client partitioning and minibatch schedules.

mod csvio;
mod partition;
mod schedule;

pub use csvio::{load_csv, save_csv};
pub use partition::{partition, Partition, PartitionMode};
pub use schedule::{BatchSize, MinibatchSchedule};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::paramspace::{DenseMatrix, SeededStream};

/// Labelled examples with labels in `0..n_classes`, every class present.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Dimension {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if labels.len() < n_classes || n_classes == 0 {
            return Err(Error::usage("dataset needs at least one example per class"));
        }
        let mut seen = vec![false; n_classes];
        for &y in &labels {
            *seen
                .get_mut(y)
                .ok_or_else(|| Error::usage(format!("label {y} outside 0..{n_classes}")))? = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::usage(format!("class {missing} has no examples")));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Feature rows and labels for a subset of example indices.
    pub fn select(&self, idx: &[usize]) -> (DenseMatrix, Vec<usize>) {
        (
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian class clusters with identity covariance.
///
/// Class means are drawn at random and rescaled so the closest pair is
/// exactly `sep` apart. Examples are ordered class by class.
pub fn gen_blobs(
    n_classes: usize,
    per_class: usize,
    input_dim: usize,
    sep: f64,
    stream: &SeededStream,
) -> Result<Dataset> {
    if n_classes == 0 || per_class == 0 || input_dim == 0 || !(sep > 0.0) {
        return Err(Error::usage("gen_blobs needs positive sizes and sep > 0"));
    }
    let mut rng = stream.derive("means", 0).rng();
    let mut means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut closest = f64::INFINITY;
    for i in 0..n_classes {
        for j in i + 1..n_classes {
            closest = closest.min(euclid(&means[i], &means[j]));
        }
    }
    if closest.is_finite() && closest > 0.0 {
        let s = sep / closest;
        for m in means.iter_mut() {
            for v in m.iter_mut() {
                *v *= s;
            }
        }
    }
    let mut rng = stream.derive("points", 0).rng();
    let mut data = Vec::with_capacity(n_classes * per_class * input_dim);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    Dataset::new(DenseMatrix::new(labels.len(), input_dim, data)?, labels, n_classes)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Stratified split holding out `test_fraction` of every class.
///
/// Each class keeps at least one training and one test example, so every
/// class needs two or more examples.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, stream: &SeededStream) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::usage("test_fraction must lie strictly between 0 and 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::usage(format!("class {c} has fewer than two examples; cannot split")));
        }
        idx.shuffle(&mut stream.derive("class", c as u64).rng());
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let (tf, tl) = ds.select(&train);
    let (sf, sl) = ds.select(&test);
    Ok((Dataset::new(tf, tl, ds.n_classes)?, Dataset::new(sf, sl, ds.n_classes)?))
}
