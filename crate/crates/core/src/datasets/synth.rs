//! Gaussian blobs: fast, deterministic data for certificate experiments.

use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};

use super::{Dataset, Example};
use crate::rng::rng_from;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub per_label_count: usize,
    pub centroid_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// Centroid of `label`: a scaled unit vector `e_label` when there are at
    /// least as many features as labels, otherwise evenly spaced points on a
    /// circle in the first two coordinates (or a line when `F = 1`).
    pub fn centroid(&self, label: usize) -> Vec<f64> {
        let (l, f) = (self.num_labels, self.feature_dim);
        let mut c = vec![0.0; f];
        if l <= f {
            c[label] = self.centroid_scale;
        } else if f == 1 {
            c[0] = self.centroid_scale * label as f64 / (l - 1) as f64;
        } else {
            let angle = TAU * label as f64 / l as f64;
            c[0] = self.centroid_scale * angle.cos();
            c[1] = self.centroid_scale * angle.sin();
        }
        c
    }
}

/// `per_label_count` samples around each label's centroid, grouped by label.
pub fn synth_blobs(spec: &BlobSpec) -> Result<Dataset> {
    if spec.num_labels < 2 || spec.feature_dim < 1 {
        return Err(Error::config("blobs need L >= 2 and F >= 1"));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::config("noise sigma must be finite and non-negative"));
    }
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(format!("noise sigma: {e}")))?;
    let mut rng = rng_from(spec.seed);
    let mut examples = Vec::with_capacity(spec.num_labels * spec.per_label_count);
    for label in 0..spec.num_labels {
        let centre = spec.centroid(label);
        for _ in 0..spec.per_label_count {
            let features = centre
                .iter()
                .map(|&c| {
                    if spec.noise_sigma == 0.0 {
                        c
                    } else {
                        c + noise.sample(&mut rng)
                    }
                })
                .collect();
            examples.push(Example::new(features, label));
        }
    }
    Dataset::new(examples, spec.num_labels, spec.feature_dim)
}
