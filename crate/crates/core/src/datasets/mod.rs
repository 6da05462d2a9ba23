//! Datasets and the non-IID client partitioner.

mod har;
mod mnist;
mod partition;
mod synth;

pub use har::{load_har, split_har_users, HarSplit, HAR_FEATURES, HAR_LABELS, HAR_USERS};
pub use mnist::{load_mnist_idx, load_mnist_idx_limit, MNIST_LABELS};
pub use partition::{partition_noniid, ClientPartition, PartitionConfig, MAX_PARTITION_RETRIES};
pub use synth::{synth_blobs, BlobSpec};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// A list of examples sharing a feature dimension and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_labels: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Validates that every example has `feature_dim` features and a label below `num_labels`.
    pub fn new(examples: Vec<Example>, num_labels: usize, feature_dim: usize) -> Result<Self> {
        if num_labels == 0 {
            return Err(Error::config("dataset needs at least one label"));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.features.len() != feature_dim {
                return Err(Error::shape(format!(
                    "example {i} has {} features, expected {feature_dim}",
                    ex.features.len()
                )));
            }
            if ex.label >= num_labels {
                return Err(Error::format(format!(
                    "example {i} has label {} outside [0, {num_labels})",
                    ex.label
                )));
            }
        }
        Ok(Self {
            examples,
            num_labels,
            feature_dim,
        })
    }

    pub fn empty(num_labels: usize, feature_dim: usize) -> Self {
        Self {
            examples: Vec::new(),
            num_labels,
            feature_dim,
        }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// First `count` examples (or all of them if fewer).
    pub fn head(&self, count: usize) -> Dataset {
        self.select(0..count.min(self.len()))
    }

    /// Examples at the given indices, in order.
    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> Dataset {
        Dataset {
            examples: indices.into_iter().map(|i| self.examples[i].clone()).collect(),
            num_labels: self.num_labels,
            feature_dim: self.feature_dim,
        }
    }

    /// Same examples with labels rewritten through `map`.
    pub fn map_labels(&self, map: impl Fn(usize) -> usize) -> Result<Dataset> {
        let examples = self
            .examples
            .iter()
            .map(|e| Example::new(e.features.clone(), map(e.label)))
            .collect();
        Dataset::new(examples, self.num_labels, self.feature_dim)
    }

    pub(crate) fn push(&mut self, example: Example) {
        debug_assert_eq!(example.features.len(), self.feature_dim);
        debug_assert!(example.label < self.num_labels);
        self.examples.push(example);
    }

    /// Concatenation of several datasets with identical shape.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Dataset> {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::config("cannot concatenate zero datasets"))?;
        let mut out = first.clone();
        for d in iter {
            if d.feature_dim != out.feature_dim || d.num_labels != out.num_labels {
                return Err(Error::shape("concatenating datasets of different shape"));
            }
            out.examples.extend(d.examples.iter().cloned());
        }
        Ok(out)
    }

    /// SHA-256 over shape, labels and the exact bit patterns of every feature.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        hex_digest(h)
    }

    pub(crate) fn hash_into(&self, h: &mut Sha256) {
        h.update((self.num_labels as u64).to_le_bytes());
        h.update((self.feature_dim as u64).to_le_bytes());
        h.update((self.examples.len() as u64).to_le_bytes());
        for ex in &self.examples {
            h.update((ex.label as u64).to_le_bytes());
            for f in &ex.features {
                h.update(f.to_bits().to_le_bytes());
            }
        }
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        let bad_dim = vec![Example::new(vec![0.0; 3], 0)];
        assert!(matches!(Dataset::new(bad_dim, 2, 2), Err(Error::Shape(_))));
        let bad_label = vec![Example::new(vec![0.0; 2], 2)];
        assert!(matches!(Dataset::new(bad_label, 2, 2), Err(Error::Format(_))));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = Dataset::new(vec![Example::new(vec![0.5], 0)], 2, 1).unwrap();
        let b = Dataset::new(vec![Example::new(vec![0.5], 1)], 2, 1).unwrap();
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
