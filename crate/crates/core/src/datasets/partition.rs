//! Label-skewed assignment of training examples to clients.
//!
//! Clients are split into `G` equal groups. An example with label `l` goes to
//! its home group `l mod G` with probability `q`, otherwise to one of the
//! other `G - 1` groups uniformly; inside the chosen group it lands on a
//! uniformly random client. `q = 1/G` is IID, `q = 1` gives each group a
//! single label.

use std::fmt::Write as _;

use rand::Rng as _;
use sha2::{Digest, Sha256};

use super::{hex_digest, Dataset};
use crate::rng::rng_from;
use crate::{Error, Result};

/// Extra seeds tried (`seed + 1`, `seed + 2`, ...) when some client ends up empty.
pub const MAX_PARTITION_RETRIES: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub n: usize,
    /// Number of client groups; `None` means one group per label.
    pub groups: Option<usize>,
    pub q: f64,
    pub seed: u64,
}

impl PartitionConfig {
    pub fn groups_for(&self, num_labels: usize) -> usize {
        self.groups.unwrap_or(num_labels)
    }

    fn validate(&self, num_labels: usize) -> Result<usize> {
        let g = self.groups_for(num_labels);
        if g == 0 || self.n < g {
            return Err(Error::config(format!("need n >= G >= 1, got n = {}, G = {g}", self.n)));
        }
        if !self.n.is_multiple_of(g) {
            return Err(Error::config(format!("n = {} is not divisible by G = {g}", self.n)));
        }
        let lower = 1.0 / g as f64;
        if !(self.q >= lower - 1e-12 && self.q <= 1.0) {
            return Err(Error::config(format!("q = {} outside [1/G, 1] = [{lower}, 1]", self.q)));
        }
        Ok(g)
    }
}

/// The per-client local datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientPartition {
    pub client_data: Vec<Dataset>,
    /// Client of each source example, by source index.
    pub assignment: Vec<usize>,
    pub config: PartitionConfig,
    pub groups: usize,
    /// Seed that produced the assignment (after empty-client retries).
    pub effective_seed: u64,
    pub source_fingerprint: String,
}

impl ClientPartition {
    pub fn n(&self) -> usize {
        self.client_data.len()
    }

    /// Wraps already-separated client datasets, e.g. one per HAR user.
    pub fn from_clients(clients: Vec<Dataset>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::config("no clients"));
        }
        if let Some(i) = clients.iter().position(Dataset::is_empty) {
            return Err(Error::config(format!("client {i} has no data")));
        }
        let mut h = Sha256::new();
        let mut assignment = Vec::new();
        for (c, d) in clients.iter().enumerate() {
            d.hash_into(&mut h);
            assignment.extend(std::iter::repeat_n(c, d.len()));
        }
        let n = clients.len();
        Ok(Self {
            client_data: clients,
            assignment,
            config: PartitionConfig {
                n,
                groups: Some(n),
                q: 1.0,
                seed: 0,
            },
            groups: n,
            effective_seed: 0,
            source_fingerprint: hex_digest(h),
        })
    }

    /// Text export: a `n=.. G=.. q=.. seed=..` header, then `client_id,label,example_index`
    /// for every source example in index order.
    pub fn to_export_string(&self) -> String {
        let mut out = format!(
            "n={} G={} q={} seed={}\n",
            self.n(),
            self.groups,
            self.config.q,
            self.effective_seed
        );
        let mut labels = vec![0usize; self.assignment.len()];
        let mut cursor = vec![0usize; self.n()];
        for (idx, &c) in self.assignment.iter().enumerate() {
            labels[idx] = self.client_data[c].examples()[cursor[c]].label;
            cursor[c] += 1;
        }
        for (idx, (&c, &l)) in self.assignment.iter().zip(&labels).enumerate() {
            let _ = writeln!(out, "{c},{l},{idx}");
        }
        out
    }
}

fn assign(labels: &[usize], n: usize, g: usize, q: f64, seed: u64) -> Vec<usize> {
    let per_group = n / g;
    let mut rng = rng_from(seed);
    labels
        .iter()
        .map(|&label| {
            let home = label % g;
            let group = if g == 1 || rng.random::<f64>() < q {
                home
            } else {
                let other = rng.random_range(0..g - 1);
                if other >= home {
                    other + 1
                } else {
                    other
                }
            };
            group * per_group + rng.random_range(0..per_group)
        })
        .collect()
}

/// Splits `dataset` across `config.n` clients. Retries with `seed + 1`, ... up to
/// [`MAX_PARTITION_RETRIES`] times if a client would be left empty.
pub fn partition_noniid(dataset: &Dataset, config: &PartitionConfig) -> Result<ClientPartition> {
    let g = config.validate(dataset.num_labels())?;
    if dataset.len() < config.n {
        return Err(Error::config(format!(
            "{} examples cannot fill {} clients",
            dataset.len(),
            config.n
        )));
    }
    let labels = dataset.labels();
    for attempt in 0..=MAX_PARTITION_RETRIES {
        let seed = config.seed.wrapping_add(attempt);
        let assignment = assign(&labels, config.n, g, config.q, seed);
        let mut members = vec![Vec::new(); config.n];
        for (idx, &c) in assignment.iter().enumerate() {
            members[c].push(idx);
        }
        if members.iter().any(Vec::is_empty) {
            continue;
        }
        let mut h = Sha256::new();
        dataset.hash_into(&mut h);
        h.update(format!("n={} G={g} q={} seed={}", config.n, config.q, config.seed).as_bytes());
        return Ok(ClientPartition {
            client_data: members.into_iter().map(|m| dataset.select(m)).collect(),
            assignment,
            config: config.clone(),
            groups: g,
            effective_seed: seed,
            source_fingerprint: hex_digest(h),
        });
    }
    Err(Error::config(format!(
        "some client stayed empty after {} partition attempts",
        MAX_PARTITION_RETRIES + 1
    )))
}
