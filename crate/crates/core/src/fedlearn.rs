//! The base federated learning algorithm and FedAvg.
//!
//! Each round every participating client copies the global model, runs
//! `local_iter` SGD steps on batches drawn from its own data, and reports the
//! difference between its local model and the global one. The server moves
//! the global model by the average of those differences weighted by local
//! dataset size.

use std::borrow::Cow;

use rand::Rng as _;

use crate::datasets::Dataset;
use crate::model::{init_params, loss_and_grad, ModelConfig, ModelParams};
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub global_iter: usize,
    pub local_iter: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub train_seed: u64,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_iter == 0 || self.local_iter == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "global_iter, local_iter and batch_size must be at least 1",
            ));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be > 0", self.eta)));
        }
        Ok(())
    }

    pub fn with_seed(&self, train_seed: u64) -> Self {
        Self {
            train_seed,
            ..self.clone()
        }
    }
}

/// A client taking part in training: its global index and local data.
#[derive(Debug, Clone, Copy)]
pub struct ClientRef<'a> {
    pub id: usize,
    pub data: &'a Dataset,
}

/// Learns one global model from a set of clients. Implementations must be
/// deterministic functions of their arguments.
pub trait BaseAlgorithm: Sync {
    fn train(&self, clients: &[ClientRef<'_>], fed: &FedConfig, model: &ModelConfig) -> Result<ModelParams>;
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub delta: ModelParams,
    /// Local dataset size.
    pub weight: usize,
}

/// Per-client deviation from honest behaviour. Only clients for which
/// [`Tamper::is_malicious`] holds are affected.
pub trait Tamper: Sync {
    fn is_malicious(&self, client_id: usize) -> bool;

    /// Replaces the client's local training data before training starts.
    fn local_data<'a>(&self, data: &'a Dataset) -> Result<Cow<'a, Dataset>> {
        Ok(Cow::Borrowed(data))
    }

    /// Rewrites the update sent to the server each round.
    fn update(&self, _global: &ModelParams, honest: ClientUpdate) -> Result<ClientUpdate> {
        Ok(honest)
    }
}

/// Seed of client `client_id`'s batch stream in `round`.
pub fn round_seed(train_seed: u64, round: usize, client_id: usize) -> u64 {
    derive_seed(train_seed, &[round as u64, client_id as u64])
}

/// `local_iter` SGD steps from `global` on batches of `min(batch_size, |data|)`
/// examples drawn uniformly with replacement.
pub fn local_update(global: &ModelParams, data: &Dataset, fed: &FedConfig, round_seed: u64) -> Result<ClientUpdate> {
    if data.is_empty() {
        return Err(Error::config("local update on an empty dataset"));
    }
    let mut rng = rng_from(round_seed);
    let batch_size = fed.batch_size.min(data.len());
    let examples = data.examples();
    let mut local = global.clone();
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..fed.local_iter {
        batch.clear();
        for _ in 0..batch_size {
            let ex = &examples[rng.random_range(0..examples.len())];
            batch.push((ex.features.as_slice(), ex.label));
        }
        let (_, grad) = loss_and_grad(&local, &batch)?;
        local.add_scaled(-fed.eta, &grad)?;
    }
    Ok(ClientUpdate {
        delta: local.difference(global)?,
        weight: data.len(),
    })
}

/// `global + sum_i (weight_i / sum weight) * delta_i`, summed in slice order.
pub fn aggregate(global: &ModelParams, updates: &[ClientUpdate]) -> Result<ModelParams> {
    let total: usize = updates.iter().map(|u| u.weight).sum();
    if total == 0 {
        return Err(Error::config("no client weight to aggregate"));
    }
    let mut next = global.clone();
    for u in updates {
        next.add_scaled(u.weight as f64 / total as f64, &u.delta)?;
    }
    Ok(next)
}

/// Federated averaging with every client participating in every round.
///
/// Honest training that produces non-finite parameters is a
/// [`Error::Numeric`]. Under a [`Tamper`] the adversary may push the model to
/// overflow on purpose; training then stops and returns the last finite
/// global model.
#[derive(Debug, Clone, Copy, Default)]
pub struct FedAvg;

impl FedAvg {
    pub fn train_tampered(
        &self,
        clients: &[ClientRef<'_>],
        fed: &FedConfig,
        model: &ModelConfig,
        tamper: Option<&dyn Tamper>,
    ) -> Result<ModelParams> {
        fed.validate()?;
        let malicious = |id: usize| tamper.is_some_and(|t| t.is_malicious(id));
        let mut local_data: Vec<(usize, Cow<'_, Dataset>)> = Vec::with_capacity(clients.len());
        for c in clients {
            let data = match tamper {
                Some(t) if malicious(c.id) => t.local_data(c.data)?,
                _ => Cow::Borrowed(c.data),
            };
            if !data.is_empty() {
                local_data.push((c.id, data));
            }
        }
        if local_data.is_empty() {
            return Err(Error::config("all client datasets are empty"));
        }
        let mut global = init_params(model)?;
        for round in 0..fed.global_iter {
            let one = |(id, data): &(usize, Cow<'_, Dataset>)| -> Result<ClientUpdate> {
                let honest = local_update(&global, data, fed, round_seed(fed.train_seed, round, *id))?;
                match tamper {
                    Some(t) if malicious(*id) => t.update(&global, honest),
                    _ => Ok(honest),
                }
            };
            #[cfg(feature = "parallel")]
            let updates: Result<Vec<ClientUpdate>> = {
                use rayon::prelude::*;
                local_data.par_iter().map(one).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let updates: Result<Vec<ClientUpdate>> = local_data.iter().map(one).collect();
            let next = match updates {
                Ok(updates) => aggregate(&global, &updates)?,
                // a tampered run that blows up keeps its last finite model
                Err(Error::Numeric(_)) if tamper.is_some() => break,
                Err(e) => return Err(e),
            };
            if !next.is_finite() {
                if tamper.is_some() {
                    break;
                }
                return Err(Error::numeric(format!("global model diverged in round {round}")));
            }
            global = next;
        }
        Ok(global)
    }
}

impl BaseAlgorithm for FedAvg {
    fn train(&self, clients: &[ClientRef<'_>], fed: &FedConfig, model: &ModelConfig) -> Result<ModelParams> {
        self.train_tampered(clients, fed, model, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synth_blobs, BlobSpec, Example};
    use crate::model::{accuracy, sgd_step};

    fn blobs(seed: u64) -> Dataset {
        synth_blobs(&BlobSpec {
            num_labels: 3,
            feature_dim: 3,
            per_label_count: 20,
            centroid_scale: 1.0,
            noise_sigma: 0.1,
            seed,
        })
        .unwrap()
    }

    fn fed(global_iter: usize, local_iter: usize) -> FedConfig {
        FedConfig {
            global_iter,
            local_iter,
            eta: 0.5,
            batch_size: 8,
            train_seed: 3,
        }
    }

    fn model() -> ModelConfig {
        ModelConfig::new(vec![3, 3], 1).unwrap()
    }

    #[test]
    fn single_client_single_step_is_plain_sgd() {
        let data = blobs(1);
        let cfg = fed(1, 1);
        let trained = FedAvg
            .train(&[ClientRef { id: 4, data: &data }], &cfg, &model())
            .unwrap();
        // replay the batch the client would draw
        let mut rng = rng_from(round_seed(cfg.train_seed, 0, 4));
        let batch: Vec<(&[f64], usize)> = (0..8)
            .map(|_| {
                let e = &data.examples()[rng.random_range(0..data.len())];
                (e.features.as_slice(), e.label)
            })
            .collect();
        let init = init_params(&model()).unwrap();
        let (_, g) = loss_and_grad(&init, &batch).unwrap();
        let expected = sgd_step(&init, &g, cfg.eta).unwrap();
        assert!(trained.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_rejected_but_zero_step_update_is_zero() {
        let data = blobs(2);
        let mut cfg = fed(1, 3);
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());
        let global = init_params(&model()).unwrap();
        let u = local_update(&global, &data, &cfg, 9).unwrap();
        assert!(u.delta.values().all(|v| v == 0.0));
        assert_eq!(u.weight, data.len());
    }

    #[test]
    fn local_update_unrolls_to_chained_steps() {
        let data = blobs(3);
        let cfg = fed(1, 2);
        let global = init_params(&model()).unwrap();
        let u = local_update(&global, &data, &cfg, 17).unwrap();
        let mut rng = rng_from(17);
        let mut w = global.clone();
        for _ in 0..2 {
            let batch: Vec<(&[f64], usize)> = (0..8)
                .map(|_| {
                    let e = &data.examples()[rng.random_range(0..data.len())];
                    (e.features.as_slice(), e.label)
                })
                .collect();
            let (_, g) = loss_and_grad(&w, &batch).unwrap();
            w = sgd_step(&w, &g, cfg.eta).unwrap();
        }
        assert!(u.delta.max_abs_diff(&w.difference(&global).unwrap()) < 1e-15);
        assert_eq!(local_update(&global, &data, &cfg, 17).unwrap(), u);
    }

    #[test]
    fn identical_clients_average_to_either() {
        let data = blobs(4);
        let cfg = fed(1, 2);
        let global = init_params(&model()).unwrap();
        let u = local_update(&global, &data, &cfg, 5).unwrap();
        let next = aggregate(&global, &[u.clone(), u.clone()]).unwrap();
        let mut expected = global.clone();
        expected.add_scaled(1.0, &u.delta).unwrap();
        assert!(next.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn weighted_mean_arithmetic() {
        let global = ModelParams::zeros(&[2, 2]);
        let mut d = global.clone();
        d.values_mut().enumerate().for_each(|(i, v)| *v = i as f64 + 1.0);
        let next = aggregate(
            &global,
            &[
                ClientUpdate {
                    delta: d.clone(),
                    weight: 1,
                },
                ClientUpdate {
                    delta: global.clone(),
                    weight: 3,
                },
            ],
        )
        .unwrap();
        assert!(next.max_abs_diff(&d.scaled(0.25)) < 1e-15);
    }

    #[test]
    fn aggregation_is_affine_and_equal_weights_average() {
        let global = ModelParams::zeros(&[3, 2]);
        let deltas: Vec<ModelParams> = (0..4)
            .map(|k| {
                let mut d = global.clone();
                d.values_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = ((i * 7 + k * 3) % 5) as f64 - 2.0);
                d
            })
            .collect();
        let ups = |c: f64| -> Vec<ClientUpdate> {
            deltas
                .iter()
                .map(|d| ClientUpdate {
                    delta: d.scaled(c),
                    weight: 6,
                })
                .collect()
        };
        let base = aggregate(&global, &ups(1.0)).unwrap();
        let tripled = aggregate(&global, &ups(3.0)).unwrap();
        assert!(tripled.max_abs_diff(&base.scaled(3.0)) < 1e-12);
        let mut mean = global.clone();
        for d in &deltas {
            mean.add_scaled(0.25, d).unwrap();
        }
        assert!(base.max_abs_diff(&mean) <= 1e-12);
    }

    #[test]
    fn all_empty_clients_is_config_error() {
        let empty = Dataset::empty(3, 3);
        let err = FedAvg
            .train(&[ClientRef { id: 0, data: &empty }], &fed(1, 1), &model())
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn fedavg_learns_blobs_and_is_reproducible() {
        let parts: Vec<Dataset> = (0..3).map(|s| blobs(10 + s)).collect();
        let clients: Vec<ClientRef> = parts
            .iter()
            .enumerate()
            .map(|(id, data)| ClientRef { id, data })
            .collect();
        let cfg = fed(20, 5);
        let a = FedAvg.train(&clients, &cfg, &model()).unwrap();
        let b = FedAvg.train(&clients, &cfg, &model()).unwrap();
        assert_eq!(a, b);
        assert!(accuracy(&a, &blobs(99)).unwrap() > 0.95);
    }

    #[test]
    fn tamper_hooks_only_touch_malicious_clients() {
        struct Zero;
        impl Tamper for Zero {
            fn is_malicious(&self, id: usize) -> bool {
                id == 1
            }
            fn update(&self, g: &ModelParams, mut u: ClientUpdate) -> Result<ClientUpdate> {
                u.delta = g.zeros_like();
                Ok(u)
            }
        }
        let data = Dataset::new(vec![Example::new(vec![1.0, 0.0, 0.0], 0)], 3, 3).unwrap();
        let cfg = fed(1, 1);
        let alone = FedAvg
            .train_tampered(&[ClientRef { id: 1, data: &data }], &cfg, &model(), Some(&Zero))
            .unwrap();
        assert_eq!(alone, init_params(&model()).unwrap());
        let honest = FedAvg
            .train_tampered(&[ClientRef { id: 0, data: &data }], &cfg, &model(), Some(&Zero))
            .unwrap();
        assert_ne!(honest, alone);
    }
}
