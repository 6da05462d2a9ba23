//! Ensemble federated learning with certified security levels.
//!
//! A base federated learning algorithm (FedAvg here) is run on many random
//! `k`-client subsamples of the `n` clients. The resulting global models
//! vote on each test example, and the vote margin yields a certified
//! security level: the number of malicious clients that provably cannot
//! change the ensemble's prediction.
//!
//! Modules, bottom-up:
//!
//! * [`datasets`]: MNIST/HAR/synthetic loaders and the non-IID client partitioner.
//! * [`model`]: softmax MLP with hand-written backprop and SGD.
//! * [`fedlearn`]: the base algorithm interface and FedAvg.
//! * [`ensemble`]: subsamples, ensemble training, label probabilities and voting.
//! * [`certify`]: exact and bound-based certificates, Clopper-Pearson, certified accuracy.
//! * [`adversary`]: attacks, the brute-force worst-case oracle and tightness constructions.

pub mod adversary;
pub mod certify;
pub mod datasets;
pub mod ensemble;
mod error;
pub mod fedlearn;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
