//! Malicious clients: attack simulations, the brute-force worst-case oracle
//! and the tightness constructions.

mod oracle;
mod tightness;

pub use oracle::{
    exhaustive_survives, split_votes, survives, worst_case_safe_level, LookupBaseAlgorithm, MAX_ORACLE_CLIENTS,
};
pub use tightness::{
    build_tightness_instance, random_bound_pairs, tightness_grid, tightness_report_csv, verify_tightness,
    SubsampleSpacePartition, TightnessInstance, TightnessReport, Verdict,
};

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt;

use crate::datasets::{ClientPartition, Dataset};
use crate::ensemble::{ensemble_predict, label_probabilities, tie_seed, EnsembleJob, PredictionMatrix, Subsample};
use crate::fedlearn::{BaseAlgorithm, ClientRef, ClientUpdate, FedAvg, FedConfig, Tamper};
use crate::model::{ModelConfig, ModelParams};
use crate::rng::rng_at;
use crate::{Error, Result};

/// Indices of the clients the adversary controls.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct MaliciousSet(BTreeSet<usize>);

impl MaliciousSet {
    pub fn new(ids: impl IntoIterator<Item = usize>, n: usize) -> Result<Self> {
        let set: BTreeSet<usize> = ids.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&c| c >= n) {
            return Err(Error::config(format!("malicious client {bad} outside [0, {n})")));
        }
        Ok(Self(set))
    }

    /// `size` distinct clients drawn uniformly with the given seed.
    pub fn random(n: usize, size: usize, seed: u64) -> Result<Self> {
        if size > n {
            return Err(Error::config(format!("cannot pick {size} of {n} clients")));
        }
        if size == 0 {
            return Ok(Self::default());
        }
        let s = crate::ensemble::sample_subsample(n, size, seed)?;
        Self::new(s.ids().iter().copied(), n)
    }

    pub fn size(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.0.contains(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for MaliciousSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "{{{}}}", ids.join(" "))
    }
}

/// Whether the subsample includes a malicious client.
pub fn contaminated(s: &Subsample, b: &MaliciousSet) -> bool {
    s.ids().iter().any(|&c| b.contains(c))
}

pub const DEFAULT_ARBITRARY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub enum AttackSpec {
    /// Malicious clients relabel their data through `flip_map[label]`.
    LabelFlip { flip_map: Vec<usize> },
    /// Malicious clients multiply their update by `factor` each round.
    ScaledUpdate { factor: f64 },
    /// Malicious clients send `(w_target - w) * factor`, where `w_target` is
    /// a model pre-trained to answer `target_label` everywhere.
    ArbitraryUpdate { target_label: usize, factor: f64 },
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::LabelFlip { .. } => "LABEL_FLIP",
            AttackSpec::ScaledUpdate { .. } => "SCALED_UPDATE",
            AttackSpec::ArbitraryUpdate { .. } => "ARBITRARY_UPDATE",
        }
    }

    /// `label -> (label + 1) mod L`.
    pub fn rotate_labels(num_labels: usize) -> Self {
        AttackSpec::LabelFlip {
            flip_map: (0..num_labels).map(|l| (l + 1) % num_labels).collect(),
        }
    }

    pub fn validate(&self, num_labels: usize) -> Result<()> {
        match self {
            AttackSpec::LabelFlip { flip_map } => {
                if flip_map.len() != num_labels || flip_map.iter().any(|&l| l >= num_labels) {
                    return Err(Error::config(format!(
                        "flip_map must map each of the {num_labels} labels into [0, {num_labels})"
                    )));
                }
            }
            AttackSpec::ScaledUpdate { factor } | AttackSpec::ArbitraryUpdate { factor, .. } => {
                if !factor.is_finite() {
                    return Err(Error::config(format!("attack factor {factor} is not finite")));
                }
            }
        }
        if let AttackSpec::ArbitraryUpdate { target_label, .. } = self {
            if *target_label >= num_labels {
                return Err(Error::config(format!(
                    "target label {target_label} outside [0, {num_labels})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Behaviour {
    Flip(Vec<usize>),
    Scale(f64),
    Replace { target: ModelParams, factor: f64 },
}

/// An attack ready to run: the spec plus anything it needed to precompute.
#[derive(Debug, Clone)]
pub struct PreparedAttack {
    spec: AttackSpec,
    behaviour: Behaviour,
}

impl PreparedAttack {
    /// Validates `spec`; ARBITRARY_UPDATE trains its target model here, once,
    /// on `train` with every label replaced by the target label.
    pub fn prepare(spec: &AttackSpec, train: &Dataset, fed: &FedConfig, model: &ModelConfig) -> Result<Self> {
        spec.validate(model.num_labels())?;
        let behaviour = match spec {
            AttackSpec::LabelFlip { flip_map } => Behaviour::Flip(flip_map.clone()),
            AttackSpec::ScaledUpdate { factor } => Behaviour::Scale(*factor),
            AttackSpec::ArbitraryUpdate { target_label, factor } => {
                let mislabeled = train.map_labels(|_| *target_label)?;
                let target = FedAvg.train(
                    &[ClientRef {
                        id: 0,
                        data: &mislabeled,
                    }],
                    fed,
                    model,
                )?;
                Behaviour::Replace {
                    target,
                    factor: *factor,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            behaviour,
        })
    }

    pub fn spec(&self) -> &AttackSpec {
        &self.spec
    }

    pub fn against<'a>(&'a self, malicious: &'a MaliciousSet) -> ActiveAttack<'a> {
        ActiveAttack {
            attack: self,
            malicious,
        }
    }
}

/// A prepared attack bound to a malicious set.
#[derive(Debug, Clone, Copy)]
pub struct ActiveAttack<'a> {
    attack: &'a PreparedAttack,
    malicious: &'a MaliciousSet,
}

impl Tamper for ActiveAttack<'_> {
    fn is_malicious(&self, client_id: usize) -> bool {
        self.malicious.contains(client_id)
    }

    fn local_data<'d>(&self, data: &'d Dataset) -> Result<Cow<'d, Dataset>> {
        match &self.attack.behaviour {
            Behaviour::Flip(map) => Ok(Cow::Owned(data.map_labels(|l| map[l])?)),
            _ => Ok(Cow::Borrowed(data)),
        }
    }

    fn update(&self, global: &ModelParams, honest: ClientUpdate) -> Result<ClientUpdate> {
        match &self.attack.behaviour {
            Behaviour::Flip(_) => Ok(honest),
            Behaviour::Scale(f) => Ok(ClientUpdate {
                delta: honest.delta.scaled(*f),
                weight: honest.weight,
            }),
            Behaviour::Replace { target, factor } => Ok(ClientUpdate {
                delta: target.difference(global)?.scaled(*factor),
                weight: honest.weight,
            }),
        }
    }
}

/// FedAvg in which the clients of the malicious set follow the attack.
#[derive(Debug, Clone, Copy)]
pub struct AttackedFedAvg<'a> {
    pub attack: ActiveAttack<'a>,
}

impl BaseAlgorithm for AttackedFedAvg<'_> {
    fn train(&self, clients: &[ClientRef<'_>], fed: &FedConfig, model: &ModelConfig) -> Result<ModelParams> {
        FedAvg.train_tampered(clients, fed, model, Some(&self.attack))
    }
}

/// The ensemble after the malicious set attacks: contaminated rows are
/// retrained under the attack with their original seeds, clean rows are
/// copied (their training never touches a malicious client).
pub fn attacked_matrix(
    job: &EnsembleJob<'_>,
    clean: &PredictionMatrix,
    attack: &PreparedAttack,
    malicious: &MaliciousSet,
) -> Result<PredictionMatrix> {
    let attacked = AttackedFedAvg {
        attack: attack.against(malicious),
    };
    let job = EnsembleJob {
        base: &attacked,
        master_seed: clean.master_seed(),
        ..*job
    };
    let rows: Vec<usize> = (0..clean.num_models())
        .filter(|&r| contaminated(&clean.subsamples()[r], malicious))
        .collect();
    let fresh = job.train_rows(clean.subsamples(), &rows)?;
    let mut all = clean.rows().to_vec();
    for (r, row) in rows.into_iter().zip(fresh) {
        all[r] = row;
    }
    PredictionMatrix::new(
        clean.n(),
        clean.k(),
        clean.num_labels(),
        clean.test_count(),
        clean.mode(),
        clean.master_seed(),
        all,
        clean.subsamples().to_vec(),
    )
}

/// Ensemble predictions of every test example, using the matrix's own tie rule.
pub fn ensemble_predictions(matrix: &PredictionMatrix) -> Result<Vec<usize>> {
    (0..matrix.test_count())
        .map(|t| {
            let p = label_probabilities(matrix, t)?;
            Ok(ensemble_predict(&p, matrix.mode(), tie_seed(matrix.master_seed(), t)))
        })
        .collect()
}

/// One line of an attack evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub attack: &'static str,
    pub size: usize,
    pub malicious: MaliciousSet,
    pub example: usize,
    pub m_star: Option<usize>,
    pub clean_prediction: Option<usize>,
    pub attacked_prediction: usize,
    /// Exact certificate. Monte Carlo certificates describe the full
    /// ensemble, not the sampled one, so a change there is not a violation.
    pub deterministic: bool,
}

impl AttackOutcome {
    pub fn changed(&self) -> bool {
        self.clean_prediction.is_some_and(|c| c != self.attacked_prediction)
    }

    /// An exactly certified prediction that moved although the attack stayed
    /// within its level.
    pub fn violation(&self) -> bool {
        self.deterministic && self.changed() && self.m_star.is_some_and(|s| self.size <= s)
    }
}

pub const ATTACK_REPORT_HEADER: &str =
    "attack,size,malicious,example,m_star,clean_pred,attacked_pred,changed,violation";

pub fn attack_report_csv(outcomes: &[AttackOutcome]) -> String {
    let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    let mut s = format!("{ATTACK_REPORT_HEADER}\n");
    for o in outcomes {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            o.attack,
            o.size,
            o.malicious,
            o.example,
            opt(o.m_star),
            opt(o.clean_prediction),
            o.attacked_prediction,
            o.changed(),
            o.violation()
        ));
    }
    s
}

/// Retrains the ensemble under `attack` for each malicious set and compares
/// every example's prediction with its certificate.
pub fn evaluate_attack(
    job: &EnsembleJob<'_>,
    clean: &PredictionMatrix,
    certs: &[crate::certify::Certificate],
    attack: &PreparedAttack,
    sets: &[MaliciousSet],
) -> Result<Vec<AttackOutcome>> {
    if certs.len() != clean.test_count() {
        return Err(Error::shape(format!(
            "{} certificates for {} examples",
            certs.len(),
            clean.test_count()
        )));
    }
    let mut out = Vec::new();
    for b in sets {
        let attacked = attacked_matrix(job, clean, attack, b)?;
        let preds = ensemble_predictions(&attacked)?;
        for (t, (c, &p)) in certs.iter().zip(&preds).enumerate() {
            out.push(AttackOutcome {
                attack: attack.spec().name(),
                size: b.size(),
                malicious: b.clone(),
                example: t,
                m_star: c.m_star,
                clean_prediction: c.predicted,
                attacked_prediction: p,
                deterministic: c.deterministic,
            });
        }
    }
    Ok(out)
}

/// `per_size` seeded random malicious sets for each size in `sizes`.
pub fn malicious_sets(n: usize, sizes: &[usize], per_size: usize, seed: u64) -> Result<Vec<MaliciousSet>> {
    let mut out = Vec::new();
    for &m in sizes {
        for j in 0..per_size {
            let s: u64 = rand::Rng::random(&mut rng_at(seed, &[m as u64, j as u64]));
            out.push(MaliciousSet::random(n, m, s)?);
        }
    }
    Ok(out)
}

/// Clients' data as the partition holds it (convenience for callers building jobs).
pub fn partition_training_set(partition: &ClientPartition) -> Result<Dataset> {
    Dataset::concat(partition.client_data.iter())
}
