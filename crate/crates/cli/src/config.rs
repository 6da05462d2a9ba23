//! Experiment configuration (JSON). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use fedcert::certify::binomial;
use fedcert::ensemble::{Mode, ENUMERATION_CAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Har {
        dir: PathBuf,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default)]
        split_seed: u64,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Blobs {
        num_labels: usize,
        feature_dim: usize,
        per_label_count: usize,
        test_per_label: usize,
        #[serde(default = "default_scale")]
        centroid_scale: f64,
        #[serde(default = "default_sigma")]
        noise_sigma: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_scale() -> f64 {
    2.0
}

fn default_sigma() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub n: usize,
    #[serde(default)]
    pub groups: Option<usize>,
    #[serde(default = "one")]
    pub q: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden layer widths; input and output sizes come from the dataset.
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedSection {
    pub global_iter: usize,
    pub local_iter: usize,
    pub eta: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub k: usize,
    pub mode: String,
    #[serde(rename = "N", default)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificationSection {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackKind {
    /// Missing `flip_map` means `l -> (l + 1) mod L`.
    LabelFlip {
        #[serde(default)]
        flip_map: Option<Vec<usize>>,
    },
    ScaledUpdate {
        factor: f64,
    },
    ArbitraryUpdate {
        target_label: usize,
        #[serde(default = "default_arbitrary_factor")]
        factor: f64,
    },
}

fn default_arbitrary_factor() -> f64 {
    fedcert::adversary::DEFAULT_ARBITRARY_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Malicious-set sizes; default 1 up to the largest certified level.
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default = "one_usize")]
    pub sets_per_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionSection,
    #[serde(default = "default_model")]
    pub model: ModelSection,
    pub fed: FedSection,
    pub ensemble: EnsembleSection,
    pub certification: CertificationSection,
    #[serde(default)]
    pub attacks: Vec<AttackSection>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_model() -> ModelSection {
    ModelSection { hidden: Vec::new() }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))
    }

    /// Reads, validates and resolves paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                fix(test_images);
                fix(test_labels);
            }
            DatasetConfig::Har { dir, .. } => fix(dir),
            DatasetConfig::Blobs { .. } => {}
        }
        fix(&mut self.output_dir);
    }

    pub fn mode(&self) -> Result<Mode, CliError> {
        self.ensemble
            .mode
            .parse()
            .map_err(|e: fedcert::Error| bad(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (n, k) = (self.partition.n, self.ensemble.k);
        if k == 0 || k > n {
            return Err(bad(format!("need 1 <= k <= n, got n = {n}, k = {k}")));
        }
        match self.mode()? {
            Mode::Sampled if self.ensemble.count.unwrap_or(0) == 0 => {
                return Err(bad("SAMPLED mode needs N >= 1"));
            }
            Mode::Exact if binomial(n as u64, k as u64) > ENUMERATION_CAP.into() => {
                return Err(bad(format!(
                    "EXACT mode: C({n},{k}) exceeds the cap of {ENUMERATION_CAP}; use SAMPLED"
                )));
            }
            _ => {}
        }
        let a = self.certification.alpha;
        if !(a > 0.0 && a < 1.0) {
            return Err(bad(format!("alpha = {a} outside (0, 1)")));
        }
        let f = &self.fed;
        if f.global_iter == 0 || f.local_iter == 0 || f.batch_size == 0 || !(f.eta > 0.0 && f.eta.is_finite()) {
            return Err(bad(
                "fed: global_iter, local_iter, batch_size >= 1 and eta > 0 required",
            ));
        }
        if self.model.hidden.contains(&0) {
            return Err(bad("hidden layer of width 0"));
        }
        if let DatasetConfig::Har { train_fraction, .. } = &self.dataset {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(bad("HAR train_fraction outside [0, 1]"));
            }
        }
        for a in &self.attacks {
            if a.sets_per_size == 0 {
                return Err(bad("attack sets_per_size must be >= 1"));
            }
            if a.sizes.as_ref().is_some_and(|s| s.iter().any(|&m| m == 0 || m > n)) {
                return Err(bad(format!("attack sizes must lie in [1, {n}]")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        section_hash(self)
    }
}

/// SHA-256 hex digest of a value's JSON serialisation.
pub fn section_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config sections serialise");
    hex(&Sha256::digest(json.as_bytes()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
