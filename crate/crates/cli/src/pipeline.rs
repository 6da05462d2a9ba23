//! Staged experiment runner with a manifest for resuming.
//!
//! Stages run in order: partition, train, certify, curve, attack. Each one
//! has a cache key built from its own config section and the hashes of the
//! artifacts it reads. A stage whose key and artifact hashes match the
//! manifest is skipped.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedcert::adversary::{
    attack_report_csv, evaluate_attack, malicious_sets, partition_training_set, AttackOutcome, AttackSpec,
    PreparedAttack,
};
use fedcert::certify::{certify_all, exact_certify, report_csv, CertifiedAccuracyCurve};
use fedcert::datasets::{
    load_har, load_mnist_idx_limit, partition_noniid, split_har_users, synth_blobs, BlobSpec, ClientPartition, Dataset,
    PartitionConfig,
};
use fedcert::ensemble::{subsamples_for, train_ensemble, EnsembleJob, Mode, PredictionMatrix};
use fedcert::fedlearn::{FedAvg, FedConfig};
use fedcert::model::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, section_hash, AttackKind, DatasetConfig, ExperimentConfig};
use crate::CliError;

pub const PARTITION_FILE: &str = "partition.txt";
pub const MATRIX_FILE: &str = "predictions.txt";
pub const LABELS_FILE: &str = "test_labels.txt";
pub const REPORT_FILE: &str = "certificates.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const ATTACK_FILE: &str = "attack.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".fedcert.lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Partition,
    Train,
    Certify,
    Curve,
    Attack,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Partition,
        Stage::Train,
        Stage::Certify,
        Stage::Curve,
        Stage::Attack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Partition => "partition",
            Stage::Train => "train",
            Stage::Certify => "certify",
            Stage::Curve => "curve",
            Stage::Attack => "attack",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed: bool,
    pub key: String,
    /// File name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub seconds: f64,
    /// Whether the last invocation reused the stage's artifacts.
    pub skipped: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
    }

    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.get(s.name())
    }
}

pub fn file_hash(path: &Path) -> Result<String, CliError> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

fn text_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

/// Held while a pipeline owns an output directory.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => {
                drop(f);
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Config(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Train/test data as the experiment sees it.
pub struct LoadedData {
    pub partition: ClientPartition,
    pub test: Dataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    let p = &cfg.partition;
    match &cfg.dataset {
        DatasetConfig::Mnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let train = load_mnist_idx_limit(train_images, train_labels, *train_limit)?;
            let test = load_mnist_idx_limit(test_images, test_labels, *test_limit)?;
            let partition = partition_noniid(&train, &partition_config(cfg))?;
            Ok(LoadedData { partition, test })
        }
        DatasetConfig::Har {
            dir,
            train_fraction,
            split_seed,
            test_limit,
        } => {
            let users = load_har(dir)?;
            let split = split_har_users(&users, *train_fraction, *split_seed)?;
            if split.train.len() != p.n {
                return Err(CliError::Config(format!(
                    "HAR has {} users but n = {}",
                    split.train.len(),
                    p.n
                )));
            }
            let test = match test_limit {
                Some(l) => split.test.head(*l),
                None => split.test,
            };
            Ok(LoadedData {
                partition: ClientPartition::from_clients(split.train)?,
                test,
            })
        }
        DatasetConfig::Blobs {
            num_labels,
            feature_dim,
            per_label_count,
            test_per_label,
            centroid_scale,
            noise_sigma,
            seed,
        } => {
            let spec = BlobSpec {
                num_labels: *num_labels,
                feature_dim: *feature_dim,
                per_label_count: *per_label_count,
                centroid_scale: *centroid_scale,
                noise_sigma: *noise_sigma,
                seed: *seed,
            };
            let train = synth_blobs(&spec)?;
            let test = synth_blobs(&BlobSpec {
                per_label_count: *test_per_label,
                seed: seed.wrapping_add(1),
                ..spec
            })?;
            Ok(LoadedData {
                partition: partition_noniid(&train, &partition_config(cfg))?,
                test,
            })
        }
    }
}

fn partition_config(cfg: &ExperimentConfig) -> PartitionConfig {
    PartitionConfig {
        n: cfg.partition.n,
        groups: cfg.partition.groups,
        q: cfg.partition.q,
        seed: cfg.partition.seed,
    }
}

pub fn model_config(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ModelConfig, CliError> {
    let mut sizes = vec![data.test.feature_dim()];
    sizes.extend(&cfg.model.hidden);
    sizes.push(data.test.num_labels());
    Ok(ModelConfig::new(sizes, 0)?)
}

pub fn fed_config(cfg: &ExperimentConfig) -> FedConfig {
    let f = &cfg.fed;
    FedConfig {
        global_iter: f.global_iter,
        local_iter: f.local_iter,
        eta: f.eta,
        batch_size: f.batch_size,
        train_seed: 0,
    }
}

pub fn attack_spec(kind: &AttackKind, num_labels: usize) -> AttackSpec {
    match kind {
        AttackKind::LabelFlip { flip_map: Some(m) } => AttackSpec::LabelFlip { flip_map: m.clone() },
        AttackKind::LabelFlip { flip_map: None } => AttackSpec::rotate_labels(num_labels),
        AttackKind::ScaledUpdate { factor } => AttackSpec::ScaledUpdate { factor: *factor },
        AttackKind::ArbitraryUpdate { target_label, factor } => AttackSpec::ArbitraryUpdate {
            target_label: *target_label,
            factor: *factor,
        },
    }
}

pub fn labels_text(labels: &[usize]) -> String {
    labels.iter().map(|l| format!("{l}\n")).collect()
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>, CliError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad label line {l:?}")))
        })
        .collect()
}

/// Summary of one pipeline invocation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub violations: usize,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    manifest: RunManifest,
    data: Option<LoadedData>,
    violations: usize,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let out = cfg.output_dir.clone();
        fs::create_dir_all(&out)?;
        let manifest_path = out.join(MANIFEST_FILE);
        let mut manifest = if manifest_path.exists() {
            RunManifest::read(&manifest_path)?
        } else {
            RunManifest::default()
        };
        manifest.config_hash = cfg.hash();
        Ok(Self {
            cfg,
            out,
            manifest,
            data: None,
            violations: 0,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data(&mut self) -> Result<&LoadedData, CliError> {
        if self.data.is_none() {
            self.data = Some(load_data(&self.cfg)?);
        }
        Ok(self.data.as_ref().expect("just loaded"))
    }

    fn config_and_data(&mut self) -> Result<(&ExperimentConfig, &LoadedData), CliError> {
        self.data()?;
        Ok((&self.cfg, self.data.as_ref().expect("just loaded")))
    }

    fn save_manifest(&self) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
        fs::write(self.path(MANIFEST_FILE), json + "\n")?;
        Ok(())
    }

    fn cached(&self, stage: Stage, key: &str) -> bool {
        let Some(rec) = self.manifest.stage(stage) else {
            return false;
        };
        rec.completed
            && rec.key == key
            && rec
                .artifacts
                .iter()
                .all(|(name, h)| file_hash(&self.path(name)).is_ok_and(|got| &got == h))
    }

    fn key(&self, stage: Stage) -> Result<String, CliError> {
        let c = &self.cfg;
        let upstream = |names: &[&str]| -> Result<Vec<String>, CliError> {
            names.iter().map(|n| file_hash(&self.path(n))).collect()
        };
        let parts: Vec<String> = match stage {
            Stage::Partition => vec![section_hash(&c.dataset), section_hash(&c.partition)],
            Stage::Train => {
                let mut v = upstream(&[PARTITION_FILE])?;
                v.extend([
                    section_hash(&c.dataset),
                    section_hash(&c.model),
                    section_hash(&c.fed),
                    section_hash(&c.ensemble),
                    c.master_seed.to_string(),
                ]);
                v
            }
            Stage::Certify => {
                let mut v = upstream(&[MATRIX_FILE, LABELS_FILE])?;
                v.push(c.certification.alpha.to_string());
                v
            }
            Stage::Curve => {
                let mut v = upstream(&[REPORT_FILE])?;
                v.push((c.partition.n - c.ensemble.k).to_string());
                v
            }
            Stage::Attack => {
                let mut v = upstream(&[PARTITION_FILE, MATRIX_FILE, REPORT_FILE])?;
                v.extend([
                    section_hash(&c.attacks),
                    section_hash(&c.dataset),
                    section_hash(&c.model),
                    section_hash(&c.fed),
                    c.master_seed.to_string(),
                ]);
                v
            }
        };
        Ok(text_hash(&parts.join("|")))
    }

    /// Runs every stage up to and including `last`.
    pub fn run_until(mut self, last: Stage) -> Result<RunOutcome, CliError> {
        let _lock = DirLock::acquire(&self.out)?;
        for stage in Stage::ALL.into_iter().filter(|&s| s <= last) {
            if stage == Stage::Attack && self.cfg.attacks.is_empty() {
                continue;
            }
            self.run_stage(stage)?;
        }
        Ok(RunOutcome {
            manifest: self.manifest,
            violations: self.violations,
        })
    }

    fn run_stage(&mut self, stage: Stage) -> Result<(), CliError> {
        let key = self.key(stage)?;
        if self.cached(stage, &key) {
            if let Some(rec) = self.manifest.stages.get_mut(stage.name()) {
                rec.skipped = true;
            }
            if stage == Stage::Attack {
                self.violations = count_violations(&fs::read_to_string(self.path(ATTACK_FILE))?);
            }
            return self.save_manifest();
        }
        let started = Instant::now();
        let result = self.execute(stage);
        let mut rec = StageRecord {
            key,
            seconds: started.elapsed().as_secs_f64(),
            ..Default::default()
        };
        match result {
            Ok(files) => {
                rec.completed = true;
                for f in files {
                    let h = file_hash(&self.path(f))?;
                    rec.artifacts.insert(f.to_string(), h);
                }
                self.manifest.stages.insert(stage.name().into(), rec);
                self.save_manifest()
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                self.manifest.stages.insert(stage.name().into(), rec);
                self.save_manifest()?;
                Err(e)
            }
        }
    }

    fn write(&self, name: &'static str, text: &str) -> Result<&'static str, CliError> {
        fs::write(self.path(name), text)?;
        Ok(name)
    }

    fn execute(&mut self, stage: Stage) -> Result<Vec<&'static str>, CliError> {
        match stage {
            Stage::Partition => {
                let text = self.data()?.partition.to_export_string();
                Ok(vec![self.write(PARTITION_FILE, &text)?])
            }
            Stage::Train => {
                let mode = self.cfg.mode()?;
                let (n, k) = (self.cfg.partition.n, self.cfg.ensemble.k);
                let count = self.cfg.ensemble.count.unwrap_or(0);
                let seed = self.cfg.master_seed;
                let fed = fed_config(&self.cfg);
                let (cfg, data) = self.config_and_data()?;
                let model = model_config(cfg, data)?;
                let subs = subsamples_for(n, k, mode, count, seed)?;
                let job = EnsembleJob {
                    partition: &data.partition,
                    base: &FedAvg,
                    fed: &fed,
                    model: &model,
                    test: &data.test,
                    master_seed: seed,
                };
                let matrix = train_ensemble(&job, subs, mode)?;
                let labels = labels_text(&data.test.labels());
                Ok(vec![
                    self.write(MATRIX_FILE, &matrix.to_file_string())?,
                    self.write(LABELS_FILE, &labels)?,
                ])
            }
            Stage::Certify => {
                let matrix = PredictionMatrix::read(&self.path(MATRIX_FILE))?;
                let labels = parse_labels(&fs::read_to_string(self.path(LABELS_FILE))?)?;
                let text = certify_report(&matrix, &labels, self.cfg.certification.alpha)?;
                Ok(vec![self.write(REPORT_FILE, &text)?])
            }
            Stage::Curve => {
                let text = fs::read_to_string(self.path(REPORT_FILE))?;
                let csv = curve_from_report(&text, None, self.cfg.partition.n - self.cfg.ensemble.k)?;
                Ok(vec![self.write(CURVE_FILE, &csv)?])
            }
            Stage::Attack => {
                let outcomes = self.attack_eval()?;
                let csv = attack_report_csv(&outcomes);
                self.violations = outcomes.iter().filter(|o| o.violation()).count();
                Ok(vec![self.write(ATTACK_FILE, &csv)?])
            }
        }
    }

    fn attack_eval(&mut self) -> Result<Vec<AttackOutcome>, CliError> {
        let matrix = PredictionMatrix::read(&self.path(MATRIX_FILE))?;
        let report = fedcert::certify::parse_report(&fs::read_to_string(self.path(REPORT_FILE))?)?;
        let certs = report
            .iter()
            .map(|r| r.to_certificate())
            .collect::<fedcert::Result<Vec<_>>>()?;
        let fed = fed_config(&self.cfg);
        let (cfg, data) = self.config_and_data()?;
        let model = model_config(cfg, data)?;
        let train = partition_training_set(&data.partition)?;
        let job = EnsembleJob {
            partition: &data.partition,
            base: &FedAvg,
            fed: &fed,
            model: &model,
            test: &data.test,
            master_seed: matrix.master_seed(),
        };
        let top = certs.iter().filter_map(|c| c.m_star).max().unwrap_or(0).max(1);
        let mut out = Vec::new();
        for a in &cfg.attacks {
            let spec = attack_spec(&a.kind, model.num_labels());
            let prepared = PreparedAttack::prepare(&spec, &train, &fed.with_seed(a.seed), &model)?;
            let sizes = a.sizes.clone().unwrap_or_else(|| (1..=top).collect());
            let sets = malicious_sets(matrix.n(), &sizes, a.sets_per_size, a.seed)?;
            out.extend(evaluate_attack(&job, &matrix, &certs, &prepared, &sets)?);
        }
        Ok(out)
    }
}

fn count_violations(csv: &str) -> usize {
    csv.lines().skip(1).filter(|l| l.ends_with(",true")).count()
}

/// Certificate report for a matrix: exact certificates for EXACT matrices,
/// Monte Carlo ones at `alpha` for SAMPLED matrices.
pub fn certify_report(matrix: &PredictionMatrix, labels: &[usize], alpha: f64) -> Result<String, CliError> {
    if labels.len() != matrix.test_count() {
        return Err(CliError::Config(format!(
            "{} labels for {} test examples",
            labels.len(),
            matrix.test_count()
        )));
    }
    let certs = match matrix.mode() {
        Mode::Exact => exact_certify(matrix)?,
        Mode::Sampled => certify_all(matrix, alpha)?,
    };
    Ok(report_csv(&certs, labels)?)
}

/// `m,certified_accuracy` for `m = 0..=max_m` from a certificate report,
/// optionally with the true labels replaced.
pub fn curve_from_report(report: &str, labels: Option<&[usize]>, max_m: usize) -> Result<String, CliError> {
    let rows = fedcert::certify::parse_report(report)?;
    if rows.is_empty() {
        return Err(CliError::Config("certificate report has no rows".into()));
    }
    let truth: Vec<usize> = match labels {
        Some(l) if l.len() != rows.len() => {
            return Err(CliError::Config(format!(
                "{} labels for {} report rows",
                l.len(),
                rows.len()
            )));
        }
        Some(l) => l.to_vec(),
        None => rows.iter().map(|r| r.true_label).collect(),
    };
    let certs = rows
        .iter()
        .map(|r| r.to_certificate())
        .collect::<fedcert::Result<Vec<_>>>()?;
    let curve = CertifiedAccuracyCurve::compute(&certs, &truth, max_m, None)?;
    Ok(curve.to_csv())
}

/// Runs `f` on a dedicated pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--threads must be >= 1".into())),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
