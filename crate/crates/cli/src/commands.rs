//! Command-line interface definitions and dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fedcert::adversary::{random_bound_pairs, tightness_grid, tightness_report_csv, verify_tightness, Verdict};
use fedcert::certify::ProbBounds;
use fedcert::ensemble::PredictionMatrix;

use crate::config::ExperimentConfig;
use crate::pipeline::{self, Pipeline, RunOutcome, Stage};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "fedcert", version, about = "Certifiably robust ensemble federated learning")]
pub struct Cli {
    /// Experiment config (JSON); relative paths inside resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition the training set across clients and write partition.txt.
    Partition,
    /// Train the ensemble and write the prediction matrix.
    TrainEnsemble,
    /// Certify every test example; file mode with --matrix and --labels.
    Certify(CertifyArgs),
    /// Certified accuracy for m = 0..=n-k; file mode with --report.
    Curve(CurveArgs),
    /// Retrain under attack and check the certificates (exit 3 on violation).
    AttackEval(AttackArgs),
    /// Build and check the tightness constructions.
    TightnessCheck(TightnessArgs),
    /// Full pipeline.
    Run,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long, requires = "labels")]
    pub matrix: Option<PathBuf>,
    /// True labels, one per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Replaces the report's true labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Largest m (n - k); required in file mode.
    #[arg(long)]
    pub max_m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Malicious-set sizes for every configured attack, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct TightnessArgs {
    #[arg(long, required_unless_present = "grid")]
    pub n: Option<usize>,
    #[arg(long, required_unless_present = "grid")]
    pub k: Option<usize>,
    #[arg(long, required_unless_present = "grid")]
    pub p_lower: Option<f64>,
    #[arg(long, required_unless_present = "grid")]
    pub p_upper: Option<f64>,
    /// Random grid over n in {6, 8}, k in {2, 3}.
    #[arg(long, conflicts_with_all = ["n", "k", "p_lower", "p_upper"])]
    pub grid: bool,
    /// Bound pairs per (n, k) in grid mode.
    #[arg(long, default_value_t = 20)]
    pub pairs: usize,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run_stages(cfg: ExperimentConfig, last: Stage) -> Result<RunOutcome, CliError> {
    let outcome = Pipeline::new(cfg)?.run_until(last)?;
    for (name, rec) in Stage::ALL
        .iter()
        .filter(|&&s| s <= last)
        .filter_map(|s| Some((s.name(), outcome.manifest.stage(*s)?)))
    {
        let state = if rec.skipped { "cached" } else { "done" };
        eprintln!("{name:<10} {state:<6} {:.2}s", rec.seconds);
    }
    if outcome.violations > 0 {
        return Err(CliError::Violation(format!(
            "{} certified predictions changed within their certified level (see {})",
            outcome.violations,
            pipeline::ATTACK_FILE
        )));
    }
    Ok(outcome)
}

/// Dispatches one parsed command line.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    pipeline::with_threads(cli.threads, || dispatch(cli))?
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Partition => run_stages(load_config(cli)?, Stage::Partition).map(drop),
        Command::TrainEnsemble => run_stages(load_config(cli)?, Stage::Train).map(drop),
        Command::Run => run_stages(load_config(cli)?, Stage::Attack).map(drop),
        Command::Certify(a) => match &a.matrix {
            Some(matrix) => {
                let m = PredictionMatrix::read(matrix)?;
                let labels_path = a.labels.as_ref().expect("clap enforces --labels");
                let labels = pipeline::parse_labels(&fs::read_to_string(labels_path)?)?;
                let alpha = a.alpha.unwrap_or(0.001);
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(CliError::Config(format!("alpha = {alpha} outside (0, 1)")));
                }
                let text = pipeline::certify_report(&m, &labels, alpha)?;
                emit(cli.out.as_deref(), pipeline::REPORT_FILE, &text)
            }
            None => {
                let mut cfg = load_config(cli)?;
                if let Some(alpha) = a.alpha {
                    cfg.certification.alpha = alpha;
                }
                run_stages(cfg, Stage::Certify).map(drop)
            }
        },
        Command::Curve(a) => match &a.report {
            Some(report) => {
                let max_m = a
                    .max_m
                    .ok_or_else(|| CliError::Config("--max-m is required with --report".into()))?;
                let labels = a
                    .labels
                    .as_ref()
                    .map(|p| {
                        fs::read_to_string(p)
                            .map_err(CliError::from)
                            .and_then(|t| pipeline::parse_labels(&t))
                    })
                    .transpose()?;
                let text = pipeline::curve_from_report(&fs::read_to_string(report)?, labels.as_deref(), max_m)?;
                emit(cli.out.as_deref(), pipeline::CURVE_FILE, &text)
            }
            None => run_stages(load_config(cli)?, Stage::Curve).map(drop),
        },
        Command::AttackEval(a) => {
            let mut cfg = load_config(cli)?;
            if cfg.attacks.is_empty() {
                return Err(CliError::Config("config has no attacks".into()));
            }
            if let Some(sizes) = &a.sizes {
                for at in &mut cfg.attacks {
                    at.sizes = Some(sizes.clone());
                }
                cfg.validate()?;
            }
            run_stages(cfg, Stage::Attack).map(drop)
        }
        Command::TightnessCheck(a) => {
            let reports = if a.grid {
                let pairs = random_bound_pairs(a.pairs, cli.seed.unwrap_or(0))?;
                tightness_grid(&[6, 8], &[2, 3], &pairs)?
            } else {
                let (n, k) = (a.n.expect("clap"), a.k.expect("clap"));
                let b = ProbBounds::from_f64(a.p_lower.expect("clap"), a.p_upper.expect("clap"))?;
                vec![verify_tightness(n, k, &b)?]
            };
            emit(cli.out.as_deref(), "tightness.csv", &tightness_report_csv(&reports))?;
            let failed: Vec<_> = reports.iter().filter(|r| r.verdict == Verdict::Fail).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Violation(format!(
                    "{} tightness checks failed: {}",
                    failed.len(),
                    failed[0].note
                )))
            }
        }
    }
}
