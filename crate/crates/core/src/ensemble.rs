//! Subsamples, ensemble training and majority voting.
//!
//! Every ensemble member is the global model the base algorithm learns from
//! one `k`-client subsample. EXACT mode uses every subsample once in
//! lexicographic order; SAMPLED mode draws `N` subsamples independently, so
//! repeats are possible. The resulting [`PredictionMatrix`] is all the
//! certification code ever looks at.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng as _;

use crate::certify::binomial;
use crate::datasets::{ClientPartition, Dataset};
use crate::fedlearn::{BaseAlgorithm, ClientRef, FedConfig};
use crate::model::{predict_many, ModelConfig};
use crate::rng::{derive_seed, rng_at, rng_from};
use crate::{Error, Result};

/// EXACT mode refuses to enumerate more subsamples than this.
pub const ENUMERATION_CAP: u64 = 100_000;

/// Sorted, distinct client indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subsample(Vec<usize>);

impl Subsample {
    pub fn new(ids: Vec<usize>, n: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::config("empty subsample"));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!("subsample {ids:?} is not strictly increasing")));
        }
        if ids[ids.len() - 1] >= n {
            return Err(Error::config(format!(
                "subsample {ids:?} has a client outside [0, {n})"
            )));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, client: usize) -> bool {
        self.0.binary_search(&client).is_ok()
    }

    /// Bit `i` set for every member `i`. Only meaningful for clients < 64.
    pub fn mask(&self) -> u64 {
        self.0
            .iter()
            .fold(0, |m, &i| m | 1u64.checked_shl(i as u32).unwrap_or(0))
    }
}

impl fmt::Display for Subsample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&ids.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Exact,
    Sampled,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "EXACT",
            Mode::Sampled => "SAMPLED",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EXACT" => Ok(Mode::Exact),
            "SAMPLED" => Ok(Mode::Sampled),
            other => Err(Error::config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

fn check_nk(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::config(format!("need 1 <= k <= n, got n = {n}, k = {k}")));
    }
    Ok(())
}

/// All `C(n, k)` subsamples in lexicographic order.
pub fn enumerate_subsamples(n: usize, k: usize) -> Result<Vec<Subsample>> {
    check_nk(n, k)?;
    let count = binomial(n as u64, k as u64);
    if count > BigUint::from(ENUMERATION_CAP) {
        return Err(Error::Cap {
            what: format!("C({n},{k}) subsamples (use SAMPLED mode)"),
            count: count.to_string(),
            cap: ENUMERATION_CAP,
        });
    }
    let mut out = Vec::with_capacity(count.to_usize().unwrap_or(0));
    let mut cur: Vec<usize> = (0..k).collect();
    loop {
        out.push(Subsample(cur.clone()));
        // rightmost position that can still advance
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            break;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Uniform draw without replacement: partial Fisher-Yates, then sort.
pub fn sample_subsample(n: usize, k: usize, stream_seed: u64) -> Result<Subsample> {
    check_nk(n, k)?;
    let mut rng = rng_from(stream_seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    Ok(Subsample(pool))
}

const SUBSAMPLE_STREAM: u64 = 0x5355_4253;
const TRAIN_STREAM: u64 = 0x5452_4149;
const INIT_STREAM: u64 = 0x494e_4954;

/// `count` independent subsamples; row `r` uses its own stream of `master_seed`.
pub fn sample_subsamples(n: usize, k: usize, count: usize, master_seed: u64) -> Result<Vec<Subsample>> {
    (0..count)
        .map(|r| sample_subsample(n, k, derive_seed(master_seed, &[SUBSAMPLE_STREAM, r as u64])))
        .collect()
}

/// The subsample list for a mode; `count` is ignored in EXACT mode.
pub fn subsamples_for(n: usize, k: usize, mode: Mode, count: usize, master_seed: u64) -> Result<Vec<Subsample>> {
    match mode {
        Mode::Exact => enumerate_subsamples(n, k),
        Mode::Sampled if count == 0 => Err(Error::config("SAMPLED mode needs N >= 1")),
        Mode::Sampled => sample_subsamples(n, k, count, master_seed),
    }
}

/// Ensemble members' predicted labels: one row per member, one column per
/// test example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    n: usize,
    k: usize,
    num_labels: usize,
    test_count: usize,
    mode: Mode,
    master_seed: u64,
    rows: Vec<Vec<usize>>,
    subsamples: Vec<Subsample>,
}

impl PredictionMatrix {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        k: usize,
        num_labels: usize,
        test_count: usize,
        mode: Mode,
        master_seed: u64,
        rows: Vec<Vec<usize>>,
        subsamples: Vec<Subsample>,
    ) -> Result<Self> {
        check_nk(n, k)?;
        if num_labels == 0 {
            return Err(Error::config("prediction matrix needs at least one label"));
        }
        if rows.len() != subsamples.len() {
            return Err(Error::shape(format!(
                "{} prediction rows but {} subsamples",
                rows.len(),
                subsamples.len()
            )));
        }
        for (r, (row, s)) in rows.iter().zip(&subsamples).enumerate() {
            if row.len() != test_count {
                return Err(Error::shape(format!(
                    "row {r} has {} entries, expected {test_count}",
                    row.len()
                )));
            }
            if let Some(bad) = row.iter().find(|&&l| l >= num_labels) {
                return Err(Error::format(format!("row {r}: label {bad} outside [0, {num_labels})")));
            }
            if s.k() != k || s.ids().last().is_some_and(|&c| c >= n) {
                return Err(Error::format(format!(
                    "row {r}: subsample {s} invalid for n = {n}, k = {k}"
                )));
            }
        }
        if mode == Mode::Exact {
            let all = enumerate_subsamples(n, k)?;
            if all != subsamples {
                return Err(Error::format(
                    "EXACT matrix must list every subsample once in lexicographic order",
                ));
            }
        }
        Ok(Self {
            n,
            k,
            num_labels,
            test_count,
            mode,
            master_seed,
            rows,
            subsamples,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn test_count(&self) -> usize {
        self.test_count
    }

    pub fn num_models(&self) -> usize {
        self.rows.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn subsamples(&self) -> &[Subsample] {
        &self.subsamples
    }

    pub fn column(&self, t: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r[t]).collect()
    }

    /// Header `n,k,N,d,L,mode,master_seed`, then the N label rows, then the N
    /// subsample rows.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            self.n,
            self.k,
            self.rows.len(),
            self.test_count,
            self.num_labels,
            self.mode,
            self.master_seed
        );
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        for sub in &self.subsamples {
            let _ = writeln!(s, "{sub}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty prediction matrix file"))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(Error::format(format!("bad matrix header {header:?}")));
        }
        let num = |i: usize| -> Result<usize> {
            fields[i]
                .parse()
                .map_err(|_| Error::format(format!("bad header field {:?}", fields[i])))
        };
        let (n, k, count, d, labels) = (num(0)?, num(1)?, num(2)?, num(3)?, num(4)?);
        let mode: Mode = fields[5]
            .parse()
            .map_err(|_| Error::format(format!("bad mode {:?}", fields[5])))?;
        let master_seed: u64 = fields[6]
            .parse()
            .map_err(|_| Error::format(format!("bad master seed {:?}", fields[6])))?;
        let list = |line: &str| -> Result<Vec<usize>> {
            if line.trim().is_empty() {
                return Ok(Vec::new());
            }
            line.split(',')
                .map(|c| {
                    c.trim()
                        .parse()
                        .map_err(|_| Error::format(format!("bad integer {c:?}")))
                })
                .collect()
        };
        let mut rows = Vec::with_capacity(count);
        for r in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(format!("missing prediction row {r}")))?;
            rows.push(list(line)?);
        }
        let mut subsamples = Vec::with_capacity(count);
        for r in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::format(format!("missing subsample row {r}")))?;
            subsamples.push(Subsample::new(list(line)?, n).map_err(|e| Error::format(e.to_string()))?);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::format("trailing data after subsample rows"));
        }
        Self::new(n, k, labels, d, mode, master_seed, rows, subsamples)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Training seed of ensemble row `r`.
pub fn row_train_seed(master_seed: u64, row: usize) -> u64 {
    derive_seed(master_seed, &[TRAIN_STREAM, row as u64])
}

/// Model initialisation seed of ensemble row `r`.
pub fn row_init_seed(master_seed: u64, row: usize) -> u64 {
    derive_seed(master_seed, &[INIT_STREAM, row as u64])
}

/// Everything needed to train ensemble rows.
#[derive(Clone, Copy)]
pub struct EnsembleJob<'a> {
    pub partition: &'a ClientPartition,
    pub base: &'a dyn BaseAlgorithm,
    pub fed: &'a FedConfig,
    pub model: &'a ModelConfig,
    pub test: &'a Dataset,
    pub master_seed: u64,
}

impl EnsembleJob<'_> {
    /// Predictions of the model trained on `subsample` as ensemble row `row`.
    pub fn train_row(&self, row: usize, subsample: &Subsample) -> Result<Vec<usize>> {
        let wrap = |e: Error| Error::Row {
            row,
            source: Box::new(e),
        };
        let clients: Vec<ClientRef> = subsample
            .ids()
            .iter()
            .map(|&id| {
                self.partition
                    .client_data
                    .get(id)
                    .map(|data| ClientRef { id, data })
                    .ok_or_else(|| Error::config(format!("client {id} not in partition")))
            })
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let fed = self.fed.with_seed(row_train_seed(self.master_seed, row));
        let model = self.model.with_seed(row_init_seed(self.master_seed, row));
        let params = self.base.train(&clients, &fed, &model).map_err(wrap)?;
        let xs: Vec<&[f64]> = self.test.examples().iter().map(|e| e.features.as_slice()).collect();
        predict_many(&params, &xs).map_err(wrap)
    }

    /// Trains the listed rows (in parallel when enabled); output follows `rows`.
    pub fn train_rows(&self, subsamples: &[Subsample], rows: &[usize]) -> Result<Vec<Vec<usize>>> {
        let one = |&r: &usize| self.train_row(r, &subsamples[r]);
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            rows.par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        rows.iter().map(one).collect()
    }
}

/// Trains one model per subsample and records its test-set predictions.
pub fn train_ensemble(job: &EnsembleJob<'_>, subsamples: Vec<Subsample>, mode: Mode) -> Result<PredictionMatrix> {
    let n = job.partition.n();
    let k = subsamples.first().map_or(0, Subsample::k);
    if subsamples.is_empty() {
        return Err(Error::config("no subsamples to train"));
    }
    if job.test.num_labels() != job.model.num_labels() {
        return Err(Error::shape(format!(
            "test set has {} labels, model outputs {}",
            job.test.num_labels(),
            job.model.num_labels()
        )));
    }
    let all: Vec<usize> = (0..subsamples.len()).collect();
    let rows = job.train_rows(&subsamples, &all)?;
    PredictionMatrix::new(
        n,
        k,
        job.model.num_labels(),
        job.test.len(),
        mode,
        job.master_seed,
        rows,
        subsamples,
    )
}

/// Vote counts for one test example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelProbabilities {
    counts: Vec<u64>,
    total: u64,
}

impl LabelProbabilities {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::config("label probabilities need at least one vote"));
        }
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `p_i` as an exact rational with denominator the number of models.
    pub fn p(&self, label: usize) -> BigRational {
        BigRational::new(self.counts[label].into(), self.total.into())
    }

    pub fn p_f64(&self, label: usize) -> f64 {
        self.counts[label] as f64 / self.total as f64
    }

    /// Labels sharing the largest count, ascending.
    pub fn top_labels(&self) -> Vec<usize> {
        let best = self.counts.iter().copied().max().unwrap_or(0);
        (0..self.counts.len()).filter(|&i| self.counts[i] == best).collect()
    }

    /// Largest count among labels other than `y`.
    pub fn runner_up(&self, y: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &c) in self.counts.iter().enumerate() {
            if i != y && best.is_none_or(|b| c > self.counts[b]) {
                best = Some(i);
            }
        }
        best
    }
}

pub fn label_probabilities(matrix: &PredictionMatrix, t: usize) -> Result<LabelProbabilities> {
    if t >= matrix.test_count() {
        return Err(Error::config(format!(
            "example {t} outside [0, {})",
            matrix.test_count()
        )));
    }
    let mut counts = vec![0u64; matrix.num_labels()];
    for row in matrix.rows() {
        counts[row[t]] += 1;
    }
    LabelProbabilities::from_counts(counts)
}

/// Majority vote. EXACT mode breaks ties towards the smallest label; SAMPLED
/// mode picks uniformly among the tied labels using `tie_seed`.
pub fn ensemble_predict(p: &LabelProbabilities, mode: Mode, tie_seed: u64) -> usize {
    let top = p.top_labels();
    match mode {
        Mode::Exact => top[0],
        Mode::Sampled if top.len() == 1 => top[0],
        Mode::Sampled => top[rng_from(tie_seed).random_range(0..top.len())],
    }
}

/// Tie-break seed of example `t` in a run with `master_seed`.
pub fn tie_seed(master_seed: u64, t: usize) -> u64 {
    rng_at(master_seed, &[0x5449_4553, t as u64]).random()
}
