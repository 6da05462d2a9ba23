//! Brute-force worst case over malicious sets, and table-driven base
//! algorithms for small exhaustive experiments.

use std::collections::HashMap;

use rand::Rng as _;

use super::MaliciousSet;
use crate::ensemble::{enumerate_subsamples, label_probabilities, subsamples_for, Mode, PredictionMatrix, Subsample};
use crate::rng::rng_at;
use crate::{Error, Result};

/// Largest `n` the malicious-set enumeration accepts (`2^n` sets).
pub const MAX_ORACLE_CLIENTS: usize = 12;

/// Whether `y` still wins after the adversary assigns `contaminated` extra
/// votes as it likes, with ties going to the smaller label.
///
/// Funnelling every contaminated vote to a single rival `j` is the strongest
/// move against `y`: `y` keeps `clean[y]` votes whatever happens, and `j` can
/// reach at most `clean[j] + contaminated`, which funnelling attains. So `y`
/// survives every assignment iff it beats `clean[j] + contaminated` for each
/// `j` on its own.
pub fn survives(clean: &[u64], contaminated: u64, y: usize) -> bool {
    clean.iter().enumerate().filter(|&(j, _)| j != y).all(|(j, &c)| {
        let rival = c + contaminated;
        clean[y] > rival || (clean[y] == rival && y < j)
    })
}

/// [`survives`] by trying every split of the contaminated votes over the
/// labels. Exponential; for cross-checking on tiny instances.
pub fn exhaustive_survives(clean: &[u64], contaminated: u64, y: usize) -> bool {
    fn go(clean: &[u64], extra: &mut Vec<u64>, left: u64, y: usize) -> bool {
        if extra.len() + 1 == clean.len() {
            extra.push(left);
            let totals: Vec<u64> = clean.iter().zip(extra.iter()).map(|(a, b)| a + b).collect();
            extra.pop();
            let best = totals.iter().copied().max().unwrap_or(0);
            return totals.iter().position(|&v| v == best) == Some(y);
        }
        (0..=left).all(|a| {
            extra.push(a);
            let ok = go(clean, extra, left - a, y);
            extra.pop();
            ok
        })
    }
    go(clean, &mut Vec::with_capacity(clean.len()), contaminated, y)
}

fn exact_column(matrix: &PredictionMatrix, t: usize) -> Result<(Vec<u64>, Vec<usize>, usize)> {
    if matrix.mode() != Mode::Exact {
        return Err(Error::config("the worst-case oracle needs an EXACT matrix"));
    }
    if matrix.n() > MAX_ORACLE_CLIENTS {
        return Err(Error::Cap {
            what: "malicious sets (2^n)".into(),
            count: format!("2^{}", matrix.n()),
            cap: 1 << MAX_ORACLE_CLIENTS,
        });
    }
    let masks: Vec<u64> = matrix.subsamples().iter().map(Subsample::mask).collect();
    let column = matrix.column(t);
    let p = label_probabilities(matrix, t)?;
    Ok((masks, column, p.top_labels()[0]))
}

/// Clean vote counts and the number of contaminated subsamples of example
/// `t` under malicious clients `b` (a bitmask).
fn split(masks: &[u64], column: &[usize], num_labels: usize, b: u64) -> (Vec<u64>, u64) {
    let mut clean = vec![0u64; num_labels];
    let mut bad = 0;
    for (&m, &l) in masks.iter().zip(column) {
        if m & b == 0 {
            clean[l] += 1;
        } else {
            bad += 1;
        }
    }
    (clean, bad)
}

/// [`split`] for a [`MaliciousSet`].
pub fn split_votes(matrix: &PredictionMatrix, t: usize, b: &MaliciousSet) -> (Vec<u64>, u64) {
    let masks: Vec<u64> = matrix.subsamples().iter().map(Subsample::mask).collect();
    let bits = b.ids().fold(0u64, |acc, c| acc | 1 << c);
    split(&masks, &matrix.column(t), matrix.num_labels(), bits)
}

/// Largest `m` such that no malicious set of at most `m` clients, with any
/// relabelling of the subsamples it contaminates, changes the clean
/// prediction (smallest-index tie rule) of example `t`.
pub fn worst_case_safe_level(matrix: &PredictionMatrix, t: usize) -> Result<usize> {
    let (masks, column, y) = exact_column(matrix, t)?;
    let n = matrix.n();
    // Survival is monotone in B: growing B only moves clean votes into the
    // contaminated pool, which never helps y. Checking each size on its own
    // is therefore enough.
    for m in 1..=n {
        let all_safe = (0u64..1 << n).filter(|b| b.count_ones() as usize == m).all(|b| {
            let (clean, bad) = split(&masks, &column, matrix.num_labels(), b);
            survives(&clean, bad, y)
        });
        if !all_safe {
            return Ok(m - 1);
        }
    }
    Ok(n)
}

/// A base algorithm given directly as a table from subsample to predicted
/// labels (one per test example).
#[derive(Debug, Clone, PartialEq)]
pub struct LookupBaseAlgorithm {
    num_labels: usize,
    test_count: usize,
    table: HashMap<Subsample, Vec<usize>>,
}

impl LookupBaseAlgorithm {
    pub fn new(num_labels: usize, test_count: usize, table: HashMap<Subsample, Vec<usize>>) -> Result<Self> {
        for (s, row) in &table {
            if row.len() != test_count || row.iter().any(|&l| l >= num_labels) {
                return Err(Error::config(format!(
                    "lookup row for {{{s}}} has wrong length or label"
                )));
            }
        }
        Ok(Self {
            num_labels,
            test_count,
            table,
        })
    }

    /// For each example `t`: with probability `bias[t]` the subsample votes
    /// `favourite[t]`, otherwise a uniformly random label. Covers all
    /// subsamples of `n` clients.
    pub fn random_biased(
        n: usize,
        k: usize,
        num_labels: usize,
        favourite: &[usize],
        bias: &[f64],
        seed: u64,
    ) -> Result<Self> {
        if favourite.len() != bias.len() {
            return Err(Error::shape("favourite and bias lengths differ"));
        }
        let mut table = HashMap::new();
        for (i, s) in enumerate_subsamples(n, k)?.into_iter().enumerate() {
            let mut rng = rng_at(seed, &[i as u64]);
            let row = favourite
                .iter()
                .zip(bias)
                .map(|(&f, &b)| {
                    if rng.random_bool(b) {
                        f
                    } else {
                        rng.random_range(0..num_labels)
                    }
                })
                .collect();
            table.insert(s, row);
        }
        Self::new(num_labels, favourite.len(), table)
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn test_count(&self) -> usize {
        self.test_count
    }

    pub fn predict(&self, s: &Subsample) -> Result<&[usize]> {
        self.table
            .get(s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::config(format!("lookup table has no entry for {{{s}}}")))
    }

    /// The prediction matrix this "training" produces, exactly as
    /// `train_ensemble` would lay it out.
    pub fn matrix(&self, n: usize, k: usize, mode: Mode, count: usize, master_seed: u64) -> Result<PredictionMatrix> {
        let subs = subsamples_for(n, k, mode, count, master_seed)?;
        let rows = subs
            .iter()
            .map(|s| self.predict(s).map(<[usize]>::to_vec))
            .collect::<Result<_>>()?;
        PredictionMatrix::new(n, k, self.num_labels, self.test_count, mode, master_seed, rows, subs)
    }
}
