//! Certified security levels.
//!
//! With `C = C(n, k)` subsamples and `m` malicious clients, at most
//! `C - C(n - m, k)` subsamples contain a malicious client. Each one can move
//! one vote from the predicted label `y` to the runner-up `z`, so the
//! prediction survives when
//!
//! ```text
//! ceil(p_y * C) - floor(p_z * C) > 2 * (C - C(n - m, k))
//! ```
//!
//! for lower/upper bounds on `p_y`/`p_z`. All comparisons use big integers
//! and exact rationals; a floating-point bound is converted to the rational
//! it represents exactly.

mod beta;
pub mod report;

pub use beta::{beta_quantile, clopper_pearson_lower, ln_gamma, reg_inc_beta};
pub use report::{parse_report, report_csv, ReportRow};

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::ensemble::{ensemble_predict, label_probabilities, tie_seed, Mode, PredictionMatrix};
use crate::{Error, Result};

/// `C(n, k)` as a big integer (zero when `k > n`).
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // exact at every step: acc = C(n - k + i + 1, i + 1)
        acc = acc * BigUint::from(n - k + i + 1) / BigUint::from(i + 1);
    }
    acc
}

/// `C(n - m, k) / C(n, k)`: the fraction of subsamples free of `m` given
/// malicious clients.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomRatio {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub value: BigRational,
    pub float_value: f64,
}

fn check_level(n: usize, k: usize, m: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::domain(format!("need 1 <= k <= n, got n = {n}, k = {k}")));
    }
    if m > n - k {
        return Err(Error::domain(format!("m = {m} exceeds n - k = {}", n - k)));
    }
    Ok(())
}

pub fn binom_ratio(n: usize, k: usize, m: usize) -> Result<BinomRatio> {
    check_level(n, k, m)?;
    let mut num = BigInt::one();
    let mut den = BigInt::one();
    for i in 0..k {
        num *= BigInt::from(n - m - i);
        den *= BigInt::from(n - i);
    }
    let value = BigRational::new(num, den);
    let float_value = value.to_f64().unwrap_or(f64::NAN);
    Ok(BinomRatio {
        n,
        k,
        m,
        value,
        float_value,
    })
}

fn rat(v: u64) -> BigRational {
    BigRational::from_integer(v.into())
}

/// The exact-probability condition `p_y - p_z > 2 - 2 C(n-m,k)/C(n,k)`.
pub fn cert_condition_exact(p_y: &BigRational, p_z: &BigRational, n: usize, k: usize, m: usize) -> Result<bool> {
    let r = binom_ratio(n, k, m)?;
    Ok(p_y - p_z > rat(2) - rat(2) * r.value)
}

/// A lower bound on the top label's probability and an upper bound on the
/// runner-up's.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBounds {
    pub p_lower: BigRational,
    pub p_upper_runner: BigRational,
}

impl ProbBounds {
    pub fn new(p_lower: BigRational, p_upper_runner: BigRational) -> Result<Self> {
        let unit = |p: &BigRational| *p >= BigRational::zero() && *p <= rat(1);
        if !unit(&p_lower) || !unit(&p_upper_runner) {
            return Err(Error::domain(format!(
                "bounds {p_lower}, {p_upper_runner} outside [0, 1]"
            )));
        }
        Ok(Self {
            p_lower,
            p_upper_runner,
        })
    }

    /// Exact rationals of the given doubles.
    pub fn from_f64(p_lower: f64, p_upper_runner: f64) -> Result<Self> {
        Self::new(exact_rational(p_lower)?, exact_rational(p_upper_runner)?)
    }

    /// `p_upper_runner = 1 - p_lower`, computed exactly.
    pub fn complement(p_lower: f64) -> Result<Self> {
        let lo = exact_rational(p_lower)?;
        let up = rat(1) - &lo;
        Self::new(lo, up)
    }

    pub fn has_gap(&self) -> bool {
        self.p_lower > self.p_upper_runner
    }

    pub fn lower_f64(&self) -> f64 {
        self.p_lower.to_f64().unwrap_or(f64::NAN)
    }

    pub fn upper_f64(&self) -> f64 {
        self.p_upper_runner.to_f64().unwrap_or(f64::NAN)
    }
}

/// The rational number a finite double denotes.
pub fn exact_rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| Error::numeric(format!("{x} is not a finite number")))
}

fn ceil_times(p: &BigRational, c: &BigInt) -> BigInt {
    let v = p * BigRational::from_integer(c.clone());
    v.numer().div_ceil(v.denom())
}

fn floor_times(p: &BigRational, c: &BigInt) -> BigInt {
    let v = p * BigRational::from_integer(c.clone());
    v.numer().div_floor(v.denom())
}

/// Vote counts the bounds guarantee: `(ceil(p_lower C), floor(p_upper C))`.
pub fn bound_counts(bounds: &ProbBounds, n: usize, k: usize) -> (BigInt, BigInt) {
    let c = BigInt::from(binomial(n as u64, k as u64));
    (ceil_times(&bounds.p_lower, &c), floor_times(&bounds.p_upper_runner, &c))
}

/// The bound-based condition after rounding the bounds to multiples of
/// `1 / C(n, k)`.
pub fn cert_condition_bounds(bounds: &ProbBounds, n: usize, k: usize, m: usize) -> Result<bool> {
    check_level(n, k, m)?;
    let c = BigInt::from(binomial(n as u64, k as u64));
    let clean = BigInt::from(binomial((n - m) as u64, k as u64));
    let (a, b) = bound_counts(bounds, n, k);
    Ok(a - b + BigInt::from(2) * clean > BigInt::from(2) * c)
}

/// Largest `m` in `[0, hi]` with `pred(m)`, assuming `pred(0)` holds and the
/// true values form a prefix.
fn last_true(hi: usize, pred: impl Fn(usize) -> Result<bool>) -> Result<usize> {
    let (mut lo, mut hi) = (0usize, hi);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(lo)
}

/// Largest certified `m`, or `None` when the bounds have no gap.
pub fn search_level(bounds: &ProbBounds, n: usize, k: usize) -> Result<Option<usize>> {
    check_level(n, k, 0)?;
    if !bounds.has_gap() {
        return Ok(None);
    }
    last_true(n - k, |m| cert_condition_bounds(bounds, n, k, m)).map(Some)
}

/// Outcome for one test example.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// `None` is ABSTAIN.
    pub predicted: Option<usize>,
    pub m_star: Option<usize>,
    pub bounds: ProbBounds,
    /// True for exact certificates, false for ones holding with confidence `1 - alpha`.
    pub deterministic: bool,
}

impl Certificate {
    /// Whether the certificate says the prediction stands with `m` malicious clients.
    pub fn certifies(&self, m: usize) -> bool {
        self.m_star.is_some_and(|s| s >= m)
    }

    pub fn mode(&self) -> Mode {
        if self.deterministic {
            Mode::Exact
        } else {
            Mode::Sampled
        }
    }
}

/// Certificate of `predicted` from the given bounds.
pub fn certify_with_bounds(
    predicted: usize,
    bounds: ProbBounds,
    n: usize,
    k: usize,
    deterministic: bool,
) -> Result<Certificate> {
    let m_star = search_level(&bounds, n, k)?;
    Ok(Certificate {
        predicted: m_star.map(|_| predicted),
        m_star,
        bounds,
        deterministic,
    })
}

fn map_columns<T: Send>(d: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..d).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    (0..d).map(f).collect()
}

/// Monte Carlo certification of a SAMPLED matrix: Clopper-Pearson lower bound
/// at `alpha / d` per example, runner-up bound `1 - p_lower`.
pub fn certify_all(matrix: &PredictionMatrix, alpha: f64) -> Result<Vec<Certificate>> {
    if matrix.mode() != Mode::Sampled {
        return Err(Error::config("certify_all needs a SAMPLED matrix; use exact_certify"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config(format!("alpha = {alpha} outside (0, 1)")));
    }
    let d = matrix.test_count();
    let alpha_eff = alpha / d.max(1) as f64;
    let total = matrix.num_models() as u64;
    map_columns(d, |t| {
        let p = label_probabilities(matrix, t)?;
        let y = ensemble_predict(&p, Mode::Sampled, tie_seed(matrix.master_seed(), t));
        let lower = clopper_pearson_lower(p.counts()[y], total, alpha_eff)?;
        certify_with_bounds(y, ProbBounds::complement(lower)?, matrix.n(), matrix.k(), false)
    })
}

/// Certificates from the exact label probabilities of an EXACT matrix.
pub fn exact_certify(matrix: &PredictionMatrix) -> Result<Vec<Certificate>> {
    if matrix.mode() != Mode::Exact {
        return Err(Error::config("exact_certify needs an EXACT matrix"));
    }
    let (n, k) = (matrix.n(), matrix.k());
    map_columns(matrix.test_count(), |t| {
        let p = label_probabilities(matrix, t)?;
        let y = ensemble_predict(&p, Mode::Exact, 0);
        let p_y = p.p(y);
        let p_z = p.runner_up(y).map_or_else(BigRational::zero, |z| p.p(z));
        let m_star = if p_y > p_z {
            Some(last_true(n - k, |m| cert_condition_exact(&p_y, &p_z, n, k, m))?)
        } else {
            None
        };
        Ok(Certificate {
            predicted: m_star.map(|_| y),
            m_star,
            bounds: ProbBounds::new(p_y, p_z)?,
            deterministic: true,
        })
    })
}

/// Fraction of examples predicted correctly and certified at level `m` or more.
pub fn certified_accuracy(certs: &[Certificate], true_labels: &[usize], m: usize) -> Result<BigRational> {
    if certs.is_empty() || certs.len() != true_labels.len() {
        return Err(Error::shape(format!(
            "{} certificates for {} labels",
            certs.len(),
            true_labels.len()
        )));
    }
    let hits = certs
        .iter()
        .zip(true_labels)
        .filter(|(c, &y)| c.predicted == Some(y) && c.certifies(m))
        .count();
    Ok(BigRational::new(hits.into(), certs.len().into()))
}

/// `CA@m` for `m = 0..=max_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertifiedAccuracyCurve {
    pub ca: Vec<BigRational>,
    /// `None` for exact certificates.
    pub alpha: Option<f64>,
}

impl CertifiedAccuracyCurve {
    pub fn compute(certs: &[Certificate], true_labels: &[usize], max_m: usize, alpha: Option<f64>) -> Result<Self> {
        let ca = (0..=max_m)
            .map(|m| certified_accuracy(certs, true_labels, m))
            .collect::<Result<Vec<_>>>()?;
        let curve = Self { ca, alpha };
        curve.check_monotone()?;
        Ok(curve)
    }

    pub fn check_monotone(&self) -> Result<()> {
        if let Some(m) = (1..self.ca.len()).find(|&m| self.ca[m] > self.ca[m - 1]) {
            return Err(Error::numeric(format!("certified accuracy increases at m = {m}")));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,certified_accuracy\n");
        for (m, v) in self.ca.iter().enumerate() {
            s.push_str(&format!("{m},{}\n", v.to_f64().unwrap_or(f64::NAN)));
        }
        s
    }
}
