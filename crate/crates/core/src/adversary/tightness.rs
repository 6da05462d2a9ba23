//! The four constructions showing the certified level cannot be improved.
//!
//! Clients `0..n` form `C`. The malicious set is the last `m` of them, which
//! `C'` replaces with fresh clients `n..n+m`. `O_C`/`O_C'` are the
//! `k`-subsets of `C`/`C'`, `O_o` the subsets of the shared honest clients.
//! Each case places a set `O_A` voting `y` and `O_B` voting `z` so that the
//! clean probabilities meet the bounds, while the subsamples of `C'` hand
//! `z` the majority.
//!
//! Label `0` is `y`, `1` is `z`, and `2, 3, ...` absorb the remaining
//! subsamples, each taking at most `floor(p_upper * C)` of them so that `z`
//! stays a largest rival. When `floor(p_upper * C) = 0` no rival may receive
//! any vote; the remainder then goes to `y`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::Rng as _;

use super::{worst_case_safe_level, LookupBaseAlgorithm, MaliciousSet};
use crate::certify::{binomial, bound_counts, search_level, ProbBounds};
use crate::ensemble::{enumerate_subsamples, Mode, Subsample};
use crate::rng::rng_from;
use crate::{Error, Result};

const Y: usize = 0;
const Z: usize = 1;

/// Largest `n` verify_tightness enumerates.
pub const MAX_TIGHTNESS_CLIENTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// The bounds hold exactly and the prediction breaks or ties.
    Tight,
    /// No table satisfying the bounds can break the prediction at this level.
    NotApplicable,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Tight => "TIGHT",
            Verdict::NotApplicable => "NOT_APPLICABLE",
            Verdict::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleSpacePartition {
    pub o_c: Vec<Subsample>,
    pub o_cprime: Vec<Subsample>,
    pub o_o: Vec<Subsample>,
    pub o_a: Vec<Subsample>,
    pub o_b: Vec<Subsample>,
}

#[derive(Debug, Clone)]
pub struct TightnessInstance {
    pub case_id: u8,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Defined on every subsample of `C` and of `C'`; one test example.
    pub algorithm: LookupBaseAlgorithm,
    pub malicious: MaliciousSet,
    pub sets: SubsampleSpacePartition,
}

impl TightnessInstance {
    fn votes(&self, space: &[Subsample]) -> Result<Vec<u64>> {
        let mut counts = vec![0u64; self.algorithm.num_labels()];
        for s in space {
            counts[self.algorithm.predict(s)?[0]] += 1;
        }
        Ok(counts)
    }

    /// Vote counts of the clean ensemble.
    pub fn clean_votes(&self) -> Result<Vec<u64>> {
        self.votes(&self.sets.o_c)
    }

    /// Vote counts once the malicious clients are swapped in.
    pub fn attacked_votes(&self) -> Result<Vec<u64>> {
        self.votes(&self.sets.o_cprime)
    }
}

struct Counts {
    c: u64,
    clean: u64,
    a: u64,
    q: u64,
}

fn counts(n: usize, k: usize, m: usize, bounds: &ProbBounds) -> Result<Counts> {
    let (a, q) = bound_counts(bounds, n, k);
    let to = |v: BigInt| v.to_u64().ok_or_else(|| Error::domain("count out of range"));
    Ok(Counts {
        c: binomial(n as u64, k as u64)
            .to_u64()
            .ok_or_else(|| Error::domain("C(n,k) out of range"))?,
        clean: binomial(n.saturating_sub(m) as u64, k as u64).to_u64().unwrap_or(0),
        a: to(a)?,
        q: to(q)?,
    })
}

fn common_preconditions(n: usize, k: usize, m: usize, bounds: &ProbBounds) -> std::result::Result<(), String> {
    let mut failed = Vec::new();
    if k == 0 || k > n {
        failed.push(format!("1 <= k <= n (n = {n}, k = {k})"));
    }
    if !bounds.has_gap() {
        failed.push("p_lower > p_upper".to_string());
    }
    if &bounds.p_lower + &bounds.p_upper_runner > BigRational::from_integer(1.into()) {
        failed.push("p_lower + p_upper <= 1".to_string());
    }
    if m == 0 || m > n {
        failed.push(format!("1 <= m <= n (m = {m})"));
    }
    if failed.is_empty() {
        match search_level(bounds, n, k) {
            Ok(Some(ms)) if m <= ms => failed.push(format!("m > m* (m = {m}, m* = {ms})")),
            Err(e) => failed.push(e.to_string()),
            _ => {}
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(failed.join("; "))
    }
}

/// The case's own hypotheses at `m` (common ones checked separately).
fn case_holds(case_id: u8, n: usize, k: usize, m: usize, bounds: &ProbBounds) -> bool {
    if case_id == 1 {
        return m >= n - k;
    }
    if m >= n - k {
        return false;
    }
    // p * C against integers: the same as p against C(n-m,k)/C(n,k)
    let c = BigRational::from_integer(BigInt::from(binomial(n as u64, k as u64)));
    let clean = BigRational::from_integer(BigInt::from(binomial((n - m) as u64, k as u64)));
    let lo = &bounds.p_lower * &c;
    let up = &bounds.p_upper_runner * &c;
    let y_small = lo <= &c - &clean;
    match case_id {
        2 => y_small && up <= clean,
        3 => y_small && up >= clean,
        4 => !y_small,
        _ => false,
    }
}

/// The first case (in the order 1, 2, 3, 4) whose hypotheses hold at `m`, or
/// the reasons none does.
pub fn applicable_case(n: usize, k: usize, m: usize, bounds: &ProbBounds) -> std::result::Result<u8, String> {
    common_preconditions(n, k, m, bounds)?;
    (1..=4)
        .find(|&c| case_holds(c, n, k, m, bounds))
        .ok_or_else(|| "none of cases 1-4 holds".to_string())
}

fn take(pool: &mut Vec<Subsample>, count: u64, what: &str) -> Result<Vec<Subsample>> {
    let count = count as usize;
    if count > pool.len() {
        return Err(Error::domain(format!(
            "{what}: need {count} subsamples, only {} left",
            pool.len()
        )));
    }
    Ok(pool.drain(..count).collect())
}

/// Builds `A*` and the malicious set for one case at level `m`.
pub fn build_tightness_instance(
    n: usize,
    k: usize,
    m: usize,
    bounds: &ProbBounds,
    case_id: u8,
) -> Result<TightnessInstance> {
    common_preconditions(n, k, m, bounds).map_err(|why| Error::domain(format!("preconditions failed: {why}")))?;
    if !case_holds(case_id, n, k, m, bounds) {
        return Err(Error::domain(format!(
            "case {case_id} hypotheses do not hold at m = {m}"
        )));
    }
    let cnt = counts(n, k, m, bounds)?;

    let honest = n - m;
    let o_c = enumerate_subsamples(n, k)?;
    let (mut o_o, mut c_only): (Vec<Subsample>, Vec<Subsample>) =
        o_c.iter().cloned().partition(|s| s.ids().iter().all(|&c| c < honest));
    let o_o_all = o_o.clone();
    let cprime_ids: Vec<usize> = (0..honest).chain(n..n + m).collect();
    let o_cprime: Vec<Subsample> = enumerate_subsamples(n, k)?
        .into_iter()
        .map(|s| Subsample::new(s.ids().iter().map(|&i| cprime_ids[i]).collect(), n + m))
        .collect::<Result<_>>()?;

    let mut label: HashMap<Subsample, usize> = HashMap::new();
    let (o_a, o_b);
    match case_id {
        1 => {
            // O_o is empty for m > n - k but holds one subsample at m = n - k;
            // O_B takes it first so that z still owns all of O_C'.
            let from_o = cnt.q.min(o_o.len() as u64);
            let mut b = take(&mut o_o, from_o, "case 1 O_B")?;
            b.extend(take(&mut c_only, cnt.q - from_o, "case 1 O_B")?);
            let from_c = cnt.a.min(c_only.len() as u64);
            let mut a = take(&mut c_only, from_c, "case 1 O_A")?;
            a.extend(take(&mut o_o, cnt.a - from_c, "case 1 O_A")?);
            o_a = a;
            o_b = b;
        }
        2 => {
            o_a = take(&mut c_only, cnt.a, "case 2 O_A")?;
            o_b = take(&mut o_o, cnt.q, "case 2 O_B")?;
        }
        3 => {
            o_a = take(&mut c_only, cnt.a, "case 3 O_A")?;
            o_b = take(&mut c_only, cnt.q - cnt.clean, "case 3 O_B")?;
            // all of O_o votes z as part of O_C'
            for s in o_o.drain(..) {
                label.insert(s, Z);
            }
        }
        4 => {
            o_a = take(&mut o_o, cnt.a + cnt.clean - cnt.c, "case 4 O_A")?;
            o_b = take(&mut o_o, cnt.q, "case 4 O_B")?;
            for s in c_only.drain(..) {
                label.insert(s, Y);
            }
        }
        other => return Err(Error::domain(format!("unknown case {other}"))),
    }
    for s in &o_a {
        label.insert(s.clone(), Y);
    }
    for s in &o_b {
        label.insert(s.clone(), Z);
    }
    // O_C' - O_o: subsamples with a replacement client
    for s in o_cprime.iter().filter(|s| s.ids().iter().any(|&c| c >= n)) {
        label.insert(s.clone(), Z);
    }
    // whatever is left in O_C
    let mut next_label = Z + 1;
    let mut used = 0u64;
    for s in c_only.into_iter().chain(o_o) {
        if label.contains_key(&s) {
            continue;
        }
        if cnt.q == 0 {
            label.insert(s, Y);
            continue;
        }
        if used == cnt.q {
            next_label += 1;
            used = 0;
        }
        label.insert(s, next_label);
        used += 1;
    }
    let num_labels = (next_label + 1).max(3);
    let table = label.into_iter().map(|(s, l)| (s, vec![l])).collect();
    Ok(TightnessInstance {
        case_id,
        n,
        k,
        m,
        algorithm: LookupBaseAlgorithm::new(num_labels, 1, table)?,
        malicious: MaliciousSet::new(honest..n, n)?,
        sets: SubsampleSpacePartition {
            o_c,
            o_cprime,
            o_o: o_o_all,
            o_a,
            o_b,
        },
    })
}

/// Outcome of one tightness check.
#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    pub case_id: Option<u8>,
    pub n: usize,
    pub k: usize,
    pub bounds: ProbBounds,
    pub m_star: usize,
    pub break_at: usize,
    /// `A*` meets the bounds: `p_y >= p_lower`, `max_{i != y} p_i = p_z <= p_upper`.
    pub bounds_hold: bool,
    /// `y` does not win outright under `C'`.
    pub breaks: bool,
    /// `A*` itself is robust to every malicious set of size `<= m*`.
    pub robust_below: bool,
    pub verdict: Verdict,
    pub note: String,
}

/// Computes `m*`, builds the applicable instance at `m* + 1` and checks it
/// by enumeration.
pub fn verify_tightness(n: usize, k: usize, bounds: &ProbBounds) -> Result<TightnessReport> {
    if n > MAX_TIGHTNESS_CLIENTS {
        return Err(Error::Cap {
            what: "tightness clients".into(),
            count: n.to_string(),
            cap: MAX_TIGHTNESS_CLIENTS as u64,
        });
    }
    let m_star = search_level(bounds, n, k)?.ok_or_else(|| Error::domain("preconditions failed: p_lower > p_upper"))?;
    let m = m_star + 1;
    let case = applicable_case(n, k, m, bounds).map_err(|why| Error::domain(format!("preconditions failed: {why}")))?;
    let inst = build_tightness_instance(n, k, m, bounds, case)?;
    let cnt = counts(n, k, m, bounds)?;

    let clean = inst.clean_votes()?;
    let rival_max = clean
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != Y)
        .map(|(_, &v)| v)
        .max()
        .unwrap_or(0);
    let bounds_hold = clean[Y] >= cnt.a && clean[Z] == rival_max && clean[Z] <= cnt.q;
    let attacked = inst.attacked_votes()?;
    let breaks = attacked.iter().enumerate().any(|(i, &v)| i != Y && v >= attacked[Y]);

    let matrix = inst.algorithm.matrix(n, k, Mode::Exact, 0, 0)?;
    let robust_below = worst_case_safe_level(&matrix, 0)? >= m_star;

    let (verdict, note) = if bounds_hold && breaks && robust_below {
        (Verdict::Tight, String::new())
    } else if cnt.q == 0 && bounds_hold && !breaks && robust_below {
        (
            Verdict::NotApplicable,
            "floor(p_upper*C) = 0 forces a unanimous table, which survives m*+1".to_string(),
        )
    } else {
        (
            Verdict::Fail,
            format!("bounds_hold={bounds_hold} breaks={breaks} robust_below={robust_below}"),
        )
    };
    Ok(TightnessReport {
        case_id: Some(case),
        n,
        k,
        bounds: bounds.clone(),
        m_star,
        break_at: m,
        bounds_hold,
        breaks,
        robust_below,
        verdict,
        note,
    })
}

/// `count` seeded bound pairs with `p_lower > p_upper` and `p_lower + p_upper <= 1`.
pub fn random_bound_pairs(count: usize, seed: u64) -> Result<Vec<ProbBounds>> {
    let mut rng = rng_from(seed);
    (0..count)
        .map(|_| {
            let lo: f64 = rng.random_range(0.05..=1.0);
            let up = rng.random::<f64>() * lo.min(1.0 - lo);
            ProbBounds::from_f64(lo, up)
        })
        .collect()
}

/// Runs [`verify_tightness`] on every `(n, k, bounds)` combination. A
/// construction error becomes a `FAIL` row carrying the message.
pub fn tightness_grid(ns: &[usize], ks: &[usize], pairs: &[ProbBounds]) -> Result<Vec<TightnessReport>> {
    let mut out = Vec::new();
    for &n in ns {
        for &k in ks {
            for b in pairs {
                let rep = match verify_tightness(n, k, b) {
                    Ok(r) => r,
                    Err(e @ (Error::Domain(_) | Error::Config(_))) => TightnessReport {
                        case_id: None,
                        n,
                        k,
                        bounds: b.clone(),
                        m_star: search_level(b, n, k)?.unwrap_or(0),
                        break_at: 0,
                        bounds_hold: false,
                        breaks: false,
                        robust_below: false,
                        verdict: Verdict::Fail,
                        note: e.to_string(),
                    },
                    Err(e) => return Err(e),
                };
                out.push(rep);
            }
        }
    }
    Ok(out)
}

pub const TIGHTNESS_HEADER: &str = "case,n,k,p_lower,p_upper,m_star,break_at,verdict";

pub fn tightness_report_csv(reports: &[TightnessReport]) -> String {
    let mut s = format!("{TIGHTNESS_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.case_id.map_or_else(|| "-".to_string(), |c| c.to_string()),
            r.n,
            r.k,
            r.bounds.lower_f64(),
            r.bounds.upper_f64(),
            r.m_star,
            r.break_at,
            r.verdict
        );
    }
    s
}
