//! Browser bindings for exploring certificates without training data.
//!
//! Every export returns JSON or CSV text; errors come back as strings.

use std::fmt::Write as _;

use fedcert::certify::{
    binom_ratio, cert_condition_bounds, certify_with_bounds, clopper_pearson_lower, search_level,
    CertifiedAccuracyCurve, ProbBounds,
};
use fedcert::rng::rng_from;
use rand::Rng as _;
use wasm_bindgen::prelude::*;

/// Rows shown in the level table.
const MAX_TABLE_ROWS: usize = 200;

fn check_nk(n: usize, k: usize) -> Result<(), String> {
    if k == 0 || k > n {
        return Err(format!("need 1 <= k <= n, got n = {n}, k = {k}"));
    }
    Ok(())
}

fn level_json(level: Option<usize>) -> String {
    level.map_or_else(|| "null".to_string(), |m| m.to_string())
}

/// Certified level for the given probability bounds, with the ratio
/// `C(n-m,k)/C(n,k)` and the certification condition for each `m`.
#[wasm_bindgen]
pub fn certified_level(n: usize, k: usize, p_lower: f64, p_upper: f64) -> Result<String, String> {
    check_nk(n, k)?;
    let bounds = ProbBounds::from_f64(p_lower, p_upper).map_err(|e| e.to_string())?;
    let level = search_level(&bounds, n, k).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for m in 0..=(n - k).min(MAX_TABLE_ROWS) {
        let ratio = binom_ratio(n, k, m).map_err(|e| e.to_string())?;
        let holds = cert_condition_bounds(&bounds, n, k, m).map_err(|e| e.to_string())?;
        rows.push(format!(r#"{{"m":{m},"ratio":{},"holds":{holds}}}"#, ratio.float_value));
    }
    Ok(format!(
        r#"{{"m_star":{},"rows":[{}]}}"#,
        level_json(level),
        rows.join(",")
    ))
}

/// Monte Carlo certificate from `count` of `total` sampled votes for the top
/// label, with the failure budget split over `d` test examples.
#[wasm_bindgen]
pub fn monte_carlo_certificate(
    n: usize,
    k: usize,
    count: u64,
    total: u64,
    alpha: f64,
    d: usize,
) -> Result<String, String> {
    check_nk(n, k)?;
    if !(alpha > 0.0 && alpha < 1.0) || d == 0 {
        return Err("need 0 < alpha < 1 and d >= 1".into());
    }
    let lower = clopper_pearson_lower(count, total, alpha / d as f64).map_err(|e| e.to_string())?;
    let bounds = ProbBounds::complement(lower).map_err(|e| e.to_string())?;
    let level = search_level(&bounds, n, k).map_err(|e| e.to_string())?;
    Ok(format!(
        r#"{{"p_lower":{},"p_upper":{},"m_star":{}}}"#,
        bounds.lower_f64(),
        bounds.upper_f64(),
        level_json(level)
    ))
}

/// Simulated certified-accuracy curve: each of `d` examples has a true-label
/// vote probability drawn uniformly from `[p_min, p_max]`, `total` votes are
/// sampled, the rest go to one wrong label, and the examples are certified
/// at `alpha`. Returns `m,certified_accuracy` CSV.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_curve(
    n: usize,
    k: usize,
    total: u64,
    alpha: f64,
    d: usize,
    p_min: f64,
    p_max: f64,
    seed: u64,
) -> Result<String, String> {
    check_nk(n, k)?;
    if !(0.0..=1.0).contains(&p_min) || !(p_min..=1.0).contains(&p_max) {
        return Err("need 0 <= p_min <= p_max <= 1".into());
    }
    if !(alpha > 0.0 && alpha < 1.0) || d == 0 || total == 0 {
        return Err("need 0 < alpha < 1, d >= 1 and total >= 1".into());
    }
    let mut rng = rng_from(seed);
    let alpha_eff = alpha / d as f64;
    let mut certs = Vec::with_capacity(d);
    for _ in 0..d {
        let p: f64 = if p_max > p_min {
            rng.random_range(p_min..=p_max)
        } else {
            p_min
        };
        let right = (0..total).filter(|_| rng.random::<f64>() < p).count() as u64;
        let (label, votes) = if right >= total - right {
            (0, right)
        } else {
            (1, total - right)
        };
        let lower = clopper_pearson_lower(votes, total, alpha_eff).map_err(|e| e.to_string())?;
        let bounds = ProbBounds::complement(lower).map_err(|e| e.to_string())?;
        certs.push(certify_with_bounds(label, bounds, n, k, false).map_err(|e| e.to_string())?);
    }
    let curve = CertifiedAccuracyCurve::compute(&certs, &vec![0; d], n - k, Some(alpha)).map_err(|e| e.to_string())?;
    let mut csv = String::new();
    let _ = write!(csv, "{}", curve.to_csv());
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_gap_level() {
        let json = certified_level(30, 2, 1.0, 0.0).unwrap();
        assert!(
            json.starts_with(r#"{"m_star":8,"rows":[{"m":0,"ratio":1,"holds":true}"#),
            "{json}"
        );
        // C(21,2)/C(30,2) = 210/435
        assert!(
            json.contains(r#"{"m":9,"ratio":0.4827586206896552,"holds":false}"#),
            "{json}"
        );
        assert!(certified_level(3, 4, 1.0, 0.0).is_err());
        assert!(certified_level(10, 2, 0.4, 0.4)
            .unwrap()
            .starts_with(r#"{"m_star":null"#));
    }

    #[test]
    fn monte_carlo_all_votes() {
        // lower bound is alpha^(1/N) when every vote agrees
        let json = monte_carlo_certificate(100, 5, 500, 500, 0.001, 1).unwrap();
        assert!(json.starts_with(r#"{"p_lower":0.98627948"#), "{json}");
        assert!(monte_carlo_certificate(100, 5, 600, 500, 0.001, 1).is_err());
        assert!(monte_carlo_certificate(100, 5, 10, 500, 1.5, 1).is_err());
    }

    #[test]
    fn simulated_curve_is_monotone_and_seeded() {
        let csv = simulate_curve(100, 5, 500, 0.001, 50, 0.6, 1.0, 3).unwrap();
        assert_eq!(csv.lines().count(), 1 + 96);
        let ca: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert!(ca.windows(2).all(|w| w[0] >= w[1]));
        assert!(ca[0] > 0.5);
        assert_eq!(csv, simulate_curve(100, 5, 500, 0.001, 50, 0.6, 1.0, 3).unwrap());
        assert!(simulate_curve(10, 2, 100, 0.01, 5, 0.9, 0.2, 0).is_err());
    }
}
