//! Regularized incomplete beta function, its inverse, and the one-sided
//! Clopper-Pearson lower bound.

use crate::{Error, Result};

const MAX_CF_ITER: usize = 500;
const CF_EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const QUANTILE_TOL: f64 = 1e-10;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut s = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(x: f64, a: f64, b: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=MAX_CF_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(Error::numeric(format!(
        "incomplete beta continued fraction did not converge (x = {x}, a = {a}, b = {b})"
    )))
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || a <= 0.0 || b <= 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(format!(
            "I_x(a, b) undefined for x = {x}, a = {a}, b = {b}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp();
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b)? / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a)? / b
    };
    Ok(v.clamp(0.0, 1.0))
}

/// The `q` quantile of Beta(a, b): bisection on `I_x(a, b) = q` down to a
/// bracket of width 1e-10. Returns the lower end of the final bracket, so
/// the result never overshoots the true quantile by more than rounding in
/// `I_x`.
pub fn beta_quantile(q: f64, a: f64, b: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("quantile level {q} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if reg_inc_beta(mid, a, b)? < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One-sided `1 - alpha_eff` lower confidence bound on a binomial proportion
/// from `count` successes in `total` trials.
pub fn clopper_pearson_lower(count: u64, total: u64, alpha_eff: f64) -> Result<f64> {
    if count > total || total == 0 {
        return Err(Error::domain(format!("count {count} out of total {total}")));
    }
    if !(alpha_eff > 0.0 && alpha_eff < 1.0) {
        return Err(Error::domain(format!("alpha {alpha_eff} outside (0, 1)")));
    }
    if count == 0 {
        return Ok(0.0);
    }
    beta_quantile(alpha_eff, count as f64, (total - count + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::{Binomial, Distribution};
    use statrs::function::beta::beta_reg;
    use statrs::function::gamma::ln_gamma as sr_ln_gamma;

    #[test]
    fn ln_gamma_matches_reference() {
        for &x in &[0.1, 0.5, 1.0, 1.5, 2.0, 7.25, 30.0, 500.0, 10_000.5] {
            let want = sr_ln_gamma(x);
            assert!((ln_gamma(x) - want).abs() <= 1e-12 * want.abs().max(1.0), "{x}");
        }
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn uniform_and_symmetric_cases() {
        for &x in &[0.0, 0.25, 1.0] {
            assert!((reg_inc_beta(x, 1.0, 1.0).unwrap() - x).abs() < 1e-15);
        }
        assert!((reg_inc_beta(0.5, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-14);
        // I_x(a, 1) = x^a
        assert!((reg_inc_beta(0.9, 7.0, 1.0).unwrap() - 0.9f64.powi(7)).abs() < 1e-14);
    }

    #[test]
    fn matches_statrs_and_reflection() {
        let mut rng = rng_from(11);
        for _ in 0..2000 {
            let x: f64 = rng.random();
            let a = rng.random_range(0.1..200.0);
            let b = rng.random_range(0.1..200.0);
            let v = reg_inc_beta(x, a, b).unwrap();
            assert!((v - beta_reg(a, b, x)).abs() <= 1e-12, "x={x} a={a} b={b}");
            let w = reg_inc_beta(1.0 - x, b, a).unwrap();
            assert!((v + w - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn bad_arguments() {
        assert!(reg_inc_beta(1.5, 1.0, 1.0).is_err());
        assert!(reg_inc_beta(0.5, 0.0, 1.0).is_err());
        assert!(beta_quantile(0.0, 1.0, 1.0).is_err());
        assert!(clopper_pearson_lower(5, 4, 0.1).is_err());
    }

    #[test]
    fn quantile_closed_form_and_symmetry() {
        // I_x(N, 1) = x^N, so the q quantile is q^(1/N)
        let q = beta_quantile(0.001, 500.0, 1.0).unwrap();
        let want = 0.001f64.powf(1.0 / 500.0);
        assert!((q - want).abs() <= 1e-10);
        assert!(q <= want);
        assert!((want - 0.986_279_485_631).abs() < 1e-11);
        for &a in &[0.7, 3.0, 40.0] {
            assert!((beta_quantile(0.5, a, a).unwrap() - 0.5).abs() <= 1e-10);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let mut rng = rng_from(12);
        for _ in 0..300 {
            let x = rng.random_range(0.02..0.98);
            let a = rng.random_range(0.5..60.0);
            let b = rng.random_range(0.5..60.0);
            let q = reg_inc_beta(x, a, b).unwrap();
            if q <= 1e-9 || q >= 1.0 - 1e-9 {
                continue;
            }
            assert!((beta_quantile(q, a, b).unwrap() - x).abs() <= 1e-8, "x={x} a={a} b={b}");
        }
    }

    #[test]
    fn clopper_pearson_values() {
        let p = clopper_pearson_lower(500, 500, 0.001).unwrap();
        assert!((p - 0.001f64.powf(1.0 / 500.0)).abs() <= 1e-10);
        assert_eq!(clopper_pearson_lower(0, 500, 0.001).unwrap(), 0.0);
    }

    #[test]
    fn clopper_pearson_coverage() {
        let (p, n, alpha) = (0.7, 100u64, 0.05);
        let trials = 10_000;
        let binom = Binomial::new(n, p).unwrap();
        let mut rng = rng_from(13);
        // cache by count: bounds only depend on it
        let bounds: Vec<f64> = (0..=n).map(|c| clopper_pearson_lower(c, n, alpha).unwrap()).collect();
        let bad = (0..trials)
            .filter(|_| bounds[binom.sample(&mut rng) as usize] > p)
            .count() as f64
            / trials as f64;
        let slack = 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt();
        assert!(bad <= alpha + slack, "{bad}");
    }
}
