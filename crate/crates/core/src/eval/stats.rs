use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub dof: usize,
    pub mean_difference: f64,
    pub sd_difference: f64,
    pub n: usize,
}

/// Paired two-tailed t-test on differences `d_i = b_i - a_i`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    t_test_differences(&d)
}

/// One-sample t-test of `d` against zero: `t = d̄ / (s_d/√n)`,
/// `p = 2 P(T_{n-1} ≥ |t|)`.
pub fn t_test_differences(d: &[f64]) -> Result<TTest> {
    let n = d.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "paired t-test needs n >= 2, got {}",
            n
        )));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired differences".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= 1e-300 || sd <= 1e-12 * mean.abs() {
        return Err(Error::Degenerate(
            "zero variance in paired differences".into(),
        ));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dof = n - 1;
    let p = (2.0 * (1.0 - student_t_cdf(t.abs(), dof as f64))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        dof,
        mean_difference: mean,
        sd_difference: sd,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SeededRng;

    #[test]
    fn lgamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_closed_forms() {
        for t in [-3.0f64, -0.7, 0.0, 0.4, 1.0, 6.9282] {
            let df1 = 0.5 + t.atan() / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - df1).abs() < 1e-12);
            let df2 = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - df2).abs() < 1e-12);
        }
    }

    #[test]
    fn fixture_df2() {
        let r = t_test_differences(&[0.008, 0.006, 0.010]).unwrap();
        assert!((r.mean_difference - 0.008).abs() < 1e-15);
        assert!((r.sd_difference - 0.002).abs() < 1e-15);
        assert!((r.t - 6.9282).abs() < 1e-4);
        assert_eq!(r.dof, 2);
        assert!((r.p - 0.0202).abs() < 1e-3);
    }

    #[test]
    fn degenerate_and_symmetric() {
        assert!(matches!(
            t_test_differences(&[0.3, 0.3, 0.3]),
            Err(Error::Degenerate(_))
        ));
        assert!(t_test_differences(&[1.0]).is_err());
        let r = t_test_differences(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_n3_matches_closed_form() {
        let mut rng = SeededRng::new(7);
        for _ in 0..1000 {
            let d: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let r = t_test_differences(&d).unwrap();
            let t = r.t.abs();
            let p = 2.0 * (0.5 - t / (2.0 * (2.0 + t * t).sqrt()));
            assert!((r.p - p).abs() < 1e-6);
        }
    }
}
