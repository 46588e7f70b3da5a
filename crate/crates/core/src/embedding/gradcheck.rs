use crate::imaging::SeededRng;
use crate::{Error, Result};

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `loss` at the
/// parameter indices `indices`.
pub fn finite_diff_check(
    loss: impl Fn(&[f64]) -> Result<f64>,
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    epsilon: f64,
) -> Result<GradCheck> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch(
            "gradient and parameter lengths differ".into(),
        ));
    }
    let mut p = params.to_vec();
    let mut worst = (0.0, 0);
    for &i in indices {
        let orig = p[i];
        p[i] = orig + epsilon;
        let up = loss(&p)?;
        p[i] = orig - epsilon;
        let dn = loss(&p)?;
        p[i] = orig;
        if !up.is_finite() || !dn.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {}", i)));
        }
        let e = relative_error(analytic[i], (up - dn) / (2.0 * epsilon));
        if e > worst.0 || indices.len() == 1 {
            worst = (e, i);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
    })
}

/// `k` distinct indices from `0..n` (all of them when `k >= n`).
pub fn sample_params(n: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx = rng.sample_indices(n, k);
    idx.sort();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(p: &[f64]) -> Result<f64> {
        Ok(p.iter()
            .enumerate()
            .map(|(i, v)| (i as f64 + 1.0) * v * v + v)
            .sum())
    }

    fn quad_grad(p: &[f64]) -> Vec<f64> {
        p.iter()
            .enumerate()
            .map(|(i, v)| 2.0 * (i as f64 + 1.0) * v + 1.0)
            .collect()
    }

    #[test]
    fn quadratic_is_exact() {
        let p = vec![0.3, -1.5, 2.0, 0.0];
        let r = finite_diff_check(quad, &p, &quad_grad(&p), &[0, 1, 2, 3], 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-8, "{:?}", r);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let p = vec![0.3, -1.5, 2.0, 0.0];
        let mut g = quad_grad(&p);
        g[2] *= 1.5;
        let r = finite_diff_check(quad, &p, &g, &[0, 1, 2, 3], 1e-5).unwrap();
        assert!(r.max_relative_error > 1e-2);
        assert_eq!(r.worst_index, 2);
    }

    #[test]
    fn non_finite_loss_errors() {
        let p = vec![1.0];
        assert!(finite_diff_check(|_| Ok(f64::NAN), &p, &[0.0], &[0], 1e-5).is_err());
        assert!(finite_diff_check(quad, &p, &[0.0], &[0], 0.0).is_err());
    }
}
