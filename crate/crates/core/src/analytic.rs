//! Closed-form probabilities for the linear DI setting.
//!
//! Everything is expressed through the standard normal CDF `phi`. Upper
//! tails are evaluated as `0.5 * erfc(z / sqrt 2)` rather than `1 - phi(z)`
//! so small probabilities keep their relative precision.

use std::f64::consts::SQRT_2;

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF, absolute error well below 1e-10.
pub fn phi(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(Error::Domain("phi(NaN)".into()));
    }
    Ok(norm_cdf(z))
}

pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// `1 - phi(z)`.
pub(crate) fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

fn require(cond: bool, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(what.to_string()))
    }
}

/// Probability that DI decides correctly for a fully revealed training set:
/// `1 - phi(-sqrt(D) / (2 sqrt 2))`.
pub fn di_success_prob(d: f64) -> Result<f64> {
    require(d >= 1.0, "D must be >= 1")?;
    Ok(norm_cdf(d.sqrt() / (2.0 * SQRT_2)))
}

/// Held-out accuracy of the closed-form linear model:
/// `1 - phi(-m |u|^2 / (sqrt(m D) sigma^2))`.
pub fn accuracy_bound(m: f64, u_norm_sq: f64, sigma: f64, d: f64) -> Result<f64> {
    require(m > 0.0 && u_norm_sq > 0.0 && sigma > 0.0 && d > 0.0, "inputs must be positive")?;
    Ok(norm_cdf(m * u_norm_sq / ((m * d).sqrt() * sigma * sigma)))
}

/// False-positive probability at the optimal threshold `lambda = D sigma^2 / 2`:
/// `1 - phi(sqrt(k D) / (2 sqrt(2 m)))`.
pub fn analytic_fp(k: f64, d: f64, m: f64) -> Result<f64> {
    require(k >= 1.0 && k <= m, "need 1 <= k <= m")?;
    require(d > 0.0, "D must be positive")?;
    Ok(norm_sf((k * d).sqrt() / (2.0 * (2.0 * m).sqrt())))
}

/// False-positive probability at an arbitrary threshold:
/// `1 - phi(sqrt(k) lambda / (sqrt(2 m D) sigma^2))`.
pub fn fp_at_threshold(k: f64, d: f64, m: f64, sigma: f64, lambda: f64) -> Result<f64> {
    require(k > 0.0 && d > 0.0 && m > 0.0 && sigma > 0.0, "inputs must be positive")?;
    require(lambda >= 0.0, "lambda must be non-negative")?;
    Ok(norm_sf(lambda / t_scale(m, k, d, sigma)))
}

/// True-positive probability at an arbitrary threshold for a model trained
/// on the victim's data: the statistic is `N(D sigma^2, (2m/k) D sigma^4)`.
pub fn tp_at_threshold(k: f64, d: f64, m: f64, sigma: f64, lambda: f64) -> Result<f64> {
    require(k > 0.0 && d > 0.0 && m > 0.0 && sigma > 0.0, "inputs must be positive")?;
    let mean = d * sigma * sigma;
    Ok(norm_sf((lambda - mean) / t_sd(m, k, d, sigma)))
}

/// True-positive probability with `k` revealed samples at `lambda = D sigma^2/2`:
/// `1 - phi(-sqrt(k D) / (2 sqrt(2 m)))`.
pub fn tp_vs_k_prob(k: f64, d: f64, m: f64) -> Result<f64> {
    require(k >= 1.0 && k <= m, "need 1 <= k <= m")?;
    require(d > 0.0, "D must be positive")?;
    Ok(norm_cdf((k * d).sqrt() / (2.0 * (2.0 * m).sqrt())))
}

/// Detection probability when `p` of the `k` revealed samples are
/// independent of the suspect's training data (the other `k - p` are
/// shared), with `lambda = mu_t / 2`:
/// `1 - phi(-(k - p) sqrt(D) / (2 sqrt(2 m k)))`.
pub fn overlap_fp_prob(k: f64, p: f64, d: f64, m: f64) -> Result<f64> {
    require(p >= 0.0 && p <= k, "need 0 <= p <= k")?;
    require(k >= 1.0 && k <= m, "need 1 <= k <= m")?;
    require(d > 0.0, "D must be positive")?;
    Ok(norm_cdf((k - p) * d.sqrt() / (2.0 * (2.0 * m * k).sqrt())))
}

/// Overlap scenario at an arbitrary threshold: the statistic is
/// `N((k-p)/k D sigma^2, (2m/k) D sigma^4)`.
pub fn overlap_at_threshold(k: f64, p: f64, d: f64, m: f64, sigma: f64, lambda: f64) -> Result<f64> {
    require(p >= 0.0 && p <= k, "need 0 <= p <= k")?;
    require(k > 0.0 && d > 0.0 && m > 0.0 && sigma > 0.0, "inputs must be positive")?;
    let mean = (k - p) / k * d * sigma * sigma;
    Ok(norm_sf((lambda - mean) / t_sd(m, k, d, sigma)))
}

/// Threshold used in the overlap scenario: half the expected statistic.
pub fn overlap_lambda(k: f64, p: f64, d: f64, sigma: f64) -> f64 {
    (k - p) / k * d * sigma * sigma / 2.0
}

/// Per-sample membership-inference success: `1 - phi(-sqrt(D) / (2 sqrt(2 m)))`.
pub fn mi_success_prob(d: f64, m: f64) -> Result<f64> {
    require(d > 0.0 && m > 0.0, "inputs must be positive")?;
    Ok(norm_cdf(d.sqrt() / (2.0 * (2.0 * m).sqrt())))
}

/// Analytic false-positive curve over a grid of revealed-sample counts.
pub fn fp_curve(d: f64, m: f64, k_grid: &[usize]) -> Result<Vec<(usize, f64)>> {
    require(!k_grid.is_empty(), "empty k grid")?;
    k_grid
        .iter()
        .map(|&k| analytic_fp(k as f64, d, m).map(|p| (k, p)))
        .collect()
}

/// Standard deviation of the k-subset statistic, `sqrt((2m/k) D) sigma^2`.
/// Uses `|w2|^2` at its mean; the exact statistic is a `chi2_D` scale
/// mixture, so tail probabilities drift low once `k/m` is not small.
pub fn t_sd(m: f64, k: f64, d: f64, sigma: f64) -> f64 {
    (2.0 * m / k * d).sqrt() * sigma * sigma
}

/// The same scale in the threshold-proof form, `sqrt(2 m D) sigma^2 / sqrt(k)`.
pub fn t_scale(m: f64, k: f64, d: f64, sigma: f64) -> f64 {
    (2.0 * m * d).sqrt() * sigma * sigma / k.sqrt()
}

/// Inputs shared by the theory table.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryInputs {
    pub noise_dim: f64,
    pub m: f64,
    pub k: f64,
    pub sigma: f64,
    pub u_norm_sq: f64,
    pub p_overlap: f64,
    pub lambda: f64,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        require(self.noise_dim >= 1.0, "D must be >= 1")?;
        require(self.m >= 1.0, "m must be >= 1")?;
        require(self.k >= 1.0 && self.k <= self.m, "need 1 <= k <= m")?;
        require(self.sigma > 0.0, "sigma must be positive")?;
        require(self.u_norm_sq > 0.0, "|u|^2 must be positive")?;
        require(self.p_overlap >= 0.0 && self.p_overlap <= self.k, "need 0 <= p <= k")?;
        require(self.lambda >= 0.0, "lambda must be non-negative")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryRow {
    pub formula: &'static str,
    pub inputs: String,
    pub value: f64,
}

/// The anchor values plus every formula evaluated at `inputs`.
pub fn theory_table(inputs: &TheoryInputs) -> Result<Vec<TheoryRow>> {
    inputs.validate()?;
    let TheoryInputs {
        noise_dim: d,
        m,
        k,
        sigma,
        u_norm_sq,
        p_overlap: p,
        lambda,
    } = *inputs;

    // Accuracy-bound boundary inputs: m = 500, |u|^2 = 1/m, sigma^2 = 1/(10 sqrt m).
    let lm: f64 = 500.0;
    let lsigma = (1.0 / (10.0 * lm.sqrt())).sqrt();
    let mut rows = vec![
        TheoryRow {
            formula: "accuracy_bound",
            inputs: format!("m={lm};u_norm_sq={};sigma={lsigma};D=1000", 1.0 / lm),
            value: accuracy_bound(lm, 1.0 / lm, lsigma, 1000.0)?,
        },
        TheoryRow {
            formula: "accuracy_bound",
            inputs: format!("m={lm};u_norm_sq={};sigma={lsigma};D=10", 1.0 / lm),
            value: accuracy_bound(lm, 1.0 / lm, lsigma, 10.0)?,
        },
        TheoryRow {
            formula: "analytic_fp",
            inputs: "k=10000;D=10;m=50000".into(),
            value: analytic_fp(10000.0, 10.0, 50000.0)?,
        },
    ];
    let tag = format!("k={k};D={d};m={m};sigma={sigma};lambda={lambda};p={p};u_norm_sq={u_norm_sq}");
    let evals: [(&'static str, f64); 8] = [
        ("di_success_prob", di_success_prob(d)?),
        ("accuracy_bound", accuracy_bound(m, u_norm_sq, sigma, d)?),
        ("analytic_fp", analytic_fp(k, d, m)?),
        ("fp_at_threshold", fp_at_threshold(k, d, m, sigma, lambda)?),
        ("tp_at_threshold", tp_at_threshold(k, d, m, sigma, lambda)?),
        ("tp_vs_k_prob", tp_vs_k_prob(k, d, m)?),
        ("overlap_fp_prob", overlap_fp_prob(k, p, d, m)?),
        ("mi_success_prob", mi_success_prob(d, m)?),
    ];
    rows.extend(evals.into_iter().map(|(formula, value)| TheoryRow {
        formula,
        inputs: tag.clone(),
        value,
    }));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_basics() {
        assert_eq!(phi(0.0).unwrap(), 0.5);
        assert!((phi(1.96).unwrap() - 0.9750).abs() < 1e-4);
        assert!(phi(f64::NAN).is_err());
        for z in [-5.0, -1.3, 0.2, 2.7, 8.0] {
            assert!((phi(z).unwrap() + phi(-z).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn di_success() {
        assert!((di_success_prob(8.0).unwrap() - 0.8413).abs() < 1e-4);
        assert!(di_success_prob(1e8).unwrap() >= 1.0 - 1e-9);
        let mut prev = 0.5;
        for d in 1..=1000 {
            let v = di_success_prob(d as f64).unwrap();
            assert!(v >= prev && v <= 1.0);
            prev = v;
        }
        assert!(di_success_prob(0.5).is_err());
    }

    #[test]
    fn boundary_anchors() {
        let m = 500.0;
        let sigma = (1.0 / (10.0 * f64::sqrt(m))).sqrt();
        assert!((accuracy_bound(m, 1.0 / m, sigma, 1000.0).unwrap() - 0.6241).abs() < 5e-4);
        assert!((accuracy_bound(m, 1.0 / m, sigma, 10.0).unwrap() - 0.9992).abs() < 5e-4);
        assert!((accuracy_bound(m, 1.0 / m, sigma, 1e18).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn fp_anchor_and_limits() {
        assert!((analytic_fp(10000.0, 10.0, 50000.0).unwrap() - 0.309).abs() < 1e-3);
        assert!(analytic_fp(1e6, 1e6, 1e6).unwrap() < 1e-100);
        // k = 1: direct CDF evaluation of 1 - phi(sqrt(10) / (2 sqrt(100000))).
        let v = analytic_fp(1.0, 10.0, 50000.0).unwrap();
        assert!((v - 0.498).abs() < 1e-3);
        assert!(analytic_fp(0.0, 10.0, 10.0).is_err());
        assert!(analytic_fp(11.0, 10.0, 10.0).is_err());
    }

    #[test]
    fn threshold_reductions() {
        assert_eq!(fp_at_threshold(10.0, 10.0, 100.0, 0.3, 0.0).unwrap(), 0.5);
        for &(k, d, m, s) in &[(10.0, 10.0, 1000.0, 0.25), (500.0, 64.0, 2000.0, 1.0), (1.0, 3.0, 7.0, 2.0)] {
            let lam = d * s * s / 2.0;
            let a = fp_at_threshold(k, d, m, s, lam).unwrap();
            let b = analytic_fp(k, d, m).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            let a = tp_at_threshold(k, d, m, s, lam).unwrap();
            let b = tp_vs_k_prob(k, d, m).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_conventions_agree() {
        for &(m, k, d, s) in &[(1000.0, 10.0, 64.0, 0.25), (50.0, 50.0, 1.0, 3.0)] {
            assert!((t_sd(m, k, d, s) - t_scale(m, k, d, s)).abs() < 1e-12 * t_sd(m, k, d, s));
        }
    }

    #[test]
    fn overlap_limits() {
        assert_eq!(overlap_fp_prob(40.0, 40.0, 10.0, 1000.0).unwrap(), 0.5);
        let full = overlap_fp_prob(40.0, 0.0, 10.0, 1000.0).unwrap();
        assert!((full - tp_vs_k_prob(40.0, 10.0, 1000.0).unwrap()).abs() < 1e-15);
        assert!(overlap_fp_prob(10.0, 11.0, 10.0, 100.0).is_err());
        let lam = overlap_lambda(100.0, 50.0, 10.0, 0.5);
        let a = overlap_at_threshold(100.0, 50.0, 10.0, 1000.0, 0.5, lam).unwrap();
        assert!((a - overlap_fp_prob(100.0, 50.0, 10.0, 1000.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mi_and_tp() {
        let m = 12.5;
        assert!((mi_success_prob(8.0 * m, m).unwrap() - 0.8413).abs() < 1e-4);
        assert!((mi_success_prob(10.0, 1e18).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(mi_success_prob(7.0, 1.0).unwrap(), di_success_prob(7.0).unwrap());
        assert_eq!(tp_vs_k_prob(8.0, 8.0, 8.0).unwrap(), di_success_prob(8.0).unwrap());
        let v = tp_vs_k_prob(1.0, 10.0, 50000.0).unwrap();
        assert!(v > 0.5 && v < 0.51);
    }

    #[test]
    fn curve_monotone() {
        let grid: Vec<usize> = vec![1, 10, 100, 1000, 10000, 50000];
        let c = fp_curve(10.0, 50000.0, &grid).unwrap();
        assert!(c.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!((c[4].1 - 0.309).abs() < 1e-3);
        assert!(fp_curve(10.0, 10.0, &[]).is_err());
    }

    #[test]
    fn table_has_anchors() {
        let rows = theory_table(&TheoryInputs {
            noise_dim: 10.0,
            m: 1000.0,
            k: 100.0,
            sigma: 0.25,
            u_norm_sq: 0.001,
            p_overlap: 50.0,
            lambda: 0.3125,
        })
        .unwrap();
        assert!((rows[0].value - 0.6241).abs() < 5e-4);
        assert!((rows[1].value - 0.9992).abs() < 5e-4);
        assert!((rows[2].value - 0.309).abs() < 1e-3);
    }
}
