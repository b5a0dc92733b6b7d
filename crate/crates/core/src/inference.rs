//! Test statistics, multiplicity adjustment, and the two-stage combination
//! rule.
//!
//! Stage 1 compares every treatment arm against control with Wald statistics
//! on the chosen effect scale and adjusts for selection via the one-sided
//! max-statistic (Dunnett) p-value under the estimated correlation. Stage 2
//! is a single contrast, so its p-value is a plain normal tail. The stages
//! combine through the product rule: reject overall when
//! `-ln(P1 * P2)` exceeds half the upper-alpha quantile of a chi-squared
//! distribution with four degrees of freedom.

use crate::error::{Error, Result};
use crate::stats::{chi2_4_quantile, norm_cdf};
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::RngExt;
use rand_distr::StandardNormal;

/// Wald statistics and standard errors for the effect vector against its
/// scaled covariance `cov = G Gamma G'`: `se_k = sqrt(cov_kk / n)` and
/// `W_k = delta_k / se_k`.
pub fn wald_statistics(
    delta: &[f64],
    cov: &DMatrix<f64>,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be positive".into()));
    }
    if cov.nrows() != delta.len() || cov.ncols() != delta.len() {
        return Err(Error::InvalidParameter(format!(
            "covariance is {}x{} but there are {} effects",
            cov.nrows(),
            cov.ncols(),
            delta.len()
        )));
    }
    let nf = n as f64;
    let mut w = Vec::with_capacity(delta.len());
    let mut se = Vec::with_capacity(delta.len());
    for (k, &d) in delta.iter().enumerate() {
        let v = cov[(k, k)];
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::DegenerateVariance(format!(
                "effect {k} has variance {v}"
            )));
        }
        let s = (v / nf).sqrt();
        se.push(s);
        w.push(d / s);
    }
    Ok((w, se))
}

/// Correlation matrix of the effect vector from its covariance.
pub fn correlation(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = cov.nrows();
    if cov.ncols() != k || k == 0 {
        return Err(Error::InvalidParameter("covariance must be square and nonempty".into()));
    }
    let mut scale = vec![0.0f64; k];
    for (i, s) in scale.iter_mut().enumerate() {
        let v = cov[(i, i)];
        if v <= 0.0 || !v.is_finite() {
            return Err(Error::DegenerateVariance(format!(
                "effect {i} has variance {v}"
            )));
        }
        *s = v.sqrt();
    }
    Ok(DMatrix::from_fn(k, k, |i, j| cov[(i, j)] / (scale[i] * scale[j])))
}

/// One-sided max-statistic p-value `Pr(max_k Z_k > w_max)` for
/// `Z ~ N(0, R)`. A single contrast is computed analytically; larger
/// families use Monte Carlo with at least 10,000 samples. A correlation
/// matrix that fails its Cholesky factorization is repaired by clipping
/// eigenvalues at 1e-10 and rescaling to unit diagonal.
pub fn dunnett_p(
    w_max: f64,
    r: &DMatrix<f64>,
    mc_samples: usize,
    rng: &mut impl RngExt,
) -> Result<f64> {
    let k = r.nrows();
    if r.ncols() != k || k == 0 {
        return Err(Error::InvalidParameter("correlation must be square and nonempty".into()));
    }
    if mc_samples < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10000 Monte Carlo samples, got {mc_samples}"
        )));
    }
    if k == 1 {
        return Ok(norm_cdf(-w_max));
    }
    let chol = match Cholesky::new(r.clone()) {
        Some(c) => c,
        None => {
            log::warn!("correlation matrix is not positive definite; repairing by eigenvalue clipping");
            Cholesky::new(repair_correlation(r)).ok_or_else(|| {
                Error::DegenerateVariance("correlation matrix could not be repaired".into())
            })?
        }
    };
    let l = chol.l();
    let mut u = vec![0.0f64; k];
    let mut count = 0usize;
    for _ in 0..mc_samples {
        for v in u.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut max = f64::NEG_INFINITY;
        for i in 0..k {
            let mut z = 0.0;
            for (j, &uj) in u.iter().enumerate().take(i + 1) {
                z += l[(i, j)] * uj;
            }
            if z > max {
                max = z;
            }
        }
        if max > w_max {
            count += 1;
        }
    }
    Ok(count as f64 / mc_samples as f64)
}

/// Clip eigenvalues at 1e-10 and rescale back to unit diagonal.
fn repair_correlation(r: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(r.clone());
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 1e-10 {
            *v = 1e-10;
        }
    }
    let m = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let k = m.nrows();
    DMatrix::from_fn(k, k, |i, j| m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt())
}

/// One-sided second-stage p-value `1 - Phi(w)`.
pub fn stage2_p(w: f64) -> f64 {
    norm_cdf(-w)
}

/// Outcome of the product combination rule.
#[derive(Clone, Copy, Debug)]
pub struct CombinedTest {
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
}

/// Half the upper-`alpha` quantile of chi-squared with 4 degrees of freedom.
pub fn combination_threshold(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(0.5 * chi2_4_quantile(1.0 - alpha))
}

/// Combine stage p-values: reject when `-ln(p1 p2)` clears the threshold.
/// A zero product maps to an infinite statistic, hence rejection.
pub fn combine(p1: f64, p2: f64, alpha: f64) -> Result<CombinedTest> {
    for (name, p) in [("stage-1", p1), ("stage-2", p2)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "{name} p-value {p} outside [0,1]"
            )));
        }
    }
    let threshold = combination_threshold(alpha)?;
    let product = p1 * p2;
    let statistic = if product == 0.0 {
        f64::INFINITY
    } else {
        -product.ln()
    };
    Ok(CombinedTest {
        statistic,
        threshold,
        reject: statistic > threshold,
    })
}
