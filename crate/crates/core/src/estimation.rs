//! Working-model fitting and covariate-adjusted mean and effect estimation.
//!
//! The working model posits `E[Y | arm k, X] = h_k(X) = expit(iota_k + X' beta)`
//! on a selected subset of baseline covariates (possibly empty). The parameter
//! theta = (iota_0..iota_{A-1}, beta) solves the stacked estimating equation
//! whose arm rows sum `h_k(X_i) - Y_i` over patients assigned to arm k and
//! whose slope rows sum `(Y_i - h(X_i)) X_i` over everyone; a Newton iteration
//! with the analytic Jacobian and step halving drives the (1/n)-scaled
//! equation below tolerance in max norm.
//!
//! The adjusted arm means `mu_k` average the fitted arm-k response over every
//! randomized patient regardless of actual assignment, and treatment effects
//! contrast `g(mu_k)` against `g(mu_0)` on the chosen scale (log relative
//! risk, log odds ratio, or raw difference).

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::stats::{expit, logit};
use nalgebra::{DMatrix, DVector};

/// Response link of the working model. Only the logistic link is implemented;
/// the enum leaves room for an identity (linear) working model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Logit,
}

/// Which working model to fit: arm intercepts always, plus the listed
/// covariate columns of the dataset.
#[derive(Clone, Debug)]
pub struct WorkingModel {
    pub link: Link,
    pub num_arms: usize,
    pub covariates: Vec<usize>,
}

impl WorkingModel {
    pub fn new(num_arms: usize, covariates: Vec<usize>) -> Self {
        Self {
            link: Link::Logit,
            num_arms,
            covariates,
        }
    }

    pub fn dim(&self) -> usize {
        self.num_arms + self.covariates.len()
    }
}

/// Solution of the estimating equation.
#[derive(Clone, Debug)]
pub struct ThetaEstimate {
    pub iota: Vec<f64>,
    pub beta: Vec<f64>,
    pub iterations: usize,
    /// Max-norm of the (1/n)-scaled estimating equation at the final iterate.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Iterates whose coordinates pass this magnitude are treated as diverging:
/// on the logit scale a coordinate of 15 already pins fitted probabilities
/// within 3e-7 of 0 or 1, which only happens under separation.
const DIVERGENCE_BOUND: f64 = 15.0;

/// Fit the working model by Newton iteration on the stacked estimating
/// equation.
///
/// # Errors
///
/// * [`Error::EmptyArm`] if some arm has no patients.
/// * [`Error::DegenerateData`] if there are no more patients than parameters.
/// * [`Error::NonConvergence`] (carrying the last iterate) if the scaled
///   residual does not reach `tol` within `max_iter` iterations or the
///   iterate diverges, as under separation.
pub fn fit(
    data: &TrialDataset,
    model: &WorkingModel,
    tol: f64,
    max_iter: usize,
) -> Result<ThetaEstimate> {
    let n = data.len();
    let a = model.num_arms;
    let q = model.covariates.len();
    let p = a + q;
    if n <= p {
        return Err(Error::DegenerateData(format!(
            "{n} patients cannot identify {p} parameters"
        )));
    }
    let counts = data.require_all_arms()?;

    // Start from the arm means (clamped away from 0/1) with zero slopes.
    let mut theta = DVector::zeros(p);
    let mut arm_sums = vec![0.0f64; a];
    for i in 0..n {
        arm_sums[data.arm[i]] += data.y[i];
    }
    for k in 0..a {
        let mean = (arm_sums[k] / counts[k] as f64).clamp(0.01, 0.99);
        theta[k] = logit(mean);
    }

    let mut equation = DVector::zeros(p);
    let mut jacobian = DMatrix::zeros(p, p);
    fill_equation(data, model, &theta, &mut equation, Some(&mut jacobian));
    let mut residual = equation.amax() / n as f64;

    for iteration in 1..=max_iter {
        if residual <= tol {
            return Ok(ThetaEstimate {
                iota: theta.as_slice()[..a].to_vec(),
                beta: theta.as_slice()[a..].to_vec(),
                iterations: iteration - 1,
                residual_norm: residual,
                converged: true,
            });
        }
        let step = jacobian
            .clone()
            .lu()
            .solve(&equation)
            .ok_or_else(|| Error::DegenerateData("singular Newton system".into()))?;

        // Step halving: retreat along the Newton direction until the scaled
        // residual stops exceeding its previous value.
        let mut scale = 1.0;
        let mut candidate;
        let mut cand_residual;
        loop {
            candidate = &theta - scale * &step;
            fill_equation(data, model, &candidate, &mut equation, None);
            cand_residual = equation.amax() / n as f64;
            if cand_residual <= residual || scale < 1e-6 {
                break;
            }
            scale *= 0.5;
        }
        theta = candidate;
        residual = cand_residual;
        let diverged = theta.amax() > DIVERGENCE_BOUND;
        if diverged || iteration == max_iter {
            if residual <= tol && !diverged {
                continue;
            }
            return Err(Error::NonConvergence {
                iterations: iteration,
                residual,
                last_iterate: Box::new(ThetaEstimate {
                    iota: theta.as_slice()[..a].to_vec(),
                    beta: theta.as_slice()[a..].to_vec(),
                    iterations: iteration,
                    residual_norm: residual,
                    converged: false,
                }),
            });
        }
        fill_equation(data, model, &theta, &mut equation, Some(&mut jacobian));
        residual = equation.amax() / n as f64;
    }
    Ok(ThetaEstimate {
        iota: theta.as_slice()[..a].to_vec(),
        beta: theta.as_slice()[a..].to_vec(),
        iterations: max_iter,
        residual_norm: residual,
        converged: true,
    })
}

/// Evaluate the stacked estimating equation and its Jacobian at an arbitrary
/// parameter point `theta` (arm intercepts first, then slopes). Useful for
/// diagnostics and derivative checks; `fit` drives the same evaluation.
pub fn estimating_equation(
    data: &TrialDataset,
    model: &WorkingModel,
    theta: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = model.dim();
    if theta.len() != p {
        return Err(Error::InvalidParameter(format!(
            "theta has {} coordinates, the model has {p}",
            theta.len()
        )));
    }
    let mut equation = DVector::zeros(p);
    let mut jacobian = DMatrix::zeros(p, p);
    fill_equation(data, model, theta, &mut equation, Some(&mut jacobian));
    Ok((equation, jacobian))
}

/// Evaluate the stacked estimating equation (and optionally its Jacobian) at
/// `theta`. Arm row k accumulates `h - y` over arm-k patients; slope row j
/// accumulates `(y - h) x_j` over everyone.
pub(crate) fn fill_equation(
    data: &TrialDataset,
    model: &WorkingModel,
    theta: &DVector<f64>,
    equation: &mut DVector<f64>,
    mut jacobian: Option<&mut DMatrix<f64>>,
) {
    let a = model.num_arms;
    equation.fill(0.0);
    if let Some(jac) = jacobian.as_deref_mut() {
        jac.fill(0.0);
    }
    for i in 0..data.len() {
        let k = data.arm[i];
        let row = data.x_row(i);
        let mut eta = theta[k];
        for (j, &c) in model.covariates.iter().enumerate() {
            eta += theta[a + j] * row[c];
        }
        let h = expit(eta);
        let resid = data.y[i] - h;
        equation[k] -= resid;
        for (j, &c) in model.covariates.iter().enumerate() {
            equation[a + j] += resid * row[c];
        }
        if let Some(jac) = jacobian.as_deref_mut() {
            let w = h * (1.0 - h);
            jac[(k, k)] += w;
            for (j, &c) in model.covariates.iter().enumerate() {
                let xj = row[c];
                jac[(k, a + j)] += w * xj;
                jac[(a + j, k)] -= w * xj;
                for (m, &cm) in model.covariates.iter().enumerate() {
                    jac[(a + j, a + m)] -= w * xj * row[cm];
                }
            }
        }
    }
}

/// Adjusted means, fitted-response matrix and residuals at a fitted theta.
#[derive(Clone, Debug)]
pub struct MuEstimate {
    /// `mu[k]`: fitted arm-k response averaged over all n patients.
    pub mu: Vec<f64>,
    /// `n x A` matrix of fitted responses under every arm.
    pub h: DMatrix<f64>,
    /// `y_i - h_{arm_i}(x_i)` per patient.
    pub residuals: Vec<f64>,
}

/// Evaluate adjusted means for every arm under a fitted working model.
pub fn estimate_mu(
    data: &TrialDataset,
    model: &WorkingModel,
    theta: &ThetaEstimate,
) -> Result<MuEstimate> {
    let n = data.len();
    let a = model.num_arms;
    if theta.iota.len() != a || theta.beta.len() != model.covariates.len() {
        return Err(Error::InvalidParameter(
            "theta does not match the working model's dimensions".into(),
        ));
    }
    if n == 0 {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let mut h = DMatrix::zeros(n, a);
    let mut mu = vec![0.0f64; a];
    let mut residuals = vec![0.0f64; n];
    for i in 0..n {
        let row = data.x_row(i);
        let mut slope = 0.0;
        for (j, &c) in model.covariates.iter().enumerate() {
            slope += theta.beta[j] * row[c];
        }
        for k in 0..a {
            let v = expit(theta.iota[k] + slope);
            h[(i, k)] = v;
            mu[k] += v;
        }
        residuals[i] = data.y[i] - h[(i, data.arm[i])];
    }
    for v in &mut mu {
        *v /= n as f64;
    }
    Ok(MuEstimate { mu, h, residuals })
}

/// Contrast scale for treatment effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Log relative risk `ln(mu_k) - ln(mu_0)`.
    LogRr,
    /// Log odds ratio `logit(mu_k) - logit(mu_0)`.
    LogOr,
    /// Raw difference `mu_k - mu_0`.
    Ate,
}

impl Metric {
    /// The scale transform `g`.
    pub fn g(&self, mu: f64) -> Result<f64> {
        match self {
            Metric::LogRr => {
                if mu <= 0.0 {
                    Err(Error::Domain(format!("log relative risk needs mu > 0, got {mu}")))
                } else {
                    Ok(mu.ln())
                }
            }
            Metric::LogOr => {
                if mu <= 0.0 || mu >= 1.0 {
                    Err(Error::Domain(format!("log odds ratio needs mu in (0,1), got {mu}")))
                } else {
                    Ok(logit(mu))
                }
            }
            Metric::Ate => Ok(mu),
        }
    }

    /// Derivative `g'` used by delta-method Jacobians.
    pub fn g_prime(&self, mu: f64) -> Result<f64> {
        match self {
            Metric::LogRr => {
                if mu <= 0.0 {
                    Err(Error::Domain(format!("log relative risk needs mu > 0, got {mu}")))
                } else {
                    Ok(1.0 / mu)
                }
            }
            Metric::LogOr => {
                if mu <= 0.0 || mu >= 1.0 {
                    Err(Error::Domain(format!("log odds ratio needs mu in (0,1), got {mu}")))
                } else {
                    Ok(1.0 / (mu * (1.0 - mu)))
                }
            }
            Metric::Ate => Ok(1.0),
        }
    }
}

/// Treatment effects `g(mu_k) - g(mu_0)` for k = 1..A-1.
pub fn effect(mu: &[f64], metric: Metric) -> Result<Vec<f64>> {
    if mu.len() < 2 {
        return Err(Error::InvalidParameter(
            "effects need a control arm and at least one treatment arm".into(),
        ));
    }
    let g0 = metric.g(mu[0])?;
    mu[1..]
        .iter()
        .map(|&m| Ok(metric.g(m)? - g0))
        .collect()
}
