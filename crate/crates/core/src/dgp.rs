//! Synthetic-patient generators: three binary-outcome designs with known
//! treatment effects, plus the covariate sets their analysis models adjust
//! for.
//!
//! Each generator couples a covariate law, a response model with one shift
//! per treatment arm, and the discretization used for randomization.
//! Continuous randomization covariates split at zero (or, for the SALT
//! score, at the clinical cut of 75); binary covariates stratify directly.

use crate::error::{Error, Result};
use crate::stats::{expit, norm_cdf};
use crate::stratum::{CovariateRule, StratumSchema};
use rand::RngExt;
use rand_distr::StandardNormal;

/// Which generative design to simulate from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DgpKind {
    /// Logistic outcome on a binary and a continuous covariate.
    M1Logistic,
    /// Probit outcome with interaction and exponential terms on three
    /// normal covariates; any linear-logistic analysis model is
    /// misspecified here.
    M2Probit,
    /// Hypothetical alopecia-areata dose-selection trial: SALT score and
    /// disease-duration covariates, logistic response.
    Alopecia,
}

/// A generative design together with its per-treatment-arm effect shifts
/// (control is the reference and always shifts by zero).
#[derive(Clone, Debug)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub iota: Vec<f64>,
}

/// Analysis-model adjustment level: nothing, a partial covariate set, or
/// everything the design's convention includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelChoice {
    A0,
    A1,
    A2,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, iota: Vec<f64>) -> Result<Self> {
        if iota.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one treatment arm shift".into(),
            ));
        }
        if iota.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("effect shifts must be finite".into()));
        }
        Ok(Self { kind, iota })
    }

    /// Treatment arms plus control.
    pub fn num_arms(&self) -> usize {
        self.iota.len() + 1
    }

    pub fn covariate_count(&self) -> usize {
        match self.kind {
            DgpKind::M1Logistic | DgpKind::Alopecia => 2,
            DgpKind::M2Probit => 3,
        }
    }

    /// Discretization of the randomization covariates. The third covariate
    /// of the probit design stays out of randomization by design.
    pub fn randomization_schema(&self) -> StratumSchema {
        let rules = match self.kind {
            DgpKind::M1Logistic => vec![
                CovariateRule::Discrete { levels: 2 },
                CovariateRule::Threshold(0.0),
            ],
            DgpKind::M2Probit => vec![
                CovariateRule::Threshold(0.0),
                CovariateRule::Threshold(0.0),
            ],
            DgpKind::Alopecia => vec![
                CovariateRule::Threshold(75.0),
                CovariateRule::Discrete { levels: 2 },
            ],
        };
        StratumSchema::new(rules).expect("built-in schema is valid")
    }

    /// Covariate columns the given analysis model adjusts for.
    pub fn model_covariates(&self, model: ModelChoice) -> Vec<usize> {
        match (self.kind, model) {
            (_, ModelChoice::A0) => vec![],
            (DgpKind::M1Logistic | DgpKind::Alopecia, ModelChoice::A1) => vec![0],
            (DgpKind::M1Logistic | DgpKind::Alopecia, ModelChoice::A2) => vec![0, 1],
            (DgpKind::M2Probit, ModelChoice::A1) => vec![0, 1],
            (DgpKind::M2Probit, ModelChoice::A2) => vec![0, 1, 2],
        }
    }

    pub fn draw_covariates_into(&self, rng: &mut impl RngExt, out: &mut [f64]) {
        match self.kind {
            DgpKind::M1Logistic => {
                out[0] = f64::from(rng.random::<bool>());
                out[1] = rng.sample(StandardNormal);
            }
            DgpKind::M2Probit => {
                for v in out.iter_mut().take(3) {
                    *v = rng.sample(StandardNormal);
                }
            }
            DgpKind::Alopecia => {
                out[0] = rng.random_range(50.0..100.0);
                out[1] = f64::from(rng.random::<f64>() < 0.35);
            }
        }
    }

    /// Linear predictor (on the design's own link scale) for a patient on
    /// `arm` with covariates `x`.
    pub fn linear_predictor(&self, arm: usize, x: &[f64]) -> f64 {
        let shift = if arm == 0 { 0.0 } else { self.iota[arm - 1] };
        match self.kind {
            DgpKind::M1Logistic => -1.0 + shift + x[0] + 2.0 * x[1],
            DgpKind::M2Probit => -1.0 + shift + x[0] * x[1] + (x[0] + x[1]).exp() + 0.5 * x[2],
            DgpKind::Alopecia => 1.8 + shift - 0.04 * x[0] - 1.5 * x[1],
        }
    }

    /// Success probability for a patient on `arm` with covariates `x`.
    pub fn response_probability(&self, arm: usize, x: &[f64]) -> f64 {
        let eta = self.linear_predictor(arm, x);
        match self.kind {
            DgpKind::M1Logistic | DgpKind::Alopecia => expit(eta),
            DgpKind::M2Probit => norm_cdf(eta),
        }
    }

    pub fn draw_outcome(&self, arm: usize, x: &[f64], rng: &mut impl RngExt) -> f64 {
        f64::from(rng.random::<f64>() < self.response_probability(arm, x))
    }

    /// Draw one patient on a fixed arm: covariates and binary outcome.
    pub fn generate_patient(&self, arm: usize, rng: &mut impl RngExt) -> (Vec<f64>, f64) {
        let mut x = vec![0.0; self.covariate_count()];
        self.draw_covariates_into(rng, &mut x);
        let y = self.draw_outcome(arm, &x, rng);
        (x, y)
    }
}
