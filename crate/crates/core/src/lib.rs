//! Simulation and inference engine for two-stage seamless dose-selection
//! trials under covariate-adaptive randomization.
//!
//! The pipeline: stratify patients ([`stratum`]), assign arms with a
//! balancing scheme ([`randomization`]), fit a working model by Z-estimation
//! ([`estimation`]), estimate the covariance of the effect estimates with
//! and without a correction for the randomization scheme ([`variance`]),
//! test with selection-adjusted Wald statistics and combine stages
//! ([`inference`]), and drive whole replicated trials ([`trial`]) on
//! synthetic designs ([`dgp`]).

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod randomization;
pub mod rng;
pub mod stats;
pub mod stratum;
pub mod trial;
pub mod variance;

pub use data::TrialDataset;
pub use dgp::{DgpKind, DgpSpec, ModelChoice};
pub use error::{Error, Result};
pub use estimation::{
    effect, estimate_mu, estimating_equation, fit, Link, Metric, MuEstimate, ThetaEstimate,
    WorkingModel,
};
pub use inference::{
    combination_threshold, combine, correlation, dunnett_p, stage2_p, wald_statistics,
    CombinedTest,
};
pub use randomization::{imbalance_matrix, Randomizer, Scheme, SchemeSpec};
pub use rng::{Lane, ReplicateStreams, SeedTree};
pub use stratum::{CovariateRule, StratumSchema};
pub use trial::{
    run_stage1, run_stage2, run_trial, simulate, SelectionRule, SimulationSummary, StageAnalysis,
    StageOne, TestVariant, TrialConfig, TrialOutcome, VariantStats,
};
pub use variance::{
    bootstrap_imbalance, car_term, gamma_adj, gamma_base, gamma_car_adj, jacobian, sigma_cr,
    stratum_residual_means, BootstrapDraws, GammaDecomposition, SigmaBlocks, StratumResidualMeans,
};
