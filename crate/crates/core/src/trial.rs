//! The two-stage seamless trial: enroll and randomize a dose-selection
//! stage, test every treatment against control with a selection-adjusted
//! p-value, carry the best arm into a confirmatory stage, and combine the
//! stage p-values into one overall decision.
//!
//! Replicated simulation lives here too: replicates own their full state
//! and random streams, run embarrassingly parallel, and reduce in index
//! order so a summary is identical for any thread count.

use crate::data::TrialDataset;
use crate::dgp::{DgpSpec, ModelChoice};
use crate::error::{Error, Result};
use crate::estimation::{effect, estimate_mu, fit, Metric, WorkingModel};
use crate::inference::{
    combine, correlation, dunnett_p, stage2_p, wald_statistics, CombinedTest,
};
use crate::randomization::{Randomizer, Scheme, SchemeSpec};
use crate::rng::{Lane, ReplicateStreams, SeedTree};
use crate::stratum::StratumSchema;
use crate::variance::{
    bootstrap_imbalance, car_term, gamma_adj, gamma_base, jacobian, sigma_cr,
    stratum_residual_means, GammaDecomposition,
};
use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Which variance feeds the Wald statistics and stage-1 selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestVariant {
    /// Covariate-adjusted sandwich variance that ignores the randomization
    /// scheme.
    Conventional,
    /// Adds the randomization correction estimated by rerunning the scheme
    /// on resampled strata.
    Robust,
}

/// How the stage-1 winner is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionRule {
    /// Largest Wald statistic (default).
    MaxWald,
    /// Largest effect estimate.
    MaxEffect,
}

/// Full configuration of one trial design.
#[derive(Clone, Debug)]
pub struct TrialConfig {
    pub n1: usize,
    pub n2: usize,
    pub scheme: SchemeSpec,
    pub model: ModelChoice,
    pub metric: Metric,
    pub test: TestVariant,
    pub alpha: f64,
    pub bootstrap_b: usize,
    pub dunnett_samples: usize,
    pub selection: SelectionRule,
    pub fit_tol: f64,
    pub fit_max_iter: usize,
}

impl TrialConfig {
    pub fn new(scheme: SchemeSpec, model: ModelChoice, metric: Metric, test: TestVariant) -> Self {
        Self {
            n1: 420,
            n2: 500,
            scheme,
            model,
            metric,
            test,
            alpha: 0.05,
            bootstrap_b: 500,
            dunnett_samples: 100_000,
            selection: SelectionRule::MaxWald,
            fit_tol: 1e-9,
            fit_max_iter: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::InvalidParameter("stage sizes must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::InvalidParameter(
                "bootstrap replicate count must be at least 2".into(),
            ));
        }
        if self.fit_tol <= 0.0 || self.fit_max_iter == 0 {
            return Err(Error::InvalidParameter("fit controls must be positive".into()));
        }
        Ok(())
    }
}

/// Per-variant Wald machinery of one stage.
#[derive(Clone, Debug)]
pub struct VariantStats {
    pub se: Vec<f64>,
    pub w: Vec<f64>,
    pub r: DMatrix<f64>,
}

/// Everything the analysis of one stage produces.
#[derive(Clone, Debug)]
pub struct StageAnalysis {
    pub n: usize,
    pub mu: Vec<f64>,
    pub delta: Vec<f64>,
    pub conventional: VariantStats,
    /// Present when the scheme makes it free (complete randomization, where
    /// it coincides with the conventional stats) or when the configured
    /// test demands the bootstrap.
    pub robust: Option<VariantStats>,
    pub p_value: f64,
    pub reject: bool,
    pub fit_iterations: usize,
    pub variance_guarded: bool,
}

impl StageAnalysis {
    /// Stats for the configured variant.
    pub fn active(&self, variant: TestVariant) -> &VariantStats {
        match variant {
            TestVariant::Conventional => &self.conventional,
            TestVariant::Robust => self
                .robust
                .as_ref()
                .expect("robust stats exist whenever the robust test is configured"),
        }
    }
}

/// Stage-1 products: the data, its analysis, and the winning arm.
#[derive(Clone, Debug)]
pub struct StageOne {
    pub data: TrialDataset,
    pub analysis: StageAnalysis,
    pub selected_arm: usize,
}

/// One complete simulated trial.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub selected_arm: usize,
    pub stage1: StageAnalysis,
    pub stage2: StageAnalysis,
    pub combined_statistic: f64,
    pub combined_threshold: f64,
    pub reject_overall: bool,
}

struct Analysis {
    mu: Vec<f64>,
    delta: Vec<f64>,
    conventional: VariantStats,
    robust: Option<VariantStats>,
    guarded: bool,
    iterations: usize,
}

impl Analysis {
    fn active(&self, variant: TestVariant) -> &VariantStats {
        match variant {
            TestVariant::Conventional => &self.conventional,
            TestVariant::Robust => self
                .robust
                .as_ref()
                .expect("robust stats exist whenever the robust test is configured"),
        }
    }
}

/// Fit the working model, build the variance decomposition, and produce
/// per-variant Wald stats for one stage's dataset.
fn analyze(
    data: &TrialDataset,
    covariates: &[usize],
    config: &TrialConfig,
    schema: &StratumSchema,
    bootstrap_rng: &mut ChaCha8Rng,
) -> Result<Analysis> {
    let model = WorkingModel::new(data.num_arms, covariates.to_vec());
    let theta = fit(data, &model, config.fit_tol, config.fit_max_iter)?;
    let mu = estimate_mu(data, &model, &theta)?;
    let delta = effect(&mu.mu, config.metric)?;
    let g = jacobian(&mu.mu, config.metric)?;

    let base = gamma_base(data)?;
    let adj = gamma_adj(data, &mu)?;
    let a = data.num_arms;

    // Under complete randomization the randomization correction is exactly
    // zero, so the robust stats coincide with the conventional ones and no
    // bootstrap is needed.
    let want_bootstrap =
        config.test == TestVariant::Robust && config.scheme.scheme != Scheme::Complete;
    let car_adj = if want_bootstrap {
        let l = stratum_residual_means(data, &mu)?;
        let cr = sigma_cr(&l.pi_stratum, a)?;
        let draws = bootstrap_imbalance(
            &data.stratum,
            &config.scheme,
            schema,
            a,
            config.bootstrap_b,
            bootstrap_rng,
        )?;
        car_term(&cr, &l) - draws.car_term_outer(&l)
    } else {
        DMatrix::zeros(a, a)
    };
    let dec = GammaDecomposition::assemble(base, adj, car_adj);

    let n = data.len();
    let cov_conv = &g * dec.conventional() * g.transpose();
    let (w, se) = wald_statistics(&delta, &cov_conv, n)?;
    let conventional = VariantStats {
        se,
        w,
        r: correlation(&cov_conv)?,
    };
    let robust = if want_bootstrap || config.scheme.scheme == Scheme::Complete {
        let cov_rob = &g * dec.robust() * g.transpose();
        let (w, se) = wald_statistics(&delta, &cov_rob, n)?;
        Some(VariantStats {
            se,
            w,
            r: correlation(&cov_rob)?,
        })
    } else {
        None
    };

    Ok(Analysis {
        mu: mu.mu,
        delta,
        conventional,
        robust,
        guarded: !dec.guarded_arms.is_empty(),
        iterations: theta.iterations,
    })
}

/// Enroll, randomize, and analyze the dose-selection stage; pick the winner.
pub fn run_stage1(
    config: &TrialConfig,
    dgp: &DgpSpec,
    streams: &ReplicateStreams,
) -> Result<StageOne> {
    config.validate()?;
    let schema = dgp.randomization_schema();
    let a = dgp.num_arms();
    let mut patients = streams.lane(Lane::Stage1Patients);
    let mut coins = streams.lane(Lane::Stage1Randomizer);
    let mut bootstrap = streams.lane(Lane::Stage1Bootstrap);
    let mut multiplicity = streams.lane(Lane::Stage1Multiplicity);

    let mut randomizer = Randomizer::new(config.scheme.clone(), &schema, a)?;
    let mut data =
        TrialDataset::with_capacity(a, schema.stratum_count(), dgp.covariate_count(), config.n1);
    let mut x = vec![0.0; dgp.covariate_count()];
    let mut levels = vec![0usize; schema.covariate_count()];
    for _ in 0..config.n1 {
        dgp.draw_covariates_into(&mut patients, &mut x);
        let stratum = schema.discretize_into(&x, &mut levels)?;
        let arm = randomizer.assign_at(&levels, stratum, &mut coins);
        let y = dgp.draw_outcome(arm, &x, &mut patients);
        data.push(&x, arm, stratum, y);
    }

    let covariates = dgp.model_covariates(config.model);
    let analysis = analyze(&data, &covariates, config, &schema, &mut bootstrap)?;

    let active = analysis.active(config.test);
    let scores: &[f64] = match config.selection {
        SelectionRule::MaxWald => &active.w,
        SelectionRule::MaxEffect => &analysis.delta,
    };
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let selected_arm = best + 1;

    let w_max = active.w[best];
    let p1 = dunnett_p(w_max, &active.r, config.dunnett_samples, &mut multiplicity)?;
    let reject = p1 < config.alpha;

    Ok(StageOne {
        data,
        analysis: StageAnalysis {
            n: config.n1,
            mu: analysis.mu,
            delta: analysis.delta,
            conventional: analysis.conventional,
            robust: analysis.robust,
            p_value: p1,
            reject,
            fit_iterations: analysis.iterations,
            variance_guarded: analysis.guarded,
        },
        selected_arm,
    })
}

/// Enroll and analyze the confirmatory stage for a given winning arm. The
/// stage depends on stage 1 only through `selected_arm`.
pub fn run_stage2(
    config: &TrialConfig,
    dgp: &DgpSpec,
    selected_arm: usize,
    streams: &ReplicateStreams,
) -> Result<StageAnalysis> {
    config.validate()?;
    if selected_arm == 0 || selected_arm >= dgp.num_arms() {
        return Err(Error::InvalidParameter(format!(
            "selected arm {selected_arm} is not a treatment arm"
        )));
    }
    let schema = dgp.randomization_schema();
    let mut patients = streams.lane(Lane::Stage2Patients);
    let mut coins = streams.lane(Lane::Stage2Randomizer);
    let mut bootstrap = streams.lane(Lane::Stage2Bootstrap);

    // Two arms: index 0 is control, index 1 relabels the selected arm.
    let mut randomizer = Randomizer::new(config.scheme.clone(), &schema, 2)?;
    let mut data =
        TrialDataset::with_capacity(2, schema.stratum_count(), dgp.covariate_count(), config.n2);
    let mut x = vec![0.0; dgp.covariate_count()];
    let mut levels = vec![0usize; schema.covariate_count()];
    for _ in 0..config.n2 {
        dgp.draw_covariates_into(&mut patients, &mut x);
        let stratum = schema.discretize_into(&x, &mut levels)?;
        let slot = randomizer.assign_at(&levels, stratum, &mut coins);
        let actual = if slot == 0 { 0 } else { selected_arm };
        let y = dgp.draw_outcome(actual, &x, &mut patients);
        data.push(&x, slot, stratum, y);
    }

    let covariates = dgp.model_covariates(config.model);
    let analysis = analyze(&data, &covariates, config, &schema, &mut bootstrap)?;
    let p2 = stage2_p(analysis.active(config.test).w[0]);
    let reject = p2 < config.alpha;

    Ok(StageAnalysis {
        n: config.n2,
        mu: analysis.mu,
        delta: analysis.delta,
        conventional: analysis.conventional,
        robust: analysis.robust,
        p_value: p2,
        reject,
        fit_iterations: analysis.iterations,
        variance_guarded: analysis.guarded,
    })
}

/// One full replicate: both stages plus the combined decision.
pub fn run_trial(
    config: &TrialConfig,
    dgp: &DgpSpec,
    streams: &ReplicateStreams,
) -> Result<TrialOutcome> {
    let stage1 = run_stage1(config, dgp, streams)?;
    let stage2 = run_stage2(config, dgp, stage1.selected_arm, streams)?;
    let CombinedTest {
        statistic,
        threshold,
        reject,
    } = combine(stage1.analysis.p_value, stage2.p_value, config.alpha)?;
    Ok(TrialOutcome {
        selected_arm: stage1.selected_arm,
        stage1: stage1.analysis,
        stage2,
        combined_statistic: statistic,
        combined_threshold: threshold,
        reject_overall: reject,
    })
}

/// Aggregate of a replicated simulation.
#[derive(Clone, Debug)]
pub struct SimulationSummary {
    pub replications: usize,
    pub valid: usize,
    pub invalid: usize,
    /// Fraction of valid replicates rejecting the stage-1 test at level
    /// alpha (marginal, not conditional on selection).
    pub stage1_rate: f64,
    pub stage2_rate: f64,
    pub overall_rate: f64,
    /// Binomial Monte-Carlo standard error of `overall_rate`.
    pub mc_se: f64,
    /// Mean and SD across valid replicates of each stage-1 effect estimate.
    pub delta1_mean: Vec<f64>,
    pub delta1_sd: Vec<f64>,
    /// Mean and SD of the confirmed-arm stage-2 effect estimate.
    pub delta2_mean: f64,
    pub delta2_sd: f64,
    /// How often each treatment arm won stage 1 (index 0 unused).
    pub selected_counts: Vec<usize>,
    /// Valid replicates where a nonpositive robust diagonal fell back to
    /// the conventional entry.
    pub guarded: usize,
}

struct RepRecord {
    valid: bool,
    stage1: bool,
    stage2: bool,
    overall: bool,
    guarded: bool,
    selected: usize,
    delta1: Vec<f64>,
    delta2: f64,
}

fn one_replicate(config: &TrialConfig, dgp: &DgpSpec, streams: &ReplicateStreams) -> RepRecord {
    match run_trial(config, dgp, streams) {
        Ok(out) => RepRecord {
            valid: true,
            stage1: out.stage1.reject,
            stage2: out.stage2.reject,
            overall: out.reject_overall,
            guarded: out.stage1.variance_guarded || out.stage2.variance_guarded,
            selected: out.selected_arm,
            delta1: out.stage1.delta,
            delta2: out.stage2.delta[0],
        },
        Err(_) => RepRecord {
            valid: false,
            stage1: false,
            stage2: false,
            overall: false,
            guarded: false,
            selected: 0,
            delta1: Vec::new(),
            delta2: 0.0,
        },
    }
}

/// Run `replications` independent trials and reduce them in index order.
/// The summary depends only on the configuration and `master_seed`, never
/// on `parallelism`.
pub fn simulate(
    config: &TrialConfig,
    dgp: &DgpSpec,
    replications: usize,
    parallelism: usize,
    master_seed: u64,
) -> Result<SimulationSummary> {
    config.validate()?;
    if replications == 0 {
        return Err(Error::InvalidParameter("need at least one replication".into()));
    }
    let tree = SeedTree::new(master_seed);
    let records: Vec<RepRecord> = if parallelism == 1 {
        (0..replications)
            .map(|i| one_replicate(config, dgp, &tree.replicate(i as u64)))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| {
            (0..replications)
                .into_par_iter()
                .map(|i| one_replicate(config, dgp, &tree.replicate(i as u64)))
                .collect()
        })
    };

    let k = dgp.num_arms() - 1;
    let mut valid = 0usize;
    let (mut r1, mut r2, mut overall, mut guarded) = (0usize, 0usize, 0usize, 0usize);
    let mut selected_counts = vec![0usize; dgp.num_arms()];
    let mut d1_sum = vec![0.0f64; k];
    let mut d1_sq = vec![0.0f64; k];
    let (mut d2_sum, mut d2_sq) = (0.0f64, 0.0f64);
    for rec in &records {
        if !rec.valid {
            continue;
        }
        valid += 1;
        r1 += usize::from(rec.stage1);
        r2 += usize::from(rec.stage2);
        overall += usize::from(rec.overall);
        guarded += usize::from(rec.guarded);
        selected_counts[rec.selected] += 1;
        for (j, &d) in rec.delta1.iter().enumerate() {
            d1_sum[j] += d;
            d1_sq[j] += d * d;
        }
        d2_sum += rec.delta2;
        d2_sq += rec.delta2 * rec.delta2;
    }

    let rate = |c: usize| if valid > 0 { c as f64 / valid as f64 } else { f64::NAN };
    let sd = |sum: f64, sq: f64| {
        if valid > 1 {
            let m = sum / valid as f64;
            ((sq / valid as f64 - m * m).max(0.0) * valid as f64 / (valid as f64 - 1.0)).sqrt()
        } else {
            f64::NAN
        }
    };
    let overall_rate = rate(overall);
    let mc_se = if valid > 0 {
        (overall_rate * (1.0 - overall_rate) / valid as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(SimulationSummary {
        replications,
        valid,
        invalid: replications - valid,
        stage1_rate: rate(r1),
        stage2_rate: rate(r2),
        overall_rate,
        mc_se,
        delta1_mean: d1_sum.iter().map(|&s| s / valid.max(1) as f64).collect(),
        delta1_sd: (0..k).map(|j| sd(d1_sum[j], d1_sq[j])).collect(),
        delta2_mean: d2_sum / valid.max(1) as f64,
        delta2_sd: sd(d2_sum, d2_sq),
        selected_counts,
        guarded,
    })
}
