//! Sequential treatment assignment under covariate-adaptive randomization.
//!
//! Four schemes share one interface:
//!
//! * `Complete` — ignore covariates, assign uniformly.
//! * `StratifiedBlocks` — independent permuted blocks within each stratum;
//!   every completed block allocates each arm equally often.
//! * `PocockSimon` — marginal minimization: for each candidate arm compute the
//!   sum over covariates of the range (max minus min) of the hypothetical
//!   post-assignment per-arm counts at the patient's margin levels, then bias
//!   a coin toward the arm(s) attaining the minimum.
//! * `HuHu` — weighted minimization that augments the marginal ranges with an
//!   overall-count range and a within-stratum range:
//!   `w_overall * overall + sum_j w_margin[j] * margin_j + w_stratum * stratum`.
//!
//! The minimization coin puts mass `p` on the minimizing arm (split equally on
//! ties) and spreads `1 - p` equally over the rest; a complete tie degenerates
//! to the uniform draw, so a fresh state is always balanced coin flipping.

use crate::error::{Error, Result};
use crate::stratum::StratumSchema;
use nalgebra::DMatrix;
use rand::RngExt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Complete,
    StratifiedBlocks,
    PocockSimon,
    HuHu,
}

/// Scheme selection plus its tuning knobs. Unused knobs are ignored by the
/// other schemes, so one spec type can describe any cell of a study grid.
#[derive(Clone, Debug)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    /// Permuted-block length; `None` resolves to two slots per arm.
    pub block_size: Option<usize>,
    /// Coin mass on the imbalance-minimizing arm(s).
    pub biased_coin_p: f64,
    /// Overall-count weight (weighted minimization only).
    pub w_overall: f64,
    /// Per-covariate margin weights; empty resolves to 0.1 each.
    pub w_margin: Vec<f64>,
    /// Within-stratum weight (weighted minimization only).
    pub w_stratum: f64,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            block_size: None,
            biased_coin_p: 0.8,
            w_overall: 0.3,
            w_margin: Vec::new(),
            w_stratum: 0.5,
        }
    }
}

/// Running state of one randomization run: assignment counts at every
/// granularity a scheme may consult, plus remaining block slots.
#[derive(Clone, Debug)]
pub struct Randomizer {
    spec: SchemeSpec,
    schema: StratumSchema,
    num_arms: usize,
    block_size: usize,
    w_margin: Vec<f64>,
    n_assigned: u64,
    overall: Vec<u32>,
    /// Per covariate: `levels x num_arms` counts, flattened level-major.
    margins: Vec<Vec<u32>>,
    /// `stratum_count x num_arms` counts, flattened stratum-major.
    strata: Vec<u32>,
    /// Remaining block slots per stratum and arm (permuted blocks only).
    block_slots: Vec<u32>,
    prob_buf: Vec<f64>,
    level_buf: Vec<usize>,
}

impl Randomizer {
    pub fn new(spec: SchemeSpec, schema: &StratumSchema, num_arms: usize) -> Result<Self> {
        if !(2..=16).contains(&num_arms) {
            return Err(Error::InvalidParameter(format!(
                "arm count {num_arms} outside the supported range 2..=16"
            )));
        }
        let block_size = spec.block_size.unwrap_or(2 * num_arms);
        if block_size == 0 || block_size % num_arms != 0 {
            return Err(Error::InvalidParameter(format!(
                "block size {block_size} is not a positive multiple of {num_arms} arms"
            )));
        }
        let p = spec.biased_coin_p;
        if !(p >= 1.0 / num_arms as f64 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "biased-coin mass {p} outside [1/{num_arms}, 1]"
            )));
        }
        let w_margin = if spec.w_margin.is_empty() {
            vec![0.1; schema.covariate_count()]
        } else {
            spec.w_margin.clone()
        };
        if w_margin.len() != schema.covariate_count() {
            return Err(Error::InvalidParameter(format!(
                "{} margin weights for {} covariates",
                w_margin.len(),
                schema.covariate_count()
            )));
        }
        for &w in w_margin.iter().chain([&spec.w_overall, &spec.w_stratum]) {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "imbalance weights must be finite and nonnegative, got {w}"
                )));
            }
        }
        let margins = schema
            .rules()
            .iter()
            .map(|r| vec![0u32; r.levels() * num_arms])
            .collect();
        Ok(Self {
            schema: schema.clone(),
            num_arms,
            block_size,
            w_margin,
            n_assigned: 0,
            overall: vec![0; num_arms],
            margins,
            strata: vec![0; schema.stratum_count() * num_arms],
            block_slots: vec![0; schema.stratum_count() * num_arms],
            prob_buf: vec![0.0; num_arms],
            level_buf: vec![0; schema.covariate_count()],
            spec,
        })
    }

    /// Forget all assignments, keeping the configuration.
    pub fn reset(&mut self) {
        self.n_assigned = 0;
        self.overall.fill(0);
        for m in &mut self.margins {
            m.fill(0);
        }
        self.strata.fill(0);
        self.block_slots.fill(0);
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn n_assigned(&self) -> u64 {
        self.n_assigned
    }

    pub fn schema(&self) -> &StratumSchema {
        &self.schema
    }

    pub fn overall_counts(&self) -> &[u32] {
        &self.overall
    }

    /// `levels x num_arms` counts for covariate `j`, level-major.
    pub fn margin_counts(&self, j: usize) -> &[u32] {
        &self.margins[j]
    }

    /// `stratum_count x num_arms` counts, stratum-major.
    pub fn stratum_counts(&self) -> &[u32] {
        &self.strata
    }

    /// Assign the next patient from raw covariates.
    pub fn assign(&mut self, x: &[f64], rng: &mut impl RngExt) -> Result<usize> {
        let mut levels = std::mem::take(&mut self.level_buf);
        let stratum = self.schema.discretize_into(x, &mut levels)?;
        let arm = self.assign_at(&levels, stratum, rng);
        self.level_buf = levels;
        Ok(arm)
    }

    /// Assign the next patient from pre-discretized margin levels and stratum.
    pub fn assign_at(&mut self, levels: &[usize], stratum: usize, rng: &mut impl RngExt) -> usize {
        if self.spec.scheme == Scheme::StratifiedBlocks {
            self.refill_block_if_empty(stratum);
        }
        let mut probs = std::mem::take(&mut self.prob_buf);
        self.probabilities_into(levels, stratum, &mut probs);
        let u: f64 = rng.random();
        let mut arm = usize::MAX;
        let mut acc = 0.0;
        for (k, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                // Remember the last admissible arm so a rounding shortfall in
                // the cumulative sum can never select a zero-probability arm.
                arm = k;
                if u < acc {
                    break;
                }
            }
        }
        self.prob_buf = probs;
        self.record(arm, levels, stratum);
        arm
    }

    /// Probability the next patient with these margin levels and stratum is
    /// assigned to each arm, given the current state.
    pub fn assignment_probabilities(&self, levels: &[usize], stratum: usize) -> Vec<f64> {
        let mut probs = vec![0.0; self.num_arms];
        self.probabilities_into(levels, stratum, &mut probs);
        probs
    }

    fn probabilities_into(&self, levels: &[usize], stratum: usize, out: &mut [f64]) {
        let a = self.num_arms;
        match self.spec.scheme {
            Scheme::Complete => out.fill(1.0 / a as f64),
            Scheme::StratifiedBlocks => {
                let slots = &self.block_slots[stratum * a..(stratum + 1) * a];
                let total: u32 = slots.iter().sum();
                if total == 0 {
                    // A fresh block would offer every arm equally often.
                    out.fill(1.0 / a as f64);
                } else {
                    for k in 0..a {
                        out[k] = slots[k] as f64 / total as f64;
                    }
                }
            }
            Scheme::PocockSimon | Scheme::HuHu => {
                let mut scores = [0.0f64; 16];
                let scores = &mut scores[..a];
                self.minimization_scores(levels, stratum, scores);
                coin_from_scores(scores, self.spec.biased_coin_p, out);
            }
        }
    }

    /// Hypothetical post-assignment imbalance score for each candidate arm.
    fn minimization_scores(&self, levels: &[usize], stratum: usize, scores: &mut [f64]) {
        let a = self.num_arms;
        let weighted = self.spec.scheme == Scheme::HuHu;
        for t in 0..a {
            let mut score = 0.0;
            for (j, &lvl) in levels.iter().enumerate() {
                let counts = &self.margins[j][lvl * a..(lvl + 1) * a];
                let w = if weighted { self.w_margin[j] } else { 1.0 };
                score += w * range_with_increment(counts, t);
            }
            if weighted {
                score += self.spec.w_overall * range_with_increment(&self.overall, t);
                let counts = &self.strata[stratum * a..(stratum + 1) * a];
                score += self.spec.w_stratum * range_with_increment(counts, t);
            }
            scores[t] = score;
        }
    }

    fn record(&mut self, arm: usize, levels: &[usize], stratum: usize) {
        let a = self.num_arms;
        self.n_assigned += 1;
        self.overall[arm] += 1;
        for (j, &lvl) in levels.iter().enumerate() {
            self.margins[j][lvl * a + arm] += 1;
        }
        self.strata[stratum * a + arm] += 1;
        if self.spec.scheme == Scheme::StratifiedBlocks {
            self.block_slots[stratum * a + arm] -= 1;
        }
    }

    fn refill_block_if_empty(&mut self, stratum: usize) {
        let a = self.num_arms;
        let slots = &mut self.block_slots[stratum * a..(stratum + 1) * a];
        if slots.iter().all(|&s| s == 0) {
            slots.fill((self.block_size / a) as u32);
        }
    }
}

/// Range (max minus min) of `counts` after a hypothetical increment at `t`.
#[inline]
fn range_with_increment(counts: &[u32], t: usize) -> f64 {
    let mut max = 0u32;
    let mut min = u32::MAX;
    for (k, &c) in counts.iter().enumerate() {
        let c = c + u32::from(k == t);
        max = max.max(c);
        min = min.min(c);
    }
    (max - min) as f64
}

/// Biased coin over minimization scores: minimizers share mass `p`, the rest
/// share `1 - p`; a complete tie is the uniform draw. Score comparison uses a
/// relative epsilon because equal-by-algebra scores can differ by an ulp.
fn coin_from_scores(scores: &[f64], p: f64, out: &mut [f64]) {
    let a = scores.len();
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let eps = 1e-9 * min.abs().max(1.0);
    let tied = scores.iter().filter(|&&s| s - min <= eps).count();
    if tied == a {
        out.fill(1.0 / a as f64);
        return;
    }
    let p_min = p / tied as f64;
    let p_rest = (1.0 - p) / (a - tied) as f64;
    for (k, &s) in scores.iter().enumerate() {
        out[k] = if s - min <= eps { p_min } else { p_rest };
    }
}

/// Per-arm, per-stratum imbalance of a completed assignment sequence:
/// `D[k][s] = sum_i (1{arm_i = k} - 1/A) 1{S_i = s}`, returned as an
/// `A x stratum_count` matrix.
pub fn imbalance_matrix(
    arms: &[usize],
    strata: &[usize],
    num_arms: usize,
    stratum_count: usize,
) -> Result<DMatrix<f64>> {
    if arms.len() != strata.len() {
        return Err(Error::InvalidParameter(format!(
            "{} arms vs {} strata",
            arms.len(),
            strata.len()
        )));
    }
    let mut counts = vec![0u64; num_arms * stratum_count];
    let mut per_stratum = vec![0u64; stratum_count];
    for (&k, &s) in arms.iter().zip(strata) {
        if k >= num_arms || s >= stratum_count {
            return Err(Error::InvalidParameter(format!(
                "arm {k} or stratum {s} out of range"
            )));
        }
        counts[s * num_arms + k] += 1;
        per_stratum[s] += 1;
    }
    Ok(imbalance_from_counts(
        &counts,
        &per_stratum,
        num_arms,
        stratum_count,
    ))
}

/// Imbalance matrix straight from stratum-major count tables.
pub(crate) fn imbalance_from_counts(
    counts: &[u64],
    per_stratum: &[u64],
    num_arms: usize,
    stratum_count: usize,
) -> DMatrix<f64> {
    let inv_a = 1.0 / num_arms as f64;
    DMatrix::from_fn(num_arms, stratum_count, |k, s| {
        counts[s * num_arms + k] as f64 - per_stratum[s] as f64 * inv_a
    })
}
