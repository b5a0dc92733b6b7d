//! Baseline-covariate stratification.
//!
//! A schema carries one rule per randomization covariate: continuous
//! covariates are dichotomized at a cutpoint (boundary values go to the upper
//! level), already-discrete covariates carry their level code directly. Level
//! tuples map to a single stratum index through the row-major mixed-radix
//! bijection, with the first covariate varying slowest.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CovariateRule {
    /// Dichotomize at the cutpoint: level 1 iff `x >= cut`.
    Threshold(f64),
    /// The covariate already holds an integer level code in `0..levels`.
    Discrete { levels: usize },
}

impl CovariateRule {
    pub fn levels(&self) -> usize {
        match self {
            CovariateRule::Threshold(_) => 2,
            CovariateRule::Discrete { levels } => *levels,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StratumSchema {
    rules: Vec<CovariateRule>,
    stratum_count: usize,
}

impl StratumSchema {
    pub fn new(rules: Vec<CovariateRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::InvalidParameter(
                "stratification schema needs at least one covariate rule".into(),
            ));
        }
        for (j, rule) in rules.iter().enumerate() {
            if rule.levels() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "covariate {j} declares {} levels; at least 2 required",
                    rule.levels()
                )));
            }
        }
        let stratum_count = rules.iter().map(|r| r.levels()).product();
        Ok(Self {
            rules,
            stratum_count,
        })
    }

    pub fn rules(&self) -> &[CovariateRule] {
        &self.rules
    }

    pub fn covariate_count(&self) -> usize {
        self.rules.len()
    }

    pub fn stratum_count(&self) -> usize {
        self.stratum_count
    }

    /// Level of covariate `j` for raw value `x`.
    pub fn level_of(&self, j: usize, x: f64) -> Result<usize> {
        match self.rules[j] {
            CovariateRule::Threshold(cut) => Ok(usize::from(x >= cut)),
            CovariateRule::Discrete { levels } => {
                if x.fract() != 0.0 || x < 0.0 || (x as usize) >= levels {
                    Err(Error::LevelOutOfRange {
                        index: j,
                        value: x,
                        levels,
                    })
                } else {
                    Ok(x as usize)
                }
            }
        }
    }

    /// Discretize a raw covariate vector into `levels` (preallocated, one slot
    /// per rule) and return the stratum index.
    pub fn discretize_into(&self, x: &[f64], levels: &mut [usize]) -> Result<usize> {
        if x.len() < self.rules.len() || levels.len() != self.rules.len() {
            return Err(Error::SchemaMismatch {
                expected: self.rules.len(),
                found: x.len(),
            });
        }
        for j in 0..self.rules.len() {
            levels[j] = self.level_of(j, x[j])?;
        }
        Ok(self.stratum_of_levels(levels))
    }

    /// Convenience form of [`discretize_into`](Self::discretize_into).
    pub fn discretize(&self, x: &[f64]) -> Result<(Vec<usize>, usize)> {
        let mut levels = vec![0usize; self.rules.len()];
        let s = self.discretize_into(x, &mut levels)?;
        Ok((levels, s))
    }

    /// Row-major stratum index of a level tuple.
    pub fn stratum_of_levels(&self, levels: &[usize]) -> usize {
        let mut s = 0usize;
        for (rule, &l) in self.rules.iter().zip(levels) {
            debug_assert!(l < rule.levels());
            s = s * rule.levels() + l;
        }
        s
    }

    /// Inverse of [`stratum_of_levels`](Self::stratum_of_levels).
    pub fn levels_of_stratum(&self, stratum: usize, out: &mut [usize]) {
        debug_assert!(stratum < self.stratum_count);
        let mut rem = stratum;
        for j in (0..self.rules.len()).rev() {
            let lv = self.rules[j].levels();
            out[j] = rem % lv;
            rem /= lv;
        }
    }
}
