//! Per-patient trial records in struct-of-arrays form.

use crate::error::{Error, Result};

/// One analysis population: covariates (row-major), assigned arm, stratum and
/// binary outcome per patient.
#[derive(Clone, Debug, Default)]
pub struct TrialDataset {
    x: Vec<f64>,
    x_width: usize,
    pub arm: Vec<usize>,
    pub stratum: Vec<usize>,
    pub y: Vec<f64>,
    pub num_arms: usize,
    pub stratum_count: usize,
}

impl TrialDataset {
    pub fn new(num_arms: usize, stratum_count: usize, x_width: usize) -> Self {
        Self {
            x: Vec::new(),
            x_width,
            arm: Vec::new(),
            stratum: Vec::new(),
            y: Vec::new(),
            num_arms,
            stratum_count,
        }
    }

    pub fn with_capacity(num_arms: usize, stratum_count: usize, x_width: usize, n: usize) -> Self {
        let mut d = Self::new(num_arms, stratum_count, x_width);
        d.x.reserve(n * x_width);
        d.arm.reserve(n);
        d.stratum.reserve(n);
        d.y.reserve(n);
        d
    }

    pub fn push(&mut self, x: &[f64], arm: usize, stratum: usize, y: f64) {
        debug_assert_eq!(x.len(), self.x_width);
        debug_assert!(arm < self.num_arms && stratum < self.stratum_count);
        self.x.extend_from_slice(x);
        self.arm.push(arm);
        self.stratum.push(stratum);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x_width(&self) -> usize {
        self.x_width
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.x_width..(i + 1) * self.x_width]
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_arms];
        for &k in &self.arm {
            counts[k] += 1;
        }
        counts
    }

    /// Reject datasets that cannot support any per-arm analysis.
    pub fn require_all_arms(&self) -> Result<Vec<usize>> {
        let counts = self.arm_counts();
        for (k, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(Error::EmptyArm { arm: k });
            }
        }
        Ok(counts)
    }
}
