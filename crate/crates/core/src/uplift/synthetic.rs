//! Synthetic experiment data with known per-row uplift.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ExperimentDataset, ExperimentRow, SplitTag};
use crate::error::{invalid, Result};
use crate::gbdt::default_names;
use crate::ids::ProducerId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpliftShape {
    /// y = x0 + 0.5 x1^2 + noise in both arms.
    Zero,
    /// y = x0 + treated * max(0, x1) + noise.
    #[default]
    Linear,
}

impl UpliftShape {
    pub fn baseline(self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => x[0] + 0.5 * x[1] * x[1],
            Self::Linear => x[0],
        }
    }

    pub fn uplift(self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Linear => x[1].max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    /// At least 2; the extra columns are pure noise.
    pub n_features: usize,
    pub noise_sd: f64,
    pub evaluation_fraction: f64,
    pub shape: UpliftShape,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 20_000,
            n_features: 5,
            noise_sd: 1.0,
            evaluation_fraction: 0.2,
            shape: UpliftShape::Linear,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub dataset: ExperimentDataset,
    /// Ground truth, aligned with `dataset.rows()`.
    pub true_uplift: Vec<f64>,
}

impl SyntheticSpec {
    /// Half the rows (rounded down) are treated; evaluation rows are drawn
    /// within each arm.
    pub fn generate(&self, seed: u64) -> Result<SyntheticWorld> {
        if self.n < 2 {
            return Err(invalid("n", "need at least 2 rows"));
        }
        if self.n_features < 2 {
            return Err(invalid("n_features", "need at least 2 features"));
        }
        let noise = Normal::new(0.0, self.noise_sd)
            .map_err(|e| invalid("noise_sd", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut treated = vec![false; self.n];
        treated[..self.n / 2].fill(true);
        treated.shuffle(&mut rng);
        let mut rows = Vec::with_capacity(self.n);
        let mut true_uplift = Vec::with_capacity(self.n);
        for (i, &t) in treated.iter().enumerate() {
            let x: Vec<f64> = (0..self.n_features).map(|_| StandardNormal.sample(&mut rng)).collect();
            let tau = self.shape.uplift(&x);
            let y = self.shape.baseline(&x) + if t { tau } else { 0.0 } + noise.sample(&mut rng);
            rows.push(ExperimentRow {
                producer: ProducerId(i as u32),
                features: x,
                treated: t,
                outcome: y,
                split: SplitTag::Train,
                observed_at: None,
            });
            true_uplift.push(tau);
        }
        let dataset = ExperimentDataset::new(rows, default_names(self.n_features), None)?
            .with_random_evaluation(self.evaluation_fraction, seed ^ 0x5eed)?;
        Ok(SyntheticWorld { dataset, true_uplift })
    }
}
