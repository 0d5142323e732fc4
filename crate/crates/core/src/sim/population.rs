use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ecosys::{Producer, Viewer};
use crate::error::{invalid, Result};
use crate::ids::{ProducerId, ViewerId};

/// `responsiveness = logistic(weights . x + noise * eps)`, `eps ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponsivenessLink {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub intercept: f64,
}

/// `base_rate = scale * exp(weights . x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseRateSpec {
    pub scale: f64,
    #[serde(default)]
    pub weights: Vec<f64>,
}

/// Viewer-producer affinity, uniform in `[low, high]`, shifted by
/// `-tilt * (responsiveness - 0.5)` and clamped to `[0, 1]`.
///
/// A positive tilt makes the producers with the most long-run upside the
/// least attractive in the short run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinitySpec {
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub tilt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FollowerGraph {
    Complete,
    RandomP { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n_producers: u32,
    pub n_viewers: u32,
    pub feature_dim: usize,
    #[serde(default = "default_slots")]
    pub slots_per_period: u32,
    pub responsiveness_link: ResponsivenessLink,
    pub base_rate: BaseRateSpec,
    pub affinity: AffinitySpec,
    pub follower_graph: FollowerGraph,
}

fn default_slots() -> u32 {
    1
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n_producers: 100,
            n_viewers: 50,
            feature_dim: 3,
            slots_per_period: 1,
            responsiveness_link: ResponsivenessLink {
                weights: vec![0.0; 3],
                noise: 1.0,
                intercept: 0.0,
            },
            base_rate: BaseRateSpec {
                scale: 0.5,
                weights: vec![],
            },
            affinity: AffinitySpec {
                low: 0.05,
                high: 1.0,
                tilt: 0.0,
            },
            follower_graph: FollowerGraph::Complete,
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_producers == 0 || self.n_viewers == 0 {
            return Err(invalid("n_producers/n_viewers", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim", "must be positive"));
        }
        if self.slots_per_period == 0 {
            return Err(invalid("slots_per_period", "must be positive"));
        }
        let link = &self.responsiveness_link;
        if link.weights.len() != self.feature_dim {
            return Err(invalid(
                "responsiveness_link.weights",
                format!("length {} != feature_dim {}", link.weights.len(), self.feature_dim),
            ));
        }
        if !(link.noise >= 0.0 && link.noise.is_finite()) {
            return Err(invalid("responsiveness_link.noise", "must be finite and >= 0"));
        }
        if self.base_rate.weights.len() > self.feature_dim {
            return Err(invalid("base_rate.weights", "longer than feature_dim"));
        }
        if !(self.base_rate.scale >= 0.0 && self.base_rate.scale.is_finite()) {
            return Err(invalid("base_rate.scale", "must be finite and >= 0"));
        }
        let a = self.affinity;
        if !(0.0 <= a.low && a.low <= a.high && a.high <= 1.0) {
            return Err(invalid("affinity", "need 0 <= low <= high <= 1"));
        }
        if let FollowerGraph::RandomP { p } = self.follower_graph {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid("follower_graph.p", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Draws producers (ids `0..n_producers`) and viewers (ids `0..n_viewers`).
pub fn synth_population(spec: &PopulationSpec, seed: u64) -> Result<(Vec<Producer>, Vec<Viewer>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut producers: Vec<Producer> = (0..spec.n_producers)
        .map(|i| {
            let features: Vec<f64> = (0..spec.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let eps: f64 = rng.sample(StandardNormal);
            let link = &spec.responsiveness_link;
            let z = link.intercept + dot(&link.weights, &features) + link.noise * eps;
            let base_rate = spec.base_rate.scale * dot(&spec.base_rate.weights, &features).exp();
            Producer {
                id: ProducerId(i),
                features,
                responsiveness: logistic(z),
                base_rate,
                followers: BTreeSet::new(),
            }
        })
        .collect();

    let viewers = (0..spec.n_viewers)
        .map(|v| {
            let id = ViewerId(v);
            let mut affinity = BTreeMap::new();
            for p in producers.iter_mut() {
                let follows = match spec.follower_graph {
                    FollowerGraph::Complete => true,
                    FollowerGraph::RandomP { p: edge } => rng.random::<f64>() < edge,
                };
                if !follows {
                    continue;
                }
                let a = spec.affinity;
                let raw = a.low + (a.high - a.low) * rng.random::<f64>();
                let value = (raw - a.tilt * (p.responsiveness - 0.5)).clamp(0.0, 1.0);
                affinity.insert(p.id, value);
                p.followers.insert(id);
            }
            Viewer {
                id,
                slots_per_period: spec.slots_per_period,
                affinity,
            }
        })
        .collect();

    Ok((producers, viewers))
}
