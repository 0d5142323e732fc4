//! Squared-error gradient boosting over exact, best-first regression trees.

mod tree;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub rounds: u32,
    pub max_leaves: u32,
    pub learning_rate: f64,
    pub feature_sampling_rate: f64,
    pub min_samples_leaf: u32,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_leaves: 31,
            learning_rate: 0.1,
            feature_sampling_rate: 1.0,
            min_samples_leaf: 20,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        if self.max_leaves == 0 {
            return Err(invalid("max_leaves", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid("learning_rate", format!("{} not in (0, 1]", self.learning_rate)));
        }
        if !(self.feature_sampling_rate > 0.0 && self.feature_sampling_rate <= 1.0) {
            return Err(invalid(
                "feature_sampling_rate",
                format!("{} not in (0, 1]", self.feature_sampling_rate),
            ));
        }
        if self.min_samples_leaf == 0 {
            return Err(invalid("min_samples_leaf", "must be at least 1"));
        }
        Ok(())
    }
}

/// Dense row-major training data. Missing values are not representable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    targets: Vec<f64>,
    feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::NoFeatures);
        }
        if targets.len() != rows.len() {
            return Err(invalid(
                "targets",
                format!("{} targets for {} rows", targets.len(), rows.len()),
            ));
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: row.len() });
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, column: feature_names[j].clone() });
            }
            values.extend_from_slice(row);
        }
        if let Some(i) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: "target".into() });
        }
        Ok(Self { values, targets, feature_names })
    }

    /// Names the columns `f_0 .. f_{d-1}`.
    pub fn unnamed(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        Self::new(rows, targets, default_names(d))
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_features())
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn at(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }
}

pub fn default_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("f_{j}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub base_prediction: f64,
    pub params: TrainParams,
    pub trees: Vec<Tree>,
    #[serde(default)]
    pub training_loss_curve: Vec<f64>,
    pub feature_names: Vec<String>,
}

struct Candidate {
    leaf: usize,
    /// Row indices in ascending order, so sums do not depend on column order.
    members: Vec<u32>,
    /// Row indices per feature, each list sorted by that feature's value.
    sorted: Vec<Vec<u32>>,
    sum: f64,
    split: Option<SplitChoice>,
}

#[derive(Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_count: usize,
}

struct Grower<'a> {
    data: &'a Dataset,
    residuals: &'a [f64],
    features: &'a [usize],
    min_leaf: usize,
}

impl Grower<'_> {
    fn best_split(&self, sorted: &[Vec<u32>], sum: f64) -> Option<SplitChoice> {
        let n = sorted[0].len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let parent = sum * sum / n as f64;
        let mut best: Option<SplitChoice> = None;
        for &f in self.features {
            let rows = &sorted[f];
            let mut left = 0.0;
            for k in 0..n - 1 {
                let r = rows[k] as usize;
                left += self.residuals[r];
                let nl = k + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let here = self.data.at(r, f);
                let next = self.data.at(rows[k + 1] as usize, f);
                if here == next {
                    continue;
                }
                let right = sum - left;
                let gain = left * left / nl as f64 + right * right / (n - nl) as f64 - parent;
                if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: here + (next - here) / 2.0,
                        gain,
                        left_count: nl,
                    });
                }
            }
        }
        best
    }

    fn candidate(&self, leaf: usize, members: Vec<u32>, sorted: Vec<Vec<u32>>) -> Candidate {
        let sum = members.iter().map(|&r| self.residuals[r as usize]).sum();
        let split = self.best_split(&sorted, sum);
        Candidate { leaf, members, sorted, sum, split }
    }

    fn grow(&self, presorted: &[Vec<u32>], max_leaves: usize) -> Tree {
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let all = (0..self.data.n_rows() as u32).collect();
        let mut open = vec![self.candidate(0, all, presorted.to_vec())];
        let mut leaves = 1;
        while leaves < max_leaves {
            // Highest gain first; the earliest-created leaf wins ties.
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, c)| c.split.map(|s| (i, s.gain, c.leaf)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((i, _, _)) = pick else { break };
            let cand = open.swap_remove(i);
            let split = cand.split.expect("picked candidates have a split");
            let mut goes_left = vec![false; self.data.n_rows()];
            for &r in &cand.sorted[split.feature][..split.left_count] {
                goes_left[r as usize] = true;
            }
            let (lm, rm) = cand.members.iter().partition(|&&x| goes_left[x as usize]);
            let (mut l, mut r) = (Vec::new(), Vec::new());
            for rows in &cand.sorted {
                let (a, b): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&x| goes_left[x as usize]);
                l.push(a);
                r.push(b);
            }
            let left = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[cand.leaf] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right: left + 1,
                gain: split.gain,
            };
            open.push(self.candidate(left, lm, l));
            open.push(self.candidate(left + 1, rm, r));
            leaves += 1;
        }
        for c in open {
            nodes[c.leaf] = Node::Leaf { value: c.sum / c.members.len() as f64 };
        }
        Tree { nodes }
    }
}

/// Column order used for sampling and tie-breaking: by name, so that
/// permuting columns together with their names changes nothing.
fn name_order(names: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]).then(a.cmp(&b)));
    order
}

pub fn fit(data: &Dataset, params: &TrainParams) -> Result<TreeEnsemble> {
    params.validate()?;
    let n = data.n_rows();
    let d = data.n_features();
    let base = data.targets.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    let order = name_order(&data.feature_names);
    let presorted: Vec<Vec<u32>> = (0..d)
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| data.at(a as usize, f).total_cmp(&data.at(b as usize, f)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let n_sampled = ((d as f64 * params.feature_sampling_rate).ceil() as usize).clamp(1, d);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut residuals = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.rounds as usize);
    let mut curve = Vec::with_capacity(params.rounds as usize);

    for _ in 0..params.rounds {
        for i in 0..n {
            residuals[i] = data.targets[i] - pred[i];
        }
        let features: Vec<usize> = if n_sampled == d {
            order.clone()
        } else {
            let mut picked: Vec<usize> = sample(&mut rng, d, n_sampled).into_iter().collect();
            picked.sort_unstable();
            picked.into_iter().map(|k| order[k]).collect()
        };
        let grower = Grower {
            data,
            residuals: &residuals,
            features: &features,
            min_leaf: params.min_samples_leaf as usize,
        };
        let mut tree = grower.grow(&presorted, params.max_leaves as usize);
        let next: Vec<f64> = pred
            .iter()
            .enumerate()
            .map(|(i, p)| p + params.learning_rate * tree.predict(data.row(i)))
            .collect();
        let loss = mse(&next, &data.targets);
        let prev = curve.last().copied().unwrap_or_else(|| mse(&pred, &data.targets));
        if loss <= prev {
            pred = next;
            curve.push(loss);
        } else {
            // Exact arithmetic never gets here; a near-zero leaf can only add rounding noise.
            tree = Tree::leaf(0.0);
            curve.push(prev);
        }
        trees.push(tree);
    }
    log::debug!(
        "fit {} rounds on {n}x{d}, final mse {:.6}",
        params.rounds,
        curve.last().copied().unwrap_or(f64::NAN)
    );
    Ok(TreeEnsemble {
        base_prediction: base,
        params: *params,
        trees,
        training_loss_curve: curve,
        feature_names: data.feature_names.clone(),
    })
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

impl TreeEnsemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features(), actual: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        // Same accumulation order as training, so training-row predictions match bit for bit.
        let lr = self.params.learning_rate;
        self.trees
            .iter()
            .fold(self.base_prediction, |acc, t| acc + lr * t.predict(x))
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.n_features() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: data.n_features(),
            });
        }
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }

    /// Share of total split gain per feature. All zeros when no tree split.
    pub fn feature_importance(&self) -> BTreeMap<String, f64> {
        let mut gain = vec![0.0; self.n_features()];
        for tree in &self.trees {
            for node in &tree.nodes {
                if let Node::Split { feature, gain: g, .. } = node {
                    gain[*feature] += g;
                }
            }
        }
        let total: f64 = gain.iter().sum();
        self.feature_names
            .iter()
            .zip(gain)
            .map(|(name, g)| (name.clone(), if total > 0.0 { g / total } else { 0.0 }))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and structurally checks a serialized ensemble.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        if !self.base_prediction.is_finite() {
            return Err(Error::MalformedModel("non-finite base prediction".into()));
        }
        self.params
            .validate()
            .map_err(|e| Error::MalformedModel(e.to_string()))?;
        if self.feature_names.is_empty() {
            return Err(Error::MalformedModel("no features".into()));
        }
        for (k, tree) in self.trees.iter().enumerate() {
            tree.check(self.n_features())
                .map_err(|m| Error::MalformedModel(format!("tree {k}: {m}")))?;
        }
        Ok(())
    }

    pub fn write_loss_curve<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "mse"])?;
        for (r, v) in self.training_loss_curve.iter().enumerate() {
            w.write_record([(r + 1).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
