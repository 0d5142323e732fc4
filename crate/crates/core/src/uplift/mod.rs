//! Three-model heterogeneous treatment effect estimation.
//!
//! One ensemble per experiment arm, then a third ensemble fit to the
//! per-producer difference of the first two on training rows. Only the third
//! model is used for scoring.

pub mod synthetic;

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::gbdt::{self, Dataset, TrainParams, TreeEnsemble};
use crate::ids::ProducerId;
use crate::stats::{self, Estimate};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    #[default]
    Train,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub producer: ProducerId,
    pub features: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
    #[serde(default)]
    pub split: SplitTag,
    /// Period at which the features were observed, when known.
    #[serde(default)]
    pub observed_at: Option<u32>,
}

pub type Fingerprint = [u8; 32];

/// Content hash of a row, independent of its split tag.
pub fn fingerprint(row: &ExperimentRow) -> Fingerprint {
    let mut h = Sha256::new();
    h.update(row.producer.0.to_le_bytes());
    for f in &row.features {
        h.update(f.to_bits().to_le_bytes());
    }
    h.update([u8::from(row.treated)]);
    h.update(row.outcome.to_bits().to_le_bytes());
    h.finalize().into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    rows: Vec<ExperimentRow>,
    feature_names: Vec<String>,
    experiment_start: Option<u32>,
    evaluation_hashes: BTreeSet<Fingerprint>,
}

impl ExperimentDataset {
    /// Validates shapes and, when both timestamps are known, that every
    /// feature was observed before the experiment started.
    pub fn new(
        rows: Vec<ExperimentRow>,
        feature_names: Vec<String>,
        experiment_start: Option<u32>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if feature_names.is_empty() {
            return Err(Error::NoFeatures);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.features.len() != feature_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: feature_names.len(),
                    actual: row.features.len(),
                });
            }
            if let Some(j) = row.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: i, column: feature_names[j].clone() });
            }
            if !row.outcome.is_finite() {
                return Err(Error::NonFinite { row: i, column: "outcome".into() });
            }
            if let (Some(seen), Some(start)) = (row.observed_at, experiment_start) {
                if seen >= start {
                    return Err(Error::PostPeriodFeature {
                        producer: row.producer,
                        observed_at: seen,
                        start,
                    });
                }
            }
        }
        let evaluation_hashes = rows
            .iter()
            .filter(|r| r.split == SplitTag::Evaluation)
            .map(fingerprint)
            .collect();
        Ok(Self { rows, feature_names, experiment_start, evaluation_hashes })
    }

    /// Re-tags a random `fraction` of each arm as evaluation rows.
    pub fn with_random_evaluation(mut self, fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(invalid("evaluation_fraction", format!("{fraction} not in [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for arm in [true, false] {
            let idx: Vec<usize> = (0..self.rows.len())
                .filter(|&i| self.rows[i].treated == arm)
                .collect();
            let k = (idx.len() as f64 * fraction).round() as usize;
            let picked: BTreeSet<usize> = sample(&mut rng, idx.len(), k).into_iter().map(|j| idx[j]).collect();
            for &i in &idx {
                self.rows[i].split = if picked.contains(&i) { SplitTag::Evaluation } else { SplitTag::Train };
            }
        }
        Self::new(self.rows, self.feature_names, self.experiment_start)
    }

    pub fn rows(&self) -> &[ExperimentRow] {
        &self.rows
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn experiment_start(&self) -> Option<u32> {
        self.experiment_start
    }

    pub fn train_rows(&self) -> impl Iterator<Item = &ExperimentRow> {
        self.rows.iter().filter(|r| r.split == SplitTag::Train)
    }

    pub fn evaluation_rows(&self) -> impl Iterator<Item = &ExperimentRow> {
        self.rows.iter().filter(|r| r.split == SplitTag::Evaluation)
    }

    pub fn is_evaluation(&self, row: &ExperimentRow) -> bool {
        row.split == SplitTag::Evaluation || self.evaluation_hashes.contains(&fingerprint(row))
    }

    /// Builds a training set, refusing any row recorded as evaluation data.
    fn fit_input<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a ExperimentRow>,
        target: impl Fn(&ExperimentRow) -> f64,
    ) -> Result<Dataset> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for row in rows {
            if self.is_evaluation(row) {
                return Err(Error::Leakage(row.producer));
            }
            xs.push(row.features.clone());
            ys.push(target(row));
        }
        Dataset::new(xs, ys, self.feature_names.clone())
    }
}

/// Hyperparameters for the three models. Shared unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpliftParams {
    pub treatment: TrainParams,
    pub control: TrainParams,
    pub difference: TrainParams,
}

impl UpliftParams {
    pub fn shared(p: TrainParams) -> Self {
        Self { treatment: p, control: p, difference: p }
    }
}

impl Default for UpliftParams {
    fn default() -> Self {
        Self::shared(TrainParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftModel {
    pub m_treatment: TreeEnsemble,
    pub m_control: TreeEnsemble,
    pub m_difference: TreeEnsemble,
    pub train_row_count: usize,
}

pub fn fit_three_tree(data: &ExperimentDataset, params: &UpliftParams) -> Result<UpliftModel> {
    let train: Vec<&ExperimentRow> = data.train_rows().collect();
    let treated: Vec<&ExperimentRow> = train.iter().copied().filter(|r| r.treated).collect();
    let control: Vec<&ExperimentRow> = train.iter().copied().filter(|r| !r.treated).collect();
    for (arm, rows, p) in [
        ("treated", &treated, &params.treatment),
        ("control", &control, &params.control),
    ] {
        if rows.is_empty() {
            return Err(Error::DegenerateSplit(format!("no {arm} rows in the training split")));
        }
        if rows.len() < p.min_samples_leaf as usize {
            return Err(Error::DegenerateSplit(format!(
                "{} {arm} training rows, fewer than min_samples_leaf = {}",
                rows.len(),
                p.min_samples_leaf
            )));
        }
    }
    let m_treatment = gbdt::fit(&data.fit_input(treated, |r| r.outcome)?, &params.treatment)?;
    let m_control = gbdt::fit(&data.fit_input(control, |r| r.outcome)?, &params.control)?;
    let diff = |r: &ExperimentRow| pseudo_outcome(&m_treatment, &m_control, &r.features);
    let m_difference = gbdt::fit(&data.fit_input(train.iter().copied(), diff)?, &params.difference)?;
    log::info!(
        "three-tree fit on {} training rows ({} treated, {} control)",
        train.len(),
        treated_count(&train),
        train.len() - treated_count(&train)
    );
    Ok(UpliftModel {
        m_treatment,
        m_control,
        m_difference,
        train_row_count: train.len(),
    })
}

fn treated_count(rows: &[&ExperimentRow]) -> usize {
    rows.iter().filter(|r| r.treated).count()
}

/// The per-row target of the third model.
pub fn pseudo_outcome(m_treatment: &TreeEnsemble, m_control: &TreeEnsemble, x: &[f64]) -> f64 {
    m_treatment.predict_unchecked(x) - m_control.predict_unchecked(x)
}

impl UpliftModel {
    pub fn n_features(&self) -> usize {
        self.m_difference.n_features()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        // Each ensemble goes through its own checked parser.
        let part = |k: &str| -> Result<TreeEnsemble> {
            let sub = v
                .get(k)
                .ok_or_else(|| Error::MalformedModel(format!("missing `{k}`")))?;
            TreeEnsemble::from_json(&sub.to_string())
        };
        let model = Self {
            m_treatment: part("m_treatment")?,
            m_control: part("m_control")?,
            m_difference: part("m_difference")?,
            train_row_count: v
                .get("train_row_count")
                .and_then(serde_json::Value::as_u64)
                .ok_or_else(|| Error::MalformedModel("missing `train_row_count`".into()))?
                as usize,
        };
        let d = model.n_features();
        if model.m_treatment.n_features() != d || model.m_control.n_features() != d {
            return Err(Error::MalformedModel("models disagree on feature dimension".into()));
        }
        Ok(model)
    }
}

/// Predicted treatment effect: the third model's output, never the raw arm difference.
pub fn predict_uplift(model: &UpliftModel, x: &[f64]) -> Result<f64> {
    model.m_difference.predict(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n_treated: usize,
    pub n_control: usize,
    pub ate_estimate: f64,
    pub ci95_halfwidth: f64,
    pub control_mean: f64,
    /// ATE as a percentage of the control mean; absent when that mean is 0.
    pub ate_pct_of_control: Option<f64>,
    pub ci95_pct_of_control: Option<f64>,
    pub se: f64,
}

impl GroupStats {
    fn from_rows(name: &str, rows: &[&ExperimentRow]) -> Result<Self> {
        let t: Vec<f64> = rows.iter().filter(|r| r.treated).map(|r| r.outcome).collect();
        let c: Vec<f64> = rows.iter().filter(|r| !r.treated).map(|r| r.outcome).collect();
        if t.is_empty() {
            return Err(Error::EmptyCell(format!("{name} group has no treated rows")));
        }
        if c.is_empty() {
            return Err(Error::EmptyCell(format!("{name} group has no control rows")));
        }
        let e = stats::welch(&t, &c);
        let control_mean = stats::mean(&c);
        let pct = |v: f64| (control_mean != 0.0).then(|| 100.0 * v / control_mean.abs());
        Ok(Self {
            n_treated: t.len(),
            n_control: c.len(),
            ate_estimate: e.value,
            ci95_halfwidth: e.ci95_halfwidth(),
            control_mean,
            ate_pct_of_control: pct(e.value),
            ci95_pct_of_control: pct(e.ci95_halfwidth()),
            se: e.se,
        })
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.ate_estimate, se: self.se }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.ate_estimate - self.ci95_halfwidth, self.ate_estimate + self.ci95_halfwidth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub cutoff_percentile: f64,
    /// Rows scoring strictly above this value form the high group.
    pub cutoff_score: f64,
    pub high: GroupStats,
    pub low: GroupStats,
    pub difference_significant: bool,
    pub p_value: f64,
}

impl GroupComparison {
    pub fn cis_overlap(&self) -> bool {
        let (hl, hh) = self.high.ci95();
        let (ll, lh) = self.low.ci95();
        hl <= lh && ll <= hh
    }
}

/// Nearest-rank percentile of `scores`.
pub fn percentile(scores: &[f64], pct: f64) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub const DEFAULT_CUTOFF: f64 = 80.0;

/// Splits rows by uplift score at a percentile (ties go low) and compares
/// the treatment effect between the two groups.
pub fn evaluate_high_low<'a>(
    model: &UpliftModel,
    rows: impl IntoIterator<Item = &'a ExperimentRow>,
    cutoff_percentile: f64,
) -> Result<GroupComparison> {
    if !(cutoff_percentile > 0.0 && cutoff_percentile < 100.0) {
        return Err(invalid("cutoff_percentile", format!("{cutoff_percentile} not in (0, 100)")));
    }
    let rows: Vec<&ExperimentRow> = rows.into_iter().collect();
    if rows.is_empty() {
        return Err(Error::EmptyCell("no evaluation rows".into()));
    }
    let scores = rows
        .iter()
        .map(|r| predict_uplift(model, &r.features))
        .collect::<Result<Vec<f64>>>()?;
    let cutoff_score = percentile(&scores, cutoff_percentile);
    let (high, low): (Vec<(&ExperimentRow, f64)>, Vec<_>) =
        rows.iter().copied().zip(scores).partition(|(_, s)| *s > cutoff_score);
    let strip = |v: Vec<(&'a ExperimentRow, f64)>| v.into_iter().map(|(r, _)| r).collect::<Vec<_>>();
    let high = GroupStats::from_rows("high", &strip(high))?;
    let low = GroupStats::from_rows("low", &strip(low))?;
    let contrast = high.estimate().minus(&low.estimate());
    let p_value = contrast.p_value();
    Ok(GroupComparison {
        cutoff_percentile,
        cutoff_score,
        difference_significant: contrast.value > 0.0 && p_value < 0.05,
        p_value,
        high,
        low,
    })
}

pub const FOLLOW_UP_HYPOTHESIS: &str = "production gain(high) > production gain(low)";

/// A paired boost experiment: boost `k` random producers from each score
/// group and compare each group's gain against its unboosted members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpDesign {
    pub cutoff_percentile: f64,
    pub cutoff_score: f64,
    pub high_boosted: Vec<ProducerId>,
    pub low_boosted: Vec<ProducerId>,
    pub high_rest: Vec<ProducerId>,
    pub low_rest: Vec<ProducerId>,
    pub hypothesis: String,
    pub seed: u64,
}

impl FollowUpDesign {
    pub fn boosted(&self) -> impl Iterator<Item = ProducerId> + '_ {
        self.high_boosted.iter().chain(&self.low_boosted).copied()
    }
}

pub fn validate_follow_up_design(
    model: &UpliftModel,
    population: &[(ProducerId, Vec<f64>)],
    k_per_group: usize,
    cutoff_percentile: f64,
    seed: u64,
) -> Result<FollowUpDesign> {
    if !(cutoff_percentile > 0.0 && cutoff_percentile < 100.0) {
        return Err(invalid("cutoff_percentile", format!("{cutoff_percentile} not in (0, 100)")));
    }
    if k_per_group == 0 {
        return Err(invalid("k_per_group", "must be at least 1"));
    }
    if population.is_empty() {
        return Err(Error::InsufficientProducers("population is empty".into()));
    }
    let scores = population
        .iter()
        .map(|(_, x)| predict_uplift(model, x))
        .collect::<Result<Vec<f64>>>()?;
    let cutoff_score = percentile(&scores, cutoff_percentile);
    let mut high = Vec::new();
    let mut low = Vec::new();
    for ((id, _), s) in population.iter().zip(&scores) {
        if *s > cutoff_score { high.push(*id) } else { low.push(*id) }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |name: &str, mut group: Vec<ProducerId>| -> Result<(Vec<ProducerId>, Vec<ProducerId>)> {
        // Every group keeps at least one unboosted member as its baseline.
        if k_per_group >= group.len() {
            return Err(Error::InsufficientProducers(format!(
                "{name} group has {} producers, need more than k = {k_per_group}",
                group.len()
            )));
        }
        group.shuffle(&mut rng);
        let rest = group.split_off(k_per_group);
        group.sort();
        let mut rest = rest;
        rest.sort();
        Ok((group, rest))
    };
    let (high_boosted, high_rest) = draw("high", high)?;
    let (low_boosted, low_rest) = draw("low", low)?;
    Ok(FollowUpDesign {
        cutoff_percentile,
        cutoff_score,
        high_boosted,
        low_boosted,
        high_rest,
        low_rest,
        hypothesis: FOLLOW_UP_HYPOTHESIS.into(),
        seed,
    })
}
