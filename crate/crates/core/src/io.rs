//! File formats: scenario JSON, score and experiment CSVs, engagement logs,
//! population exports and assignments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecosys::{
    ContentReach, DiscountedObjective, EngagementEvent, Producer, Scenario, Thresholds, Viewer,
};
use crate::error::{Error, Result};
use crate::harness::{Assignment, Fractions, Label};
use crate::ids::ProducerId;
use crate::policy::{Boost, RankingPolicy, ScoreAugmented};
use crate::sim::ProductionRule;
use crate::uplift::{ExperimentDataset, ExperimentRow, SplitTag};

/// How a scenario file asks to be ranked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Myopic,
    Boosted {
        producers: BTreeSet<ProducerId>,
        multiplier: f64,
    },
    ScoreAugmented {
        weight: f64,
        /// Resolved relative to the scenario file.
        scores_file: String,
        /// Defaults to the mean of the listed scores.
        #[serde(default)]
        default_score: Option<f64>,
    },
}

impl PolicySpec {
    /// Builds the ranking policy, reading any scores file relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<RankingPolicy> {
        Ok(match self {
            PolicySpec::Myopic => RankingPolicy::Myopic,
            PolicySpec::Boosted { producers, multiplier } => {
                RankingPolicy::Boosted(Boost::new(producers.clone(), *multiplier)?)
            }
            PolicySpec::ScoreAugmented { weight, scores_file, default_score } => {
                let scores = read_scores_csv(File::open(base.join(scores_file))?)?;
                if scores.is_empty() {
                    return Err(Error::EmptyScores);
                }
                let default = match default_score {
                    Some(d) => *d,
                    None => crate::stats::mean(&scores.values().copied().collect::<Vec<_>>()),
                };
                RankingPolicy::ScoreAugmented(ScoreAugmented::new(scores, default, *weight)?)
            }
        })
    }
}

/// A scenario document: the world plus optional production rule and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScenarioDoc", into = "ScenarioDoc")]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub production: Option<ProductionRule>,
    pub policy: Option<PolicySpec>,
}

// Mirrors `Scenario` field by field; `#[serde(flatten)]` would turn the
// integer map keys into strings.
#[derive(Serialize, Deserialize)]
struct ScenarioDoc {
    viewers: Vec<Viewer>,
    producers: Vec<Producer>,
    objective: DiscountedObjective,
    #[serde(default)]
    thresholds: Thresholds,
    #[serde(default = "default_lifetime")]
    content_lifetime: Option<u32>,
    #[serde(default)]
    reach: ContentReach,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    production: Option<ProductionRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<PolicySpec>,
}

fn default_lifetime() -> Option<u32> {
    Some(1)
}

impl From<ScenarioDoc> for ScenarioFile {
    fn from(d: ScenarioDoc) -> Self {
        Self {
            scenario: Scenario {
                viewers: d.viewers,
                producers: d.producers,
                objective: d.objective,
                thresholds: d.thresholds,
                content_lifetime: d.content_lifetime,
                reach: d.reach,
            },
            production: d.production,
            policy: d.policy,
        }
    }
}

impl From<ScenarioFile> for ScenarioDoc {
    fn from(f: ScenarioFile) -> Self {
        let s = f.scenario;
        Self {
            viewers: s.viewers,
            producers: s.producers,
            objective: s.objective,
            thresholds: s.thresholds,
            content_lifetime: s.content_lifetime,
            reach: s.reach,
            production: f.production,
            policy: f.policy,
        }
    }
}

/// Parses and validates a scenario document. Syntax errors keep serde's
/// line and column.
pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let file: ScenarioFile = serde_json::from_str(text)?;
    file.scenario.validate()?;
    if let Some(rule) = &file.production {
        rule.validate()?;
    }
    Ok(file)
}

pub fn scenario_json(file: &ScenarioFile) -> Result<String> {
    Ok(serde_json::to_string_pretty(file)?)
}

/// Reads `producer_id,score`.
pub fn read_scores_csv<R: Read>(input: R) -> Result<BTreeMap<ProducerId, f64>> {
    #[derive(Deserialize)]
    struct Row {
        producer_id: u32,
        score: f64,
    }
    let mut out = BTreeMap::new();
    for (i, rec) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
        let row = rec?;
        if !row.score.is_finite() {
            return Err(Error::Parse(format!("line {}: non-finite score", i + 2)));
        }
        if out.insert(ProducerId(row.producer_id), row.score).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate producer {}", i + 2, row.producer_id)));
        }
    }
    Ok(out)
}

pub fn write_scores_csv<W: Write>(scores: &BTreeMap<ProducerId, f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["producer_id", "score"])?;
    for (p, s) in scores {
        w.write_record([p.0.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

/// Reads `producer_id,treated,outcome,<features...>` with an optional
/// `split` column (`train` or `evaluation`) anywhere in the header.
pub fn read_experiment_csv<R: Read>(input: R) -> Result<ExperimentDataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(pid), Some(treated), Some(outcome)) = (col("producer_id"), col("treated"), col("outcome")) else {
        return Err(Error::Parse("header needs producer_id, treated and outcome".into()));
    };
    let split = col("split");
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| ![Some(pid), Some(treated), Some(outcome), split].contains(&Some(i)))
        .collect();
    let names = feature_cols.iter().map(|&i| header[i].to_string()).collect();
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: `{}` is not a number", field(i))))
        };
        let producer = field(pid)
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::Parse(format!("line {line}: bad producer_id `{}`", field(pid))))?;
        let is_treated = parse_bool(field(treated))
            .ok_or_else(|| Error::Parse(format!("line {line}: bad treated flag `{}`", field(treated))))?;
        let tag = match split.map(|i| field(i).trim()) {
            None | Some("") | Some("train") => SplitTag::Train,
            Some("evaluation") | Some("eval") => SplitTag::Evaluation,
            Some(other) => return Err(Error::Parse(format!("line {line}: unknown split `{other}`"))),
        };
        rows.push(ExperimentRow {
            producer: ProducerId(producer),
            features: feature_cols.iter().map(|&i| num(i)).collect::<Result<_>>()?,
            treated: is_treated,
            outcome: num(outcome)?,
            split: tag,
            observed_at: None,
        });
    }
    ExperimentDataset::new(rows, names, None)
}

pub fn write_experiment_csv<W: Write>(data: &ExperimentDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["producer_id".to_string(), "treated".into(), "outcome".into()];
    header.extend(data.feature_names().iter().cloned());
    header.push("split".into());
    w.write_record(&header)?;
    for row in data.rows() {
        let mut rec = vec![
            row.producer.0.to_string(),
            u8::from(row.treated).to_string(),
            row.outcome.to_string(),
        ];
        rec.extend(row.features.iter().map(f64::to_string));
        rec.push(
            match row.split {
                SplitTag::Train => "train",
                SplitTag::Evaluation => "evaluation",
            }
            .into(),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_engagement_csv<W: Write>(log: &[EngagementEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["period", "viewer_id", "producer_id", "content_id", "kind", "value"])?;
    for e in log {
        w.write_record([
            e.period.to_string(),
            e.viewer.0.to_string(),
            e.producer.0.to_string(),
            e.content.0.to_string(),
            e.kind.to_string(),
            e.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GroundTruth {
    responsiveness: f64,
}

#[derive(Serialize)]
struct ProducerExport<'a> {
    id: ProducerId,
    features: &'a [f64],
    base_rate: f64,
    followers: &'a BTreeSet<crate::ids::ViewerId>,
    /// Simulator truth. Nothing that learns from data may read this.
    _ground_truth: GroundTruth,
}

#[derive(Serialize)]
struct PopulationExport<'a> {
    producers: Vec<ProducerExport<'a>>,
    viewers: &'a [Viewer],
}

/// Population export with responsiveness moved under `_ground_truth`.
pub fn population_json(scenario: &Scenario) -> Result<String> {
    let export = PopulationExport {
        producers: scenario
            .producers
            .iter()
            .map(|p| ProducerExport {
                id: p.id,
                features: &p.features,
                base_rate: p.base_rate,
                followers: &p.followers,
                _ground_truth: GroundTruth { responsiveness: p.responsiveness },
            })
            .collect(),
        viewers: &scenario.viewers,
    };
    let mut s = serde_json::to_string_pretty(&export)?;
    s.push('\n');
    Ok(s)
}

/// Producer features from a population export, or from any JSON document
/// with a `producers` array of `{id, features}` objects.
pub fn population_features(text: &str) -> Result<BTreeMap<ProducerId, Vec<f64>>> {
    #[derive(Deserialize)]
    struct P {
        id: ProducerId,
        features: Vec<f64>,
    }
    #[derive(Deserialize)]
    struct Doc {
        producers: Vec<P>,
    }
    let doc: Doc = serde_json::from_str(text)?;
    let dim = doc.producers.first().map_or(0, |p| p.features.len());
    let mut out = BTreeMap::new();
    for p in doc.producers {
        if p.features.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: p.features.len() });
        }
        if out.insert(p.id, p.features).is_some() {
            return Err(Error::Parse(format!("duplicate producer {}", p.id)));
        }
    }
    Ok(out)
}

pub fn write_assignment_csv<W: Write>(a: &Assignment, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["producer_id", "label"])?;
    for (p, l) in &a.labels {
        w.write_record([p.0.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `producer_id,label`. Fractions are recovered from the counts.
pub fn read_assignment_csv<R: Read>(input: R) -> Result<Assignment> {
    #[derive(Deserialize)]
    struct Row {
        producer_id: u32,
        label: Label,
    }
    let mut labels = BTreeMap::new();
    for (i, rec) in csv::Reader::from_reader(input).deserialize::<Row>().enumerate() {
        let row = rec?;
        if labels.insert(ProducerId(row.producer_id), row.label).is_some() {
            return Err(Error::Parse(format!("line {}: duplicate producer {}", i + 2, row.producer_id)));
        }
    }
    let n = labels.len().max(1) as f64;
    let frac = |l: Label| labels.values().filter(|x| **x == l).count() as f64 / n;
    let fractions = Fractions {
        treat: frac(Label::Treatment),
        control: frac(Label::Control),
        eval_treat: frac(Label::EvaluationTreatment),
        eval_control: frac(Label::EvaluationControl),
        holdout: frac(Label::Holdout),
    };
    Ok(Assignment { labels, fractions, seed: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::make_two_period_scenario;

    #[test]
    fn scenario_round_trip_with_policy() {
        let inst = make_two_period_scenario(0.8, 0.5, 0.9).unwrap();
        let file = ScenarioFile {
            scenario: inst.scenario,
            production: Some(inst.rule),
            policy: Some(PolicySpec::ScoreAugmented {
                weight: 0.5,
                scores_file: "scores.csv".into(),
                default_score: None,
            }),
        };
        let text = scenario_json(&file).unwrap();
        assert!(text.contains(r#""kind": "score_augmented""#));
        assert_eq!(parse_scenario(&text).unwrap(), file);
    }

    #[test]
    fn malformed_scenario_reports_position() {
        let err = parse_scenario("{\n  \"viewers\": [\n    oops\n  ]\n}").unwrap_err();
        match err {
            Error::Json(e) => assert_eq!(e.line(), 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn invalid_scenario_lists_issues() {
        let inst = make_two_period_scenario(0.8, 0.5, 0.9).unwrap();
        let mut v = serde_json::to_value(&inst.scenario).unwrap();
        v["viewers"][0]["slots_per_period"] = 0.into();
        assert!(matches!(parse_scenario(&v.to_string()), Err(Error::Validation(_))));
    }

    #[test]
    fn scores_csv() {
        let s = read_scores_csv("producer_id,score\n1,0.2\n2,0.8\n".as_bytes()).unwrap();
        assert_eq!(s[&ProducerId(2)], 0.8);
        let mut buf = Vec::new();
        write_scores_csv(&s, &mut buf).unwrap();
        assert_eq!(read_scores_csv(&buf[..]).unwrap(), s);
        assert!(read_scores_csv("producer_id,score\n1,0.2\n1,0.3\n".as_bytes()).is_err());
        assert!(read_scores_csv("producer_id,score\n1,NaN\n".as_bytes()).is_err());
        assert!(read_scores_csv("producer_id,score\nx,1\n".as_bytes()).is_err());
    }

    #[test]
    fn experiment_csv_round_trip() {
        let text = "producer_id,treated,outcome,f_0,f_1,split\n1,1,3.5,0.1,0.2,train\n2,0,1,0.3,0.4,evaluation\n3,true,2,0,0,\n";
        let d = read_experiment_csv(text.as_bytes()).unwrap();
        assert_eq!(d.feature_names(), ["f_0", "f_1"]);
        assert_eq!(d.evaluation_rows().count(), 1);
        assert!(d.rows()[2].treated);
        let mut buf = Vec::new();
        write_experiment_csv(&d, &mut buf).unwrap();
        assert_eq!(read_experiment_csv(&buf[..]).unwrap(), d);
    }

    #[test]
    fn experiment_csv_without_split_column() {
        let d = read_experiment_csv("producer_id,treated,outcome,a\n1,0,1,2\n".as_bytes()).unwrap();
        assert_eq!(d.train_rows().count(), 1);
        assert!(read_experiment_csv("producer_id,outcome,a\n1,1,2\n".as_bytes()).is_err());
        assert!(read_experiment_csv("producer_id,treated,outcome,a\n1,maybe,1,2\n".as_bytes()).is_err());
        assert!(read_experiment_csv("producer_id,treated,outcome\n1,1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn population_features_read_back_from_export() {
        let inst = make_two_period_scenario(0.8, 0.5, 0.9).unwrap();
        let text = population_json(&inst.scenario).unwrap();
        let feats = population_features(&text).unwrap();
        assert_eq!(feats.len(), inst.scenario.producers.len());
        for p in &inst.scenario.producers {
            assert_eq!(feats[&p.id], p.features);
        }
        assert!(population_features(r#"{"producers":[{"id":1,"features":[1.0]},{"id":2,"features":[]}]}"#).is_err());
    }

    #[test]
    fn population_export_marks_ground_truth() {
        let inst = make_two_period_scenario(0.8, 0.5, 0.9).unwrap();
        let text = population_json(&inst.scenario).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["producers"][1]["_ground_truth"]["responsiveness"], 1.0);
        assert!(v["producers"][1].get("responsiveness").is_none());
    }

    #[test]
    fn assignment_csv_round_trip() {
        let ids: Vec<ProducerId> = (0..20).map(ProducerId).collect();
        let f = Fractions { treat: 0.25, control: 0.25, eval_treat: 0.1, eval_control: 0.1, holdout: 0.1 };
        let a = crate::harness::assign(&ids, &f, 3).unwrap();
        let mut buf = Vec::new();
        write_assignment_csv(&a, &mut buf).unwrap();
        let back = read_assignment_csv(&buf[..]).unwrap();
        assert_eq!(back.labels, a.labels);
        assert!((back.fractions.holdout - 0.1).abs() < 1e-12);
    }
}
