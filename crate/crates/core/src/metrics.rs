//! Three-class confusion scoring, predictive accuracy and replication
//! aggregates.
//!
//! Each scored effect lands in exactly one cell:
//!
//! | prediction | truth      | cell |
//! |------------|------------|------|
//! | `p != 0`   | `p`        | TP   |
//! | `p != 0`   | `0`        | FP   |
//! | `p != 0`   | `-p`       | FP   |
//! | `0`        | `!= 0`     | FN   |
//! | `0`        | `0`        | TN   |

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::effects::{effect_slots, Classification, EffectEstimate, EffectKind};
use crate::sim::CoefficientSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Main,
    Interaction,
    All,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 3] = [ScoreKind::Main, ScoreKind::Interaction, ScoreKind::All];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Main => "main",
            ScoreKind::Interaction => "interaction",
            ScoreKind::All => "all",
        }
    }

    fn includes(self, kind: EffectKind) -> bool {
        match self {
            ScoreKind::Main => kind == EffectKind::Main,
            ScoreKind::Interaction => kind == EffectKind::Interaction,
            ScoreKind::All => true,
        }
    }
}

/// Rates are `None` when their denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub effect_kind: ScoreKind,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub sign_accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionSummary {
    /// Tallies `(predicted, truth)` pairs.
    pub fn from_pairs<I>(effect_kind: ScoreKind, pairs: I) -> Self
    where
        I: IntoIterator<Item = (Classification, Classification)>,
    {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        let mut hits = 0;
        for (pred, truth) in pairs {
            match (pred.is_null(), truth.is_null()) {
                (false, false) if pred == truth => tp += 1,
                (false, _) => fp += 1,
                (true, false) => fn_ += 1,
                (true, true) => tn += 1,
            }
            hits += usize::from(pred == truth);
        }
        ConfusionSummary {
            effect_kind,
            tp,
            fp,
            fn_,
            tn,
            fpr: ratio(fp, fp + tn),
            fnr: ratio(fn_, fn_ + tp),
            sign_accuracy: ratio(hits, tp + fp + fn_ + tn),
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `(name, value)` for each rate, in a fixed order.
    pub fn rates(&self) -> [(&'static str, Option<f64>); 3] {
        [
            ("fpr", self.fpr),
            ("fnr", self.fnr),
            ("sign_accuracy", self.sign_accuracy),
        ]
    }
}

/// Summaries for main effects, interactions and both, against the
/// generating coefficients. Baseline slots are not scored.
pub fn score_classifications(estimates: &[EffectEstimate], truth: &CoefficientSet) -> Result<Vec<ConfusionSummary>> {
    let expected: HashSet<_> = effect_slots(&truth.attribute_levels, truth.context_levels)
        .into_iter()
        .collect();
    let mut seen = HashSet::new();
    for e in estimates {
        let slot = e.slot();
        if !expected.contains(&slot) {
            return Err(Error::CoverageMismatch(format!("unexpected effect {slot:?}")));
        }
        if !seen.insert(slot) {
            return Err(Error::CoverageMismatch(format!("duplicate effect {slot:?}")));
        }
    }
    if seen.len() != expected.len() {
        return Err(Error::CoverageMismatch(format!(
            "{} of {} effects estimated",
            seen.len(),
            expected.len()
        )));
    }
    Ok(ScoreKind::ALL
        .iter()
        .map(|&k| {
            ConfusionSummary::from_pairs(
                k,
                estimates
                    .iter()
                    .filter(|e| k.includes(e.kind))
                    .map(|e| (e.classification, Classification::of_value(e.slot().truth(truth)))),
            )
        })
        .collect())
}

pub fn predictive_accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// `mean +/- 1.96 sd / sqrt(n)`, `sd` being the population standard
/// deviation (divisor `n`); a single value gives a zero-width interval.
/// `None` for no values.
pub fn aggregate_values(values: &[f64]) -> Option<Aggregate> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let half = 1.96 * (var / n as f64).sqrt();
    Some(Aggregate {
        mean,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub effect_kind: ScoreKind,
    pub metric: String,
    pub aggregate: Aggregate,
}

/// Per kind and rate: aggregate over the replications where the rate is
/// defined. Rates undefined in every replication are omitted.
pub fn aggregate_replications(per_rep: &[ConfusionSummary]) -> Result<Vec<MetricAggregate>> {
    let mut kinds: Vec<ScoreKind> = per_rep.iter().map(|s| s.effect_kind).collect();
    kinds.sort();
    kinds.dedup();
    let min_reps = kinds
        .iter()
        .map(|k| per_rep.iter().filter(|s| s.effect_kind == *k).count())
        .min()
        .unwrap_or(0);
    if min_reps < 2 {
        return Err(Error::InsufficientReplications(min_reps));
    }
    let mut out = Vec::new();
    for k in kinds {
        let reps: Vec<&ConfusionSummary> = per_rep.iter().filter(|s| s.effect_kind == k).collect();
        for (i, (name, _)) in reps[0].rates().iter().enumerate() {
            let values: Vec<f64> = reps.iter().filter_map(|s| s.rates()[i].1).collect();
            if let Some(aggregate) = aggregate_values(&values) {
                out.push(MetricAggregate {
                    effect_kind: k,
                    metric: (*name).to_string(),
                    aggregate,
                });
            }
        }
    }
    Ok(out)
}

/// One line of the per-configuration metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    #[serde(rename = "Sp_j")]
    pub sp_j: f64,
    #[serde(rename = "Sp_z")]
    pub sp_z: f64,
    pub effect_kind: String,
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::{attach_truth, EffectSlot};
    use proptest::prelude::*;
    use Classification::{Negative as Neg, Null, Positive as Pos};

    #[test]
    fn worked_example() {
        let s = ConfusionSummary::from_pairs(ScoreKind::All, [(Pos, Pos), (Null, Pos), (Neg, Null)]);
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (1, 1, 1, 0));
        assert_eq!(s.fpr, Some(1.0));
        assert_eq!(s.fnr, Some(0.5));
    }

    #[test]
    fn perfect_prediction() {
        let s = ConfusionSummary::from_pairs(ScoreKind::All, [(Pos, Pos), (Null, Null), (Neg, Neg)]);
        assert_eq!((s.fpr, s.fnr, s.sign_accuracy), (Some(0.0), Some(0.0), Some(1.0)));
        let no_nulls = ConfusionSummary::from_pairs(ScoreKind::All, [(Pos, Pos)]);
        assert_eq!(no_nulls.fpr, None);
    }

    #[test]
    fn wrong_sign_is_a_false_positive() {
        let s = ConfusionSummary::from_pairs(ScoreKind::All, [(Neg, Pos), (Pos, Pos)]);
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (1, 1, 0, 0));
    }

    fn class() -> impl Strategy<Value = Classification> {
        prop_oneof![Just(Pos), Just(Neg), Just(Null)]
    }

    proptest! {
        #[test]
        fn cells_partition_and_identity(pairs in prop::collection::vec((class(), class()), 1..80)) {
            let s = ConfusionSummary::from_pairs(ScoreKind::All, pairs.clone());
            prop_assert_eq!(s.total(), pairs.len());
            let acc = s.sign_accuracy.unwrap();
            prop_assert!((acc - (s.tp + s.tn) as f64 / pairs.len() as f64).abs() < 1e-15);
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert_eq!(ConfusionSummary::from_pairs(ScoreKind::All, rev), s);
        }
    }

    #[test]
    fn scoring_by_kind_and_coverage() {
        let mut truth = CoefficientSet::zeros(&[3, 2], 2);
        truth.set_main(0, 1, 0.5);
        truth.set_interaction(1, 1, 1, -0.3);
        let slots = effect_slots(&[3, 2], 2);
        let mut est: Vec<EffectEstimate> = slots
            .iter()
            .map(|&s| EffectEstimate::from_interval(s, 0.0, -1.0, 1.0))
            .collect();
        est[0] = EffectEstimate::from_interval(EffectSlot::main(0, 1), 0.4, 0.1, 0.7);
        attach_truth(&mut est, &truth);
        let scores = score_classifications(&est, &truth).unwrap();
        let main = &scores[0];
        assert_eq!((main.tp, main.fp, main.fn_, main.tn), (1, 0, 0, 2));
        let inter = &scores[1];
        assert_eq!((inter.tp, inter.fp, inter.fn_, inter.tn), (0, 0, 1, 2));
        assert_eq!(scores[2].total(), slots.len());
        let mut shuffled = est.clone();
        shuffled.rotate_left(2);
        assert_eq!(score_classifications(&shuffled, &truth).unwrap(), scores);

        assert!(matches!(score_classifications(&est[1..], &truth), Err(Error::CoverageMismatch(_))));
        let mut dup = est.clone();
        dup[1] = dup[0].clone();
        assert!(matches!(score_classifications(&dup, &truth), Err(Error::CoverageMismatch(_))));
        let mut base = est.clone();
        base[0].level = 0;
        assert!(matches!(score_classifications(&base, &truth), Err(Error::CoverageMismatch(_))));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(predictive_accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(predictive_accuracy(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(
            predictive_accuracy(&[true, true, false, false], &[true, true, false, true]).unwrap(),
            0.75
        );
        assert!(matches!(predictive_accuracy(&[true], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(predictive_accuracy(&[], &[]), Err(Error::Empty)));
    }

    fn with_fpr(fpr: Option<f64>) -> ConfusionSummary {
        ConfusionSummary {
            effect_kind: ScoreKind::Interaction,
            tp: 1,
            fp: 1,
            fn_: 1,
            tn: 1,
            fpr,
            fnr: Some(0.5),
            sign_accuracy: Some(0.5),
        }
    }

    #[test]
    fn aggregation_examples() {
        let agg = aggregate_replications(&[with_fpr(Some(0.3)), with_fpr(Some(0.3))]).unwrap();
        assert!(agg.iter().all(|a| a.aggregate.ci_low == a.aggregate.ci_high));

        let agg = aggregate_replications(&[with_fpr(Some(0.1)), with_fpr(Some(0.2))]).unwrap();
        let fpr = agg.iter().find(|a| a.metric == "fpr").unwrap().aggregate;
        assert!((fpr.mean - 0.15).abs() < 1e-15);
        let half = 1.96 * 0.05 / 2f64.sqrt();
        assert!((half - 0.0693).abs() < 1e-4);
        assert!((fpr.ci_high - fpr.mean - half).abs() < 1e-12);

        let agg = aggregate_replications(&[with_fpr(Some(0.1)), with_fpr(None), with_fpr(Some(0.2))]).unwrap();
        let fpr = agg.iter().find(|a| a.metric == "fpr").unwrap().aggregate;
        assert_eq!(fpr.n, 2);
        assert_eq!(agg.iter().find(|a| a.metric == "fnr").unwrap().aggregate.n, 3);

        assert!(matches!(
            aggregate_replications(&[with_fpr(Some(0.1))]),
            Err(Error::InsufficientReplications(1))
        ));
    }

    #[test]
    fn metrics_csv_header() {
        let rows = vec![MetricRow {
            method: "lm".into(),
            sp_j: 0.5,
            sp_z: 0.75,
            effect_kind: "main".into(),
            metric: "fpr".into(),
            mean: 0.1,
            ci_low: 0.05,
            ci_high: 0.15,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("method,Sp_j,Sp_z,effect_kind,metric,mean,ci_low,ci_high\n"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }
}
