//! Response-quality metrics and usable information density (UID).
//!
//! UID weighs a metric against what it costs to get it:
//! `uid = M_H^a / L_H`, where `M_H` is the mean metric value over a test
//! set, `L_H` the mean prompt-plus-completion length in tokens, and `a`
//! how much the metric matters relative to length.

mod meteor;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::scorer::{ScorePair, ScorerClient};
use crate::client::ClientError;

pub use meteor::{align, meteor, meteor_tokens, MeteorStats, METEOR_VERSION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("L_H must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("exponent a must be positive, got {0}")]
    NonPositiveExponent(f64),
    #[error("no records to aggregate")]
    EmptySet,
    #[error("record {0} has no {1} score")]
    MissingScore(String, MetricId),
    #[error("unknown metric {0}")]
    UnknownMetric(String),
    #[error("scorer service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("provider error: {0}")]
    Provider(ClientError),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Meteor,
    Bleurt,
    Deb,
    Custom(String),
}

impl MetricId {
    pub fn name(&self) -> &str {
        match self {
            MetricId::Meteor => "METEOR",
            MetricId::Bleurt => "BLEURT",
            MetricId::Deb => "DEB",
            MetricId::Custom(s) => s,
        }
    }

    /// Id used on the scorer service wire, e.g. `bleurt`.
    pub fn service_id(&self) -> String {
        self.name().to_ascii_lowercase()
    }

    pub fn is_local(&self) -> bool {
        *self == MetricId::Meteor
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "" => Err(MetricsError::UnknownMetric(s.into())),
            "METEOR" => Ok(MetricId::Meteor),
            "BLEURT" => Ok(MetricId::Bleurt),
            "DEB" => Ok(MetricId::Deb),
            _ => Ok(MetricId::Custom(s.trim().to_string())),
        }
    }
}

impl Serialize for MetricId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for MetricId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub metric_id: MetricId,
    pub value: f64,
    pub pair_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UidValue {
    pub metric_id: MetricId,
    pub a: f64,
    pub m_h: f64,
    pub l_h: f64,
    pub value: f64,
}

impl UidValue {
    pub fn new(metric_id: MetricId, m_h: f64, l_h: f64, a: f64) -> Result<Self, MetricsError> {
        Ok(UidValue {
            value: uid(m_h, l_h, a)?,
            metric_id,
            a,
            m_h,
            l_h,
        })
    }
}

pub fn uid(m_h: f64, l_h: f64, a: f64) -> Result<f64, MetricsError> {
    if l_h.is_nan() || l_h <= 0.0 {
        return Err(MetricsError::NonPositiveLength(l_h));
    }
    if a.is_nan() || a <= 0.0 {
        return Err(MetricsError::NonPositiveExponent(a));
    }
    Ok(m_h.powf(a) / l_h)
}

/// What [`aggregate`] needs from an evaluation record.
pub trait MetricRecord {
    fn record_id(&self) -> String;
    fn metric_value(&self, metric: &MetricId) -> Option<f64>;
    /// Prompt plus completion tokens.
    fn combined_tokens(&self) -> usize;
}

/// `(M_H, L_H)`: mean metric value and mean combined length.
pub fn aggregate<R: MetricRecord>(records: &[R], metric: &MetricId) -> Result<(f64, f64), MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut m = 0.0;
    let mut l = 0.0;
    for r in records {
        m += r
            .metric_value(metric)
            .ok_or_else(|| MetricsError::MissingScore(r.record_id(), metric.clone()))?;
        l += r.combined_tokens() as f64;
    }
    let n = records.len() as f64;
    Ok((m / n, l / n))
}

/// One configuration's averages, as fed to [`rank_dynamics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigPoint {
    pub config_id: String,
    pub m_h: f64,
    pub l_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub a_values: Vec<f64>,
    pub config_ids: Vec<String>,
    /// `ranks[i][j]`: 1-based rank of config `j` at `a_values[i]`.
    pub ranks: Vec<Vec<usize>>,
}

impl RankTable {
    /// Long-form CSV: `a,config_id,rank,uid`.
    pub fn write_csv<W: Write>(&self, w: W, points: &[ConfigPoint]) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| MetricsError::Io(e.to_string());
        out.write_record(["a", "config_id", "rank", "uid"]).map_err(io)?;
        for (i, a) in self.a_values.iter().enumerate() {
            for (j, p) in points.iter().enumerate() {
                let u = uid(p.m_h, p.l_h, *a)?;
                out.write_record([a.to_string(), p.config_id.clone(), self.ranks[i][j].to_string(), u.to_string()])
                    .map_err(io)?;
            }
        }
        out.flush().map_err(|e| MetricsError::Io(e.to_string()))
    }
}

/// For each `a`, configurations ranked by UID descending; equal UIDs are
/// ordered by configuration id.
pub fn rank_dynamics(points: &[ConfigPoint], a_values: &[f64]) -> Result<RankTable, MetricsError> {
    let mut ranks = Vec::with_capacity(a_values.len());
    for &a in a_values {
        let uids = points
            .iter()
            .map(|p| uid(p.m_h, p.l_h, a))
            .collect::<Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&x, &y| {
            uids[y]
                .total_cmp(&uids[x])
                .then_with(|| points[x].config_id.cmp(&points[y].config_id))
        });
        let mut row = vec![0; points.len()];
        for (rank, &j) in order.iter().enumerate() {
            row[j] = rank + 1;
        }
        ranks.push(row);
    }
    Ok(RankTable {
        a_values: a_values.to_vec(),
        config_ids: points.iter().map(|p| p.config_id.clone()).collect(),
        ranks,
    })
}

/// The exponent at which two configurations have equal UID,
/// `ln(L_A/L_B) / ln(M_A/M_B)`, when one exists for a > 0.
pub fn crossover_exponent(a: &ConfigPoint, b: &ConfigPoint) -> Option<f64> {
    let x = (a.l_h / b.l_h).ln() / (a.m_h / b.m_h).ln();
    (x.is_finite() && x > 0.0).then_some(x)
}

/// One row of a UID table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UidRow {
    pub history_signal: String,
    pub prompt_type: String,
    pub shot: String,
    pub metric: MetricId,
    pub a: f64,
    #[serde(rename = "M_H")]
    pub m_h: f64,
    #[serde(rename = "L_H")]
    pub l_h: f64,
    pub uid: f64,
}

pub fn write_uid_table<W: Write>(w: W, rows: &[UidRow]) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| MetricsError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| MetricsError::Io(e.to_string()))
}

/// A (context, candidate, reference) triple with the id of the record it
/// belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub pair_ref: String,
    pub pair: ScorePair,
}

/// Largest batch sent in one `/score` request.
pub const SCORE_BATCH: usize = 64;

fn map_score_error(metric: &MetricId, e: ClientError) -> MetricsError {
    match e.http_status() {
        Some(404) => MetricsError::UnknownMetric(metric.to_string()),
        Some(503) => MetricsError::ServiceUnavailable(e.to_string()),
        _ => match e {
            ClientError::Io(_) | ClientError::Timeout { .. } => MetricsError::ServiceUnavailable(e.to_string()),
            other => MetricsError::Provider(other),
        },
    }
}

/// Scores pairs on the scorer service in batches of [`SCORE_BATCH`],
/// keeping input order. No request is made for an empty list.
pub fn remote_score(
    metric: &MetricId,
    pairs: &[PairInput],
    client: &ScorerClient,
) -> Result<Vec<MetricScore>, MetricsError> {
    if metric.is_local() {
        return Err(MetricsError::UnknownMetric(format!("{metric} is computed locally")));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(SCORE_BATCH) {
        let batch: Vec<ScorePair> = chunk.iter().map(|p| p.pair.clone()).collect();
        let scores = client
            .score(&metric.service_id(), &batch)
            .map_err(|e| map_score_error(metric, e))?;
        out.extend(chunk.iter().zip(scores).map(|(p, value)| MetricScore {
            metric_id: metric.clone(),
            value,
            pair_ref: p.pair_ref.clone(),
        }));
    }
    Ok(out)
}

/// METEOR for each pair, locally.
pub fn local_score(pairs: &[PairInput]) -> Vec<MetricScore> {
    pairs
        .iter()
        .map(|p| MetricScore {
            metric_id: MetricId::Meteor,
            value: meteor(&p.pair.candidate, &p.pair.reference),
            pair_ref: p.pair_ref.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Rec(f64, usize, usize);

    impl MetricRecord for Rec {
        fn record_id(&self) -> String {
            "r".into()
        }
        fn metric_value(&self, _: &MetricId) -> Option<f64> {
            Some(self.0)
        }
        fn combined_tokens(&self) -> usize {
            self.1 + self.2
        }
    }

    #[test]
    fn uid_basics() {
        assert_eq!(uid(1.0, 1.0, 3.7).unwrap(), 1.0);
        assert!((uid(0.4, 200.0, 1.0).unwrap() - 0.002).abs() < 1e-15);
        assert_eq!(uid(0.4, 0.0, 1.0), Err(MetricsError::NonPositiveLength(0.0)));
        assert!(uid(0.4, 10.0, 0.0).is_err());
        let lhs = uid(0.5, 10.0, 0.5).unwrap() * uid(0.5, 10.0, 1.5).unwrap();
        assert!((lhs - uid(0.5, 10.0, 1.0).unwrap().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_means() {
        let m = MetricId::Meteor;
        assert_eq!(aggregate(&[Rec(0.3, 100, 20)], &m).unwrap(), (0.3, 120.0));
        let (mh, lh) = aggregate(&[Rec(0.2, 80, 20), Rec(0.4, 250, 50)], &m).unwrap();
        assert!((mh - 0.3).abs() < 1e-15);
        assert_eq!(lh, 200.0);
        assert_eq!(aggregate::<Rec>(&[], &m), Err(MetricsError::EmptySet));
    }

    #[test]
    fn dominance_and_crossover() {
        let a = ConfigPoint { config_id: "A".into(), m_h: 0.9, l_h: 1000.0 };
        let b = ConfigPoint { config_id: "B".into(), m_h: 0.3, l_h: 100.0 };
        // A's UID over B's is 3^a / 10: B leads below ln 10 / ln 3, A above.
        let x = crossover_exponent(&a, &b).unwrap();
        assert!((x - 10f64.ln() / 3f64.ln()).abs() < 1e-12);
        let t = rank_dynamics(&[a.clone(), b.clone()], &[0.5, 1.0, 2.0, 2.1, 5.0, 10.0]).unwrap();
        assert_eq!(t.ranks, vec![vec![2, 1], vec![2, 1], vec![2, 1], vec![1, 2], vec![1, 2], vec![1, 2]]);
        let dominant = ConfigPoint { config_id: "E".into(), m_h: 0.95, l_h: 90.0 };
        let t = rank_dynamics(&[b.clone(), dominant.clone()], &[0.5, 1.0, 5.0, 50.0]).unwrap();
        assert!(t.ranks.iter().all(|r| r == &vec![2, 1]));
        assert_eq!(crossover_exponent(&b, &dominant), None);
        let c = ConfigPoint { config_id: "C".into(), m_h: 0.8, l_h: 100.0 };
        let d = ConfigPoint { config_id: "D".into(), m_h: 0.4, l_h: 50.0 };
        let x = crossover_exponent(&c, &d).unwrap();
        assert!((x - 1.0).abs() < 1e-12);
        let t = rank_dynamics(&[c, d], &[0.5, 2.0]).unwrap();
        assert_eq!(t.ranks, vec![vec![2, 1], vec![1, 2]]);
    }

    #[test]
    fn ties_break_on_id() {
        let p = |id: &str| ConfigPoint { config_id: id.into(), m_h: 0.5, l_h: 10.0 };
        let t = rank_dynamics(&[p("b"), p("a")], &[1.0]).unwrap();
        assert_eq!(t.ranks, vec![vec![2, 1]]);
    }

    #[test]
    fn metric_ids() {
        assert_eq!("bleurt".parse::<MetricId>().unwrap(), MetricId::Bleurt);
        assert_eq!("DEB".parse::<MetricId>().unwrap().service_id(), "deb");
        assert_eq!(serde_json::to_string(&MetricId::Meteor).unwrap(), "\"METEOR\"");
    }

    #[test]
    fn remote_score_stub_and_empty() {
        let client = ScorerClient::offline();
        assert!(remote_score(&MetricId::Bleurt, &[], &client).unwrap().is_empty());
        let pairs: Vec<PairInput> = (0..130)
            .map(|i| PairInput {
                pair_ref: format!("p{i}"),
                pair: ScorePair { context: "ctx".into(), candidate: "hi".into(), reference: "hello".into() },
            })
            .collect();
        let scores = remote_score(&MetricId::Deb, &pairs, &client).unwrap();
        assert_eq!(scores.len(), 130);
        assert!(scores.iter().all(|s| s.value == 0.5));
        assert_eq!(scores[129].pair_ref, "p129");
        let err = remote_score(&MetricId::Custom("bertscore".into()), &pairs[..1], &client);
        assert_eq!(err, Err(MetricsError::UnknownMetric("bertscore".into())));
    }

    #[test]
    fn uid_table_header() {
        let mut buf = Vec::new();
        write_uid_table(
            &mut buf,
            &[UidRow {
                history_signal: "Recent-2".into(),
                prompt_type: "manual".into(),
                shot: "ZS".into(),
                metric: MetricId::Meteor,
                a: 1.0,
                m_h: 0.2,
                l_h: 100.0,
                uid: 0.002,
            }],
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("history_signal,prompt_type,shot,metric,a,M_H,L_H,uid\nRecent-2,manual,ZS,METEOR,"));
    }

    proptest! {
        #[test]
        fn uid_monotone(m in 0.01f64..1.0, l in 1.0f64..1000.0, a in 0.1f64..5.0, dm in 0.001f64..0.5, dl in 0.5f64..100.0) {
            prop_assert!(uid(m, l + dl, a).unwrap() < uid(m, l, a).unwrap());
            prop_assert!(uid(m + dm, l, a).unwrap() > uid(m, l, a).unwrap());
        }

        #[test]
        fn geometric_midpoint(m in 0.01f64..1.0, l in 1.0f64..1000.0, a1 in 0.1f64..5.0, a3 in 0.1f64..5.0) {
            let lhs = uid(m, l, a1).unwrap() * uid(m, l, a3).unwrap();
            let rhs = uid(m, l, (a1 + a3) / 2.0).unwrap().powi(2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn aggregate_permutation_invariant(v in proptest::collection::vec((0.0f64..1.0, 1usize..500, 0usize..50), 1..30)) {
            let recs: Vec<Rec> = v.iter().map(|(m, p, c)| Rec(*m, *p, *c)).collect();
            let mut rev: Vec<Rec> = v.iter().rev().map(|(m, p, c)| Rec(*m, *p, *c)).collect();
            rev.rotate_left(v.len() / 2);
            let (m1, l1) = aggregate(&recs, &MetricId::Meteor).unwrap();
            let (m2, l2) = aggregate(&rev, &MetricId::Meteor).unwrap();
            prop_assert!((m1 - m2).abs() < 1e-12);
            prop_assert!((l1 - l2).abs() < 1e-9);
        }
    }
}
