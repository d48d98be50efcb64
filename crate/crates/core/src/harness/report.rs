use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{rank_dynamics, uid, ConfigPoint, MetricId, RankTable, UidRow};

use super::store::{load_records, EvalRecord};
use super::HarnessError;

/// Report grouping: endpoint, history signal, prompt type, shot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub endpoint: String,
    pub history_signal: String,
    pub prompt_type: String,
    pub shot: String,
}

impl GroupKey {
    pub fn of(r: &EvalRecord) -> Self {
        GroupKey {
            endpoint: r.endpoint.clone(),
            history_signal: r.history_signal.clone(),
            prompt_type: r.template_type.label().to_string(),
            shot: r.shot.label().to_string(),
        }
    }

    /// Identifier within one endpoint, e.g. `Recent-2|manual|ZS`.
    pub fn config_label(&self) -> String {
        format!("{}|{}|{}", self.history_signal, self.prompt_type, self.shot)
    }
}

/// Live records grouped by key, each group in record-id order, plus the
/// number of tombstones per group.
fn groups(records: &[EvalRecord]) -> BTreeMap<GroupKey, (Vec<&EvalRecord>, usize)> {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut out: BTreeMap<GroupKey, (Vec<&EvalRecord>, usize)> = BTreeMap::new();
    for r in sorted {
        let e = out.entry(GroupKey::of(r)).or_default();
        if r.is_tombstone() {
            e.1 += 1;
        } else {
            e.0.push(r);
        }
    }
    out
}

fn mean_usize(xs: impl Iterator<Item = usize>) -> f64 {
    let (s, n) = xs.fold((0u64, 0u64), |(s, n), x| (s + x as u64, n + 1));
    s as f64 / n as f64
}

fn mean_f64(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0u64), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub endpoint: String,
    pub history_signal: String,
    pub prompt_type: String,
    pub shot: String,
    pub n: usize,
    pub excluded: usize,
    pub mean_prompt_tokens: f64,
    pub mean_completion_tokens: f64,
    pub mean_total_tokens: f64,
}

/// Mean input and output length per group. Tombstones are excluded and
/// counted.
pub fn length_report(records: &[EvalRecord]) -> Result<Vec<LengthRow>, HarnessError> {
    let mut rows = Vec::new();
    for (k, (live, excluded)) in groups(records) {
        if live.is_empty() {
            continue;
        }
        rows.push(LengthRow {
            n: live.len(),
            excluded,
            mean_prompt_tokens: mean_usize(live.iter().map(|r| r.prompt_tokens)),
            mean_completion_tokens: mean_usize(live.iter().map(|r| r.completion_tokens)),
            mean_total_tokens: mean_usize(live.iter().map(|r| r.prompt_tokens + r.completion_tokens)),
            endpoint: k.endpoint,
            history_signal: k.history_signal,
            prompt_type: k.prompt_type,
            shot: k.shot,
        });
    }
    if rows.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UidReport {
    /// Rows per endpoint.
    pub tables: BTreeMap<String, Vec<UidRow>>,
    /// Rank dynamics per (endpoint, metric), with the points ranked.
    pub ranks: BTreeMap<(String, MetricId), (Vec<ConfigPoint>, RankTable)>,
    pub excluded: usize,
}

/// `M_H`, `L_H` and `uid(a)` per group and metric, plus rank dynamics of
/// the groups of each endpoint.
pub fn uid_report(records: &[EvalRecord], metrics: &[MetricId], a_values: &[f64]) -> Result<UidReport, HarnessError> {
    let mut tables: BTreeMap<String, Vec<UidRow>> = BTreeMap::new();
    let mut points: BTreeMap<(String, MetricId), Vec<ConfigPoint>> = BTreeMap::new();
    let mut excluded = 0;
    for (k, (live, ex)) in groups(records) {
        excluded += ex;
        if live.is_empty() {
            continue;
        }
        let l_h = mean_usize(live.iter().map(|r| r.prompt_tokens + r.completion_tokens));
        for m in metrics {
            if live.iter().any(|r| !r.scores.contains_key(m)) {
                return Err(HarnessError::MissingScores(m.clone()));
            }
            let m_h = mean_f64(live.iter().map(|r| r.scores[m]));
            for &a in a_values {
                tables.entry(k.endpoint.clone()).or_default().push(UidRow {
                    history_signal: k.history_signal.clone(),
                    prompt_type: k.prompt_type.clone(),
                    shot: k.shot.clone(),
                    metric: m.clone(),
                    a,
                    m_h,
                    l_h,
                    uid: uid(m_h, l_h, a)?,
                });
            }
            points.entry((k.endpoint.clone(), m.clone())).or_default().push(ConfigPoint {
                config_id: k.config_label(),
                m_h,
                l_h,
            });
        }
    }
    if tables.is_empty() {
        return Err(HarnessError::EmptySet);
    }
    let mut ranks = BTreeMap::new();
    for (key, pts) in points {
        let table = rank_dynamics(&pts, a_values)?;
        ranks.insert(key, (pts, table));
    }
    Ok(UidReport { tables, ranks, excluded })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow {
    pub endpoint: String,
    pub history_signal: String,
    pub prompt_type: String,
    pub shot: String,
    pub metric: MetricId,
    pub session_2: Option<f64>,
    pub session_3: Option<f64>,
    pub session_4: Option<f64>,
    /// Mean of the per-session means.
    pub macro_mean: f64,
    /// Mean over all records of the three sessions.
    pub micro_mean: f64,
}

/// Per-session metric means for records that carry an origin session
/// (MSC sessions 2-4), averaged both ways.
pub fn session_report(records: &[EvalRecord], metrics: &[MetricId]) -> Vec<SessionRow> {
    let mut rows = Vec::new();
    for (k, (live, _)) in groups(records) {
        let in_sessions: Vec<&EvalRecord> = live
            .into_iter()
            .filter(|r| matches!(r.origin_session, Some(2..=4)))
            .collect();
        if in_sessions.is_empty() {
            continue;
        }
        for m in metrics {
            let scored: Vec<&EvalRecord> = in_sessions.iter().copied().filter(|r| r.scores.contains_key(m)).collect();
            if scored.is_empty() {
                continue;
            }
            let per = |s: u32| {
                let v: Vec<f64> = scored.iter().filter(|r| r.origin_session == Some(s)).map(|r| r.scores[m]).collect();
                (!v.is_empty()).then(|| mean_f64(v.into_iter()))
            };
            let sessions = [per(2), per(3), per(4)];
            let present: Vec<f64> = sessions.iter().flatten().copied().collect();
            rows.push(SessionRow {
                endpoint: k.endpoint.clone(),
                history_signal: k.history_signal.clone(),
                prompt_type: k.prompt_type.clone(),
                shot: k.shot.clone(),
                metric: m.clone(),
                session_2: sessions[0],
                session_3: sessions[1],
                session_4: sessions[2],
                macro_mean: mean_f64(present.into_iter()),
                micro_mean: mean_f64(scored.iter().map(|r| r.scores[m])),
            });
        }
    }
    rows
}

fn csv_io(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

pub fn write_rows<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_io)?;
    }
    out.flush().map_err(csv_io)
}

/// Long-form rank dynamics: `metric,a,config_id,rank,uid`.
pub fn write_ranks<W: Write>(w: W, report: &UidReport, endpoint: &str) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "a", "config_id", "rank", "uid"]).map_err(csv_io)?;
    for ((ep, metric), (points, table)) in &report.ranks {
        if ep != endpoint {
            continue;
        }
        for (i, a) in table.a_values.iter().enumerate() {
            for (j, p) in points.iter().enumerate() {
                out.write_record([
                    metric.to_string(),
                    a.to_string(),
                    p.config_id.clone(),
                    table.ranks[i][j].to_string(),
                    uid(p.m_h, p.l_h, *a)?.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
    }
    out.flush().map_err(csv_io)
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub uid: bool,
    pub metrics: Vec<MetricId>,
    pub a_values: Vec<f64>,
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `lengths.csv` and, with `uid`, `uid_<endpoint>.csv`,
/// `ranks_<endpoint>.csv` and `sessions.csv` under `out_dir`. Output depends
/// only on the records, so replaying a store reproduces it byte for byte.
pub fn write_reports(store_dir: &Path, out_dir: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>, HarnessError> {
    let records = load_records(store_dir)?;
    std::fs::create_dir_all(out_dir).map_err(csv_io)?;
    let create = |name: String| -> Result<(PathBuf, std::fs::File), HarnessError> {
        let p = out_dir.join(name);
        let f = std::fs::File::create(&p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
        Ok((p, f))
    };
    let mut written = Vec::new();
    let lengths = length_report(&records)?;
    let (p, f) = create("lengths.csv".into())?;
    write_rows(f, &lengths)?;
    written.push(p);
    let excluded: usize = lengths.iter().map(|r| r.excluded).sum();
    if excluded > 0 {
        log::warn!("{excluded} failed records excluded from reports");
    }
    if opts.uid {
        let report = uid_report(&records, &opts.metrics, &opts.a_values)?;
        for (endpoint, rows) in &report.tables {
            let (p, f) = create(format!("uid_{}.csv", file_safe(endpoint)))?;
            write_rows(f, rows)?;
            written.push(p);
            let (p, f) = create(format!("ranks_{}.csv", file_safe(endpoint)))?;
            write_ranks(f, &report, endpoint)?;
            written.push(p);
        }
        let sessions = session_report(&records, &opts.metrics);
        if !sessions.is_empty() {
            let (p, f) = create("sessions.csv".into())?;
            write_rows(f, &sessions)?;
            written.push(p);
        }
    }
    Ok(written)
}
