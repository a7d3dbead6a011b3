//! Reaction and encoding-update times extracted from an event trace.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rate_control::Level;
use crate::rtcp::EstimatorStrategy;
use crate::scalar::Scalar;
use crate::sim::{observer, EventTrace, LinkId, NodeId, TopologyKind, TraceKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("no reactions: every shaping change was censored or induced no level change")]
    NoReactions,
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionRecord<S> {
    pub change_idx: usize,
    pub link: LinkId,
    /// Controller that has to react.
    pub node: NodeId,
    pub t_shaping_change_ms: S,
    /// Arrival of the first report emitted after the change.
    pub t_aware_ms: Option<S>,
    pub t_sender_decision_ms: Option<S>,
    pub reaction_ms: Option<S>,
    pub t_receiver_update_ms: Option<S>,
    pub update_ms: Option<S>,
    pub level_from: Level,
    pub level_to: Level,
    /// The next change came before any decision.
    pub censored: bool,
}

struct Change<S> {
    idx: usize,
    at: usize,
    time: S,
    link: LinkId,
    node: NodeId,
}

/// Detects one record per shaping change whose post-change reports imply a
/// level other than the one the observing controller holds.
///
/// Simultaneous changes observed by the same controller count as one.
pub fn detect_reactions<S: Scalar>(trace: &EventTrace<S>) -> Result<Vec<ReactionRecord<S>>, MetricsError> {
    let ev = &trace.events;
    let (topology, transcoding, initial) = match ev.first().map(|e| &e.kind) {
        Some(TraceKind::Start {
            topology,
            transcoding,
            initial_level,
            ..
        }) => (*topology, *transcoding, *initial_level),
        _ => {
            return Err(MetricsError::MalformedTrace(
                "trace does not begin with a start event".into(),
            ))
        }
    };
    let end_ms = ev.last().map(|e| e.time_ms).unwrap_or(S::zero());

    // A decision is always preceded by the controller input that caused it.
    for (i, e) in ev.iter().enumerate() {
        if let TraceKind::Decision { node, .. } = e.kind {
            let ok = i > 0
                && matches!(ev[i - 1].kind, TraceKind::Input { node: n, .. } if n == node)
                && ev[i - 1].time_ms == e.time_ms;
            if !ok {
                return Err(MetricsError::MalformedTrace(format!(
                    "decision by {} at {:.3} ms without a prior report",
                    node.as_str(),
                    e.time_ms.as_f64()
                )));
            }
        }
    }

    let mut changes: Vec<Change<S>> = Vec::new();
    let mut group = 0usize;
    let mut last_time: Option<S> = None;
    for (i, e) in ev.iter().enumerate() {
        let TraceKind::Shaping { link, .. } = e.kind else {
            continue;
        };
        if last_time.is_some_and(|t| t != e.time_ms) {
            group += 1;
        }
        last_time = Some(e.time_ms);
        let Some(node) = observer(topology, transcoding, link) else {
            continue;
        };
        if changes.iter().any(|c| c.idx == group && c.node == node) {
            continue;
        }
        changes.push(Change {
            idx: group,
            at: i,
            time: e.time_ms,
            link,
            node,
        });
    }

    let mut records = Vec::new();
    for c in &changes {
        let t_next = ev[c.at..]
            .iter()
            .find(|e| matches!(e.kind, TraceKind::Shaping { .. }) && e.time_ms > c.time)
            .map(|e| e.time_ms)
            .unwrap_or(end_ms);

        let mut level_from = initial;
        for e in &ev[..c.at] {
            if let TraceKind::Decision { node, to, .. } = e.kind {
                if node == c.node {
                    level_from = to;
                }
            }
        }

        let mut implied = None;
        let mut t_aware = None;
        let mut decision: Option<(usize, S, Level)> = None;
        for (j, e) in ev.iter().enumerate().skip(c.at + 1) {
            match e.kind {
                TraceKind::Input {
                    node,
                    emitted_at_ms,
                    class,
                    ..
                } if node == c.node && emitted_at_ms >= c.time => {
                    if t_aware.is_none() {
                        t_aware = Some(e.time_ms);
                    }
                    if emitted_at_ms < t_next {
                        implied = Some(class);
                    }
                }
                TraceKind::Decision { node, to, .. } if node == c.node && decision.is_none() => {
                    // Decisions driven by reports sent before the change do not count.
                    if let TraceKind::Input { emitted_at_ms, .. } = ev[j - 1].kind {
                        if emitted_at_ms >= c.time {
                            decision = Some((j, e.time_ms, to));
                        }
                    }
                }
                _ => {}
            }
        }
        let Some(target) = implied else {
            continue;
        };
        if target == level_from {
            continue;
        }

        let decided = decision.filter(|(_, t, _)| *t < t_next);
        let mut rec = ReactionRecord {
            change_idx: c.idx,
            link: c.link,
            node: c.node,
            t_shaping_change_ms: c.time,
            t_aware_ms: t_aware,
            t_sender_decision_ms: None,
            reaction_ms: None,
            t_receiver_update_ms: None,
            update_ms: None,
            level_from,
            level_to: target,
            censored: decided.is_none(),
        };
        if let Some((j, t_d, to)) = decided {
            rec.t_sender_decision_ms = Some(t_d);
            rec.reaction_ms = Some(t_d - c.time);
            rec.level_to = to;
            let update = ev[j..].iter().find(|e| {
                matches!(e.kind, TraceKind::FrameRecv {
                    node: NodeId::Receiver,
                    headers: true,
                    level,
                    sent_at_ms,
                    ..
                } if level == to && sent_at_ms >= t_d)
            });
            if let Some(u) = update {
                rec.t_receiver_update_ms = Some(u.time_ms);
                rec.update_ms = Some(u.time_ms - t_d);
            }
        }
        records.push(rec);
    }
    records.sort_by_key(|r| (r.change_idx, r.node));
    Ok(records)
}

/// Means and population standard deviations, in seconds rounded to 3 decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean_reaction_s: f64,
    pub stddev_reaction_s: f64,
    pub mean_update_s: Option<f64>,
    pub stddev_update_s: Option<f64>,
    pub mean_aware_s: Option<f64>,
    /// Uncensored records: changes that induced a level change.
    pub n_changes: usize,
    pub n_censored: usize,
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn summarize<S: Scalar>(records: &[ReactionRecord<S>]) -> Result<Summary, MetricsError> {
    let done: Vec<&ReactionRecord<S>> = records.iter().filter(|r| !r.censored).collect();
    let secs = |v: S| v.as_f64() / 1000.0;
    let reactions: Vec<f64> = done.iter().filter_map(|r| r.reaction_ms.map(secs)).collect();
    let (mr, sr) = mean_std(&reactions).ok_or(MetricsError::NoReactions)?;
    let updates: Vec<f64> = done.iter().filter_map(|r| r.update_ms.map(secs)).collect();
    let upd = mean_std(&updates);
    let aware: Vec<f64> = done
        .iter()
        .filter_map(|r| r.t_aware_ms.map(|t| secs(t - r.t_shaping_change_ms)))
        .collect();
    Ok(Summary {
        mean_reaction_s: round3(mr),
        stddev_reaction_s: round3(sr),
        mean_update_s: upd.map(|u| round3(u.0)),
        stddev_update_s: upd.map(|u| round3(u.1)),
        mean_aware_s: mean_std(&aware).map(|a| round3(a.0)),
        n_changes: done.len(),
        n_censored: records.len() - done.len(),
    })
}

/// Identifies the run a record set came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub scenario: String,
    pub topology: TopologyKind,
    pub estimator: EstimatorStrategy,
    pub report_period_ms: f64,
}

pub const CSV_HEADER: [&str; 13] = [
    "scenario",
    "topology",
    "estimator",
    "report_period_ms",
    "change_idx",
    "t_change_ms",
    "t_decision_ms",
    "reaction_ms",
    "t_received_ms",
    "update_ms",
    "level_from",
    "level_to",
    "censored",
];

fn ms<S: Scalar>(v: Option<S>) -> String {
    v.map(|v| format!("{:.3}", v.as_f64())).unwrap_or_default()
}

/// Writes the records as CSV, ordered by change index. Times use the trace's formatting.
pub fn write_csv_to<W: std::io::Write, S: Scalar>(
    records: &[ReactionRecord<S>],
    meta: &RunMeta,
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut sorted: Vec<&ReactionRecord<S>> = records.iter().collect();
    sorted.sort_by_key(|r| (r.change_idx, r.node));
    for r in sorted {
        w.write_record([
            meta.scenario.clone(),
            meta.topology.label().to_string(),
            meta.estimator.to_string(),
            meta.report_period_ms.to_string(),
            r.change_idx.to_string(),
            ms(Some(r.t_shaping_change_ms)),
            ms(r.t_sender_decision_ms),
            ms(r.reaction_ms),
            ms(r.t_receiver_update_ms),
            ms(r.update_ms),
            r.level_from.to_string(),
            r.level_to.to_string(),
            r.censored.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv<S: Scalar>(records: &[ReactionRecord<S>], meta: &RunMeta, path: &Path) -> Result<(), MetricsError> {
    let io = |source: csv::Error| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(|e| io(e.into()))?;
    write_csv_to(records, meta, file).map_err(io)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".to_string())
}

/// Aligned text table, one row per labelled summary.
pub fn summary_table(first_column: &str, rows: &[(String, Result<Summary, String>)]) -> String {
    let headers = [
        first_column,
        "mean reaction (s)",
        "std reaction (s)",
        "mean update (s)",
        "std update (s)",
        "changes",
        "censored",
    ];
    let mut cells: Vec<Vec<String>> = vec![headers.iter().map(|h| h.to_string()).collect()];
    for (label, s) in rows {
        let row = match s {
            Ok(s) => vec![
                label.clone(),
                format!("{:.3}", s.mean_reaction_s),
                format!("{:.3}", s.stddev_reaction_s),
                cell(s.mean_update_s),
                cell(s.stddev_update_s),
                s.n_changes.to_string(),
                s.n_censored.to_string(),
            ],
            Err(e) => {
                let mut r = vec![label.clone(), e.clone()];
                r.resize(headers.len(), String::new());
                r
            }
        };
        cells.push(row);
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| {
                if c == 0 {
                    format!("{v:<w$}", w = widths[c])
                } else {
                    format!("{v:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(reaction: f64, update: Option<f64>, censored: bool) -> ReactionRecord<f64> {
        ReactionRecord {
            change_idx: 0,
            link: LinkId::Uplink,
            node: NodeId::Sender,
            t_shaping_change_ms: 40_000.0,
            t_aware_ms: None,
            t_sender_decision_ms: (!censored).then_some(40_000.0 + reaction),
            reaction_ms: (!censored).then_some(reaction),
            t_receiver_update_ms: update.map(|u| 40_000.0 + reaction + u),
            update_ms: update,
            level_from: Level::Good,
            level_to: Level::Poor,
            censored,
        }
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[rec(3500.0, Some(700.0), false)]).unwrap();
        assert_eq!((s.mean_reaction_s, s.stddev_reaction_s), (3.5, 0.0));
        assert_eq!(s.mean_update_s, Some(0.7));
        let s = summarize(&[rec(2000.0, None, false), rec(4000.0, None, false), rec(0.0, None, true)]).unwrap();
        assert_eq!((s.mean_reaction_s, s.stddev_reaction_s), (3.0, 1.0));
        assert_eq!((s.n_changes, s.n_censored), (2, 1));
        assert_eq!(s.mean_update_s, None);
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(matches!(summarize::<f64>(&[]), Err(MetricsError::NoReactions)));
        assert!(matches!(
            summarize(&[rec(0.0, None, true)]),
            Err(MetricsError::NoReactions)
        ));
    }

    #[test]
    fn csv_layout() {
        let meta = RunMeta {
            scenario: "s".into(),
            topology: TopologyKind::Direct,
            estimator: EstimatorStrategy::Oracle,
            report_period_ms: 500.0,
        };
        let mut buf = Vec::new();
        write_csv_to::<_, f64>(&[], &meta, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
        let mut buf = Vec::new();
        write_csv_to(&[rec(3500.0, None, false), rec(0.0, None, true)], &meta, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(
            lines[1],
            "s,Direct,oracle,500,0,40000.000,43500.000,3500.000,,,Good,Poor,false"
        );
    }

    #[test]
    fn decision_without_report_is_rejected() {
        use crate::rate_control::EncodingLadder;
        let mut t = EventTrace::<f64>::default();
        t.push(
            0.0,
            TraceKind::Start {
                scenario: "x".into(),
                topology: TopologyKind::Direct,
                transcoding: false,
                estimator: EstimatorStrategy::Oracle,
                report_period_ms: 500.0,
                duration_ms: 1000.0,
                initial_level: Level::Good,
                seed: 0,
            },
        );
        t.push(
            10.0,
            TraceKind::Decision {
                node: NodeId::Sender,
                from: Level::Good,
                to: Level::Poor,
                settings: EncodingLadder::default().poor,
            },
        );
        assert!(matches!(detect_reactions(&t), Err(MetricsError::MalformedTrace(_))));
    }

    #[test]
    fn table_rows() {
        let s = summarize(&[rec(2500.0, Some(700.0), false)]).unwrap();
        let t = summary_table(
            "topology",
            &[
                ("Direct".into(), Ok(s)),
                ("ReportingRelay".into(), Err("no reactions".into())),
            ],
        );
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("Direct") && lines[2].contains("2.500") && lines[2].contains("0.700"));
        assert!(lines[3].contains("no reactions"));
    }
}
