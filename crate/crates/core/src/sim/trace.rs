//! Event trace of one run and its line-oriented text form.
//!
//! Each line is `time_ms<TAB>kind<TAB>key=value<TAB>...`. Times and other
//! real values print with three decimals, `-` stands for an absent value.
//!
//! | kind          | keys |
//! |---------------|------|
//! | `start`       | scenario, topology, transcoding, estimator, report_period_ms, duration_ms, initial_level, seed |
//! | `link`        | link, capacity_kbps, latency_ms (initial state, at time 0) |
//! | `shaping`     | link, capacity_kbps (`-` when uncapped), latency_ms |
//! | `sr`          | path, node |
//! | `report`      | path, node, seq, bw, jitter, loss (receiver report emitted) |
//! | `report_recv` | path, node, seq, emitted_at, bw, rtt, jitter |
//! | `dc_send`     | seq, emitted_at (relay wraps a downlink report) |
//! | `dc_recv`     | seq, emitted_at, forwarded_at, forwarding_ms |
//! | `input`       | node, path, emitted_at, bw, rtt, jitter, class (metrics fed to a controller) |
//! | `decision`    | node, from, to, bitrate_kbps, fps, width, height, gop |
//! | `frame_sent`  | node, seq, level, key, headers, size |
//! | `frame_recv`  | node, origin, seq, level, key, headers, size, sent_at, first_at, watermark_latency |
//! | `drop`        | link, dir, bytes |
//! | `end`         | sent, dropped, delivered (packet counts over both links) |

use std::fmt::Write as _;

use crate::rate_control::{EncodingLevel, Level};
use crate::rtcp::{EstimatorStrategy, PathId};
use crate::scalar::Scalar;

use super::topology::{LinkId, NodeId, TopologyKind};
use crate::netem::Direction;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceKind<S> {
    Start {
        scenario: String,
        topology: TopologyKind,
        transcoding: bool,
        estimator: EstimatorStrategy,
        report_period_ms: S,
        duration_ms: S,
        initial_level: Level,
        seed: u64,
    },
    /// Initial link state.
    Link {
        link: LinkId,
        capacity_kbps: Option<S>,
        latency_ms: S,
    },
    Shaping {
        link: LinkId,
        capacity_kbps: Option<S>,
        latency_ms: S,
    },
    SenderReport {
        path: PathId,
        node: NodeId,
    },
    Report {
        path: PathId,
        node: NodeId,
        seq: u64,
        bandwidth_kbps: S,
        jitter_ms: S,
        loss_fraction: S,
    },
    ReportRecv {
        path: PathId,
        node: NodeId,
        seq: u64,
        emitted_at_ms: S,
        bandwidth_kbps: S,
        rtt_ms: S,
        jitter_ms: S,
    },
    DataChannelSend {
        seq: u64,
        emitted_at_ms: S,
    },
    DataChannelRecv {
        seq: u64,
        emitted_at_ms: S,
        forwarded_at_ms: S,
    },
    Input {
        node: NodeId,
        path: PathId,
        emitted_at_ms: S,
        bandwidth_kbps: S,
        rtt_ms: S,
        jitter_ms: S,
        class: Level,
    },
    Decision {
        node: NodeId,
        from: Level,
        to: Level,
        settings: EncodingLevel,
    },
    FrameSent {
        node: NodeId,
        seq: u64,
        level: Level,
        key: bool,
        headers: bool,
        size_bytes: u32,
    },
    FrameRecv {
        node: NodeId,
        origin: NodeId,
        seq: u64,
        level: Level,
        key: bool,
        headers: bool,
        size_bytes: u32,
        sent_at_ms: S,
        first_at_ms: S,
        watermark_latency_ms: S,
    },
    Drop {
        link: LinkId,
        dir: Direction,
        bytes: u32,
    },
    End {
        sent: u64,
        dropped: u64,
        delivered: u64,
    },
}

impl<S> TraceKind<S> {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Start { .. } => "start",
            TraceKind::Link { .. } => "link",
            TraceKind::Shaping { .. } => "shaping",
            TraceKind::SenderReport { .. } => "sr",
            TraceKind::Report { .. } => "report",
            TraceKind::ReportRecv { .. } => "report_recv",
            TraceKind::DataChannelSend { .. } => "dc_send",
            TraceKind::DataChannelRecv { .. } => "dc_recv",
            TraceKind::Input { .. } => "input",
            TraceKind::Decision { .. } => "decision",
            TraceKind::FrameSent { .. } => "frame_sent",
            TraceKind::FrameRecv { .. } => "frame_recv",
            TraceKind::Drop { .. } => "drop",
            TraceKind::End { .. } => "end",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent<S> {
    pub time_ms: S,
    pub kind: TraceKind<S>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTrace<S> {
    pub events: Vec<TraceEvent<S>>,
}

fn num<S: Scalar>(v: S) -> String {
    format!("{:.3}", v.as_f64())
}

fn opt<S: Scalar>(v: Option<S>) -> String {
    v.map(num).unwrap_or_else(|| "-".to_string())
}

fn b(v: bool) -> u8 {
    v as u8
}

impl<S: Scalar> EventTrace<S> {
    pub fn push(&mut self, time_ms: S, kind: TraceKind<S>) {
        self.events.push(TraceEvent { time_ms, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent<S>> {
        self.events.iter()
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.kind.name() == name).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 96);
        for e in &self.events {
            write_event(&mut out, e);
            out.push('\n');
        }
        out
    }
}

fn write_event<S: Scalar>(out: &mut String, e: &TraceEvent<S>) {
    let _ = write!(out, "{}\t{}", num(e.time_ms), e.kind.name());
    let mut kv = |k: &str, v: &dyn std::fmt::Display| {
        let _ = write!(out, "\t{k}={v}");
    };
    match &e.kind {
        TraceKind::Start {
            scenario,
            topology,
            transcoding,
            estimator,
            report_period_ms,
            duration_ms,
            initial_level,
            seed,
        } => {
            kv("scenario", scenario);
            kv("topology", topology);
            kv("transcoding", &b(*transcoding));
            kv("estimator", estimator);
            kv("report_period_ms", &num(*report_period_ms));
            kv("duration_ms", &num(*duration_ms));
            kv("initial_level", initial_level);
            kv("seed", seed);
        }
        TraceKind::Link {
            link,
            capacity_kbps,
            latency_ms,
        }
        | TraceKind::Shaping {
            link,
            capacity_kbps,
            latency_ms,
        } => {
            kv("link", &link.as_str());
            kv("capacity_kbps", &opt(*capacity_kbps));
            kv("latency_ms", &num(*latency_ms));
        }
        TraceKind::SenderReport { path, node } => {
            kv("path", path);
            kv("node", &node.as_str());
        }
        TraceKind::Report {
            path,
            node,
            seq,
            bandwidth_kbps,
            jitter_ms,
            loss_fraction,
        } => {
            kv("path", path);
            kv("node", &node.as_str());
            kv("seq", seq);
            kv("bw", &num(*bandwidth_kbps));
            kv("jitter", &num(*jitter_ms));
            kv("loss", &num(*loss_fraction));
        }
        TraceKind::ReportRecv {
            path,
            node,
            seq,
            emitted_at_ms,
            bandwidth_kbps,
            rtt_ms,
            jitter_ms,
        } => {
            kv("path", path);
            kv("node", &node.as_str());
            kv("seq", seq);
            kv("emitted_at", &num(*emitted_at_ms));
            kv("bw", &num(*bandwidth_kbps));
            kv("rtt", &num(*rtt_ms));
            kv("jitter", &num(*jitter_ms));
        }
        TraceKind::DataChannelSend { seq, emitted_at_ms } => {
            kv("seq", seq);
            kv("emitted_at", &num(*emitted_at_ms));
        }
        TraceKind::DataChannelRecv {
            seq,
            emitted_at_ms,
            forwarded_at_ms,
        } => {
            kv("seq", seq);
            kv("emitted_at", &num(*emitted_at_ms));
            kv("forwarded_at", &num(*forwarded_at_ms));
            kv("forwarding_ms", &num(e.time_ms - *emitted_at_ms));
        }
        TraceKind::Input {
            node,
            path,
            emitted_at_ms,
            bandwidth_kbps,
            rtt_ms,
            jitter_ms,
            class,
        } => {
            kv("node", &node.as_str());
            kv("path", path);
            kv("emitted_at", &num(*emitted_at_ms));
            kv("bw", &num(*bandwidth_kbps));
            kv("rtt", &num(*rtt_ms));
            kv("jitter", &num(*jitter_ms));
            kv("class", class);
        }
        TraceKind::Decision {
            node,
            from,
            to,
            settings,
        } => {
            kv("node", &node.as_str());
            kv("from", from);
            kv("to", to);
            kv("bitrate_kbps", &settings.bitrate_kbps);
            kv("fps", &settings.framerate_fps);
            kv("width", &settings.width_px);
            kv("height", &settings.height_px);
            kv("gop", &settings.gop_frames);
        }
        TraceKind::FrameSent {
            node,
            seq,
            level,
            key,
            headers,
            size_bytes,
        } => {
            kv("node", &node.as_str());
            kv("seq", seq);
            kv("level", level);
            kv("key", &b(*key));
            kv("headers", &b(*headers));
            kv("size", size_bytes);
        }
        TraceKind::FrameRecv {
            node,
            origin,
            seq,
            level,
            key,
            headers,
            size_bytes,
            sent_at_ms,
            first_at_ms,
            watermark_latency_ms,
        } => {
            kv("node", &node.as_str());
            kv("origin", &origin.as_str());
            kv("seq", seq);
            kv("level", level);
            kv("key", &b(*key));
            kv("headers", &b(*headers));
            kv("size", size_bytes);
            kv("sent_at", &num(*sent_at_ms));
            kv("first_at", &num(*first_at_ms));
            kv("watermark_latency", &num(*watermark_latency_ms));
        }
        TraceKind::Drop { link, dir, bytes } => {
            kv("link", &link.as_str());
            kv("dir", &dir.as_str());
            kv("bytes", bytes);
        }
        TraceKind::End {
            sent,
            dropped,
            delivered,
        } => {
            kv("sent", sent);
            kv("dropped", dropped);
            kv("delivered", delivered);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut t = EventTrace::<f64>::default();
        t.push(
            20_000.0,
            TraceKind::Shaping {
                link: LinkId::Downlink,
                capacity_kbps: None,
                latency_ms: 600.0,
            },
        );
        t.push(
            20_500.25,
            TraceKind::Decision {
                node: NodeId::Sender,
                from: Level::Good,
                to: Level::Poor,
                settings: EncodingLevel::new(700, 5, 640, 360, 5),
            },
        );
        assert_eq!(
            t.to_text(),
            "20000.000\tshaping\tlink=downlink\tcapacity_kbps=-\tlatency_ms=600.000\n\
             20500.250\tdecision\tnode=sender\tfrom=Good\tto=Poor\tbitrate_kbps=700\tfps=5\twidth=640\theight=360\tgop=5\n"
        );
        assert_eq!(t.count("decision"), 1);
    }
}
