//! Deterministic discrete-event engine running one sender, an optional relay
//! and one receiver over two shaped access links.
//!
//! Events run in `(time, seq)` order, `seq` growing with every scheduling
//! call, so simultaneous events keep the order they were scheduled in.
//! Shaping changes are scheduled before anything else and win ties.

mod topology;
mod trace;

pub use topology::{
    dispatch_report, first_hop, observer, sessions, LinkId, NodeId, ReportRoute, SessionSpec, ShapedPath, TopologyKind,
};
pub use trace::{EventTrace, TraceEvent, TraceKind};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::media::{extract_watermark, packetize, EncoderModel, FrameDescriptor, SizeJitter, Transcoder};
use crate::netem::{Enqueued, ShapedLink, ShapingKind};
use crate::rate_control::{classify, combine, ControllerState, Level, PathMetrics, RateController};
use crate::rtcp::{build_report, BandwidthSample, EstimatorState, JitterState, PathId, ReceiverReport, RtcpError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("wiring error: {0}")]
    Wiring(String),
    #[error(transparent)]
    Report(#[from] RtcpError),
}

#[derive(Debug, Clone)]
enum Payload<S> {
    FrameDue {
        epoch: u64,
    },
    SenderReportDue {
        session: usize,
    },
    ReportDue {
        session: usize,
    },
    Delivery {
        link: LinkId,
        token: u64,
    },
    ShapingChange {
        link: LinkId,
        capacity: Option<Option<S>>,
        latency: Option<S>,
    },
}

#[derive(Debug, Clone)]
struct SimEvent<S> {
    time_ms: S,
    seq: u64,
    payload: Payload<S>,
}

impl<S: Scalar> PartialEq for SimEvent<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for SimEvent<S> {}

impl<S: Scalar> PartialOrd for SimEvent<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for SimEvent<S> {
    // Reversed: `BinaryHeap` pops the maximum.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .partial_cmp(&self.time_ms)
            .unwrap_or(Ordering::Equal)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone)]
struct Fragment<S> {
    origin: NodeId,
    frame: FrameDescriptor<S>,
    count: u32,
}

/// A receiver report wrapped by the relay for the sender.
#[derive(Debug, Clone)]
pub struct DataChannelMessage<S> {
    pub report: ReceiverReport<S>,
    pub forwarded_at_ms: S,
}

#[derive(Debug, Clone)]
enum Body<S> {
    Media(Fragment<S>),
    SenderReport { session: usize, sent_at: S },
    ReceiverReport { session: usize, report: ReceiverReport<S> },
    DataChannel(DataChannelMessage<S>),
}

#[derive(Debug, Clone)]
struct NetPacket<S> {
    dst: NodeId,
    body: Body<S>,
}

#[derive(Debug, Clone)]
struct Session<S> {
    spec: SessionSpec,
    jitter: JitterState<S>,
    last_jitter_frame: Option<u64>,
    estimator: EstimatorState<S>,
    seq: u64,
    /// Send and arrival time of the last sender report heard.
    last_sr: Option<(S, S)>,
    /// Latest RTT known at the media sender.
    last_rtt: S,
    bytes: u64,
    transit_sum: S,
    transit_n: u64,
    interval_min: Option<S>,
    base_window: VecDeque<S>,
    last_arrival: Option<S>,
    loss_mark: [(u64, u64); 2],
}

#[derive(Debug, Clone, Copy)]
struct Partial<S> {
    got: u32,
    first_at: S,
}

pub struct Simulation<S: Scalar> {
    cfg: ScenarioConfig,
    transcoding: bool,
    end_ms: S,
    period_ms: S,
    now: S,
    next_seq: u64,
    queue: BinaryHeap<SimEvent<S>>,
    links: [ShapedLink<S, NetPacket<S>>; 2],
    media_offered: [u64; 2],
    media_dropped: [u64; 2],
    encoder: EncoderModel<S>,
    encoder_epoch: u64,
    media_dst: NodeId,
    sender_ctl: RateController<S>,
    relay_ctl: Option<RateController<S>>,
    transcoder: Option<Transcoder<S>>,
    sessions: Vec<Session<S>>,
    latest_upload: Option<PathMetrics<S>>,
    latest_download: Option<PathMetrics<S>>,
    partial: BTreeMap<(NodeId, NodeId, u64), Partial<S>>,
    relay_out_seq: u64,
    trace: EventTrace<S>,
}

impl<S: Scalar> Simulation<S> {
    /// Validates the configuration and wires the scenario. No event runs yet.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let schedule = cfg.schedule::<S>()?;
        let lit = S::lit;
        let shaped = cfg.shaped_path();

        let links: [ShapedLink<S, NetPacket<S>>; 2] = [LinkId::Uplink, LinkId::Downlink].map(|id| {
            let base = match id {
                LinkId::Uplink => cfg.links.uplink,
                LinkId::Downlink => cfg.links.downlink,
            };
            let mut capacity = base.capacity_kbps.map(lit);
            let mut latency = lit(base.latency_ms);
            if shaped.links().contains(&id) {
                let v = schedule.value_at(S::zero());
                match schedule.kind {
                    ShapingKind::Bandwidth => capacity = Some(v),
                    ShapingKind::Latency => latency = v,
                }
            }
            ShapedLink::new(capacity, latency, id.latency_scope(), cfg.queue_limit_bytes)
        });

        let transcoding = cfg.transcoding();
        let start = if cfg.topology.is_relay() {
            lit(cfg.relay.setup_delay_ms)
        } else {
            S::zero()
        };
        let period_ms = lit(cfg.report_period_ms);
        let end_ms = lit(cfg.duration_ms());
        let thresholds = cfg.thresholds.map(lit);
        let initial = cfg.fixed_level.unwrap_or(cfg.initial_level);
        let controller = || {
            let mut c = RateController::new(
                thresholds,
                cfg.ladder,
                ControllerState::new(initial, S::zero(), lit(cfg.hold_down_ms)),
            );
            c.pinned = cfg.fixed_level.is_some();
            c
        };
        let jitter = |salt: u64| (cfg.size_jitter > 0.0).then(|| SizeJitter::new(cfg.size_jitter, cfg.seed ^ salt));
        let k = lit(cfg.keyframe_weight);
        let encoder = EncoderModel::new(initial, cfg.ladder.get(initial), k, start).with_size_jitter(jitter(0));
        let transcoder = transcoding
            .then(|| Transcoder::new(initial, cfg.ladder.get(initial), k).with_size_jitter(jitter(0x9e37_79b9)));

        let estimator = cfg.estimator.state::<S>();
        let sessions = sessions(cfg.topology)
            .into_iter()
            .map(|spec| Session {
                spec,
                jitter: JitterState::new(),
                last_jitter_frame: None,
                estimator,
                seq: 0,
                last_sr: None,
                last_rtt: S::zero(),
                bytes: 0,
                transit_sum: S::zero(),
                transit_n: 0,
                interval_min: None,
                base_window: VecDeque::new(),
                last_arrival: None,
                loss_mark: [(0, 0); 2],
            })
            .collect::<Vec<_>>();

        let mut sim = Self {
            cfg: cfg.clone(),
            transcoding,
            end_ms,
            period_ms,
            now: S::zero(),
            next_seq: 0,
            queue: BinaryHeap::new(),
            links,
            media_offered: [0; 2],
            media_dropped: [0; 2],
            encoder,
            encoder_epoch: 0,
            media_dst: if transcoding { NodeId::Relay } else { NodeId::Receiver },
            sender_ctl: controller(),
            relay_ctl: transcoding.then(controller),
            transcoder,
            sessions,
            latest_upload: None,
            latest_download: None,
            partial: BTreeMap::new(),
            relay_out_seq: 0,
            trace: EventTrace::default(),
        };

        sim.trace.push(
            S::zero(),
            TraceKind::Start {
                scenario: cfg.scenario.clone(),
                topology: cfg.topology,
                transcoding,
                estimator: cfg.estimator.strategy,
                report_period_ms: period_ms,
                duration_ms: end_ms,
                initial_level: initial,
                seed: cfg.seed,
            },
        );
        for id in [LinkId::Uplink, LinkId::Downlink] {
            let l = &sim.links[id.idx()];
            sim.trace.push(
                S::zero(),
                TraceKind::Link {
                    link: id,
                    capacity_kbps: l.capacity_kbps(),
                    latency_ms: l.added_latency_ms(),
                },
            );
        }

        let mut changes: Vec<(S, LinkId, S)> = Vec::new();
        for &id in shaped.links() {
            for step in schedule.changes(end_ms) {
                changes.push((step.start_ms, id, step.value));
            }
        }
        changes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        for (t, link, v) in changes {
            let (capacity, latency) = match schedule.kind {
                ShapingKind::Bandwidth => (Some(Some(v)), None),
                ShapingKind::Latency => (None, Some(v)),
            };
            sim.schedule(
                t,
                Payload::ShapingChange {
                    link,
                    capacity,
                    latency,
                },
            );
        }
        sim.schedule(start, Payload::FrameDue { epoch: 0 });
        for i in 0..sim.sessions.len() {
            sim.schedule(start, Payload::SenderReportDue { session: i });
            sim.schedule(start + period_ms, Payload::ReportDue { session: i });
        }
        Ok(sim)
    }

    fn schedule(&mut self, time_ms: S, payload: Payload<S>) {
        debug_assert!(time_ms >= self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(SimEvent { time_ms, seq, payload });
    }

    /// Runs to the end of the scenario and returns the trace.
    pub fn run(mut self) -> Result<EventTrace<S>, SimError> {
        while let Some(ev) = self.queue.pop() {
            if ev.time_ms > self.end_ms {
                break;
            }
            self.now = ev.time_ms;
            self.dispatch(ev.payload)?;
        }
        self.now = self.end_ms;
        let (sent, dropped, delivered) = self.links.iter().fold((0, 0, 0), |acc, l| {
            (acc.0 + l.sent_count, acc.1 + l.drop_count, acc.2 + l.delivered_count)
        });
        self.trace.push(
            self.end_ms,
            TraceKind::End {
                sent,
                dropped,
                delivered,
            },
        );
        Ok(self.trace)
    }

    fn dispatch(&mut self, payload: Payload<S>) -> Result<(), SimError> {
        match payload {
            Payload::FrameDue { epoch } => {
                if epoch == self.encoder_epoch {
                    self.emit_frame();
                }
            }
            Payload::SenderReportDue { session } => self.send_sender_report(session),
            Payload::ReportDue { session } => self.emit_receiver_report(session),
            Payload::Delivery { link, token } => {
                if let Some((pkt, bytes, dir)) = self.links[link.idx()].deliver(token) {
                    self.arrive(link.far_end(dir), pkt, bytes)?;
                }
            }
            Payload::ShapingChange {
                link,
                capacity,
                latency,
            } => {
                let now = self.now;
                let moved = self.links[link.idx()].set_shaping(capacity, latency, now);
                let l = &self.links[link.idx()];
                self.trace.push(
                    now,
                    TraceKind::Shaping {
                        link,
                        capacity_kbps: l.capacity_kbps(),
                        latency_ms: l.added_latency_ms(),
                    },
                );
                for r in moved {
                    self.schedule(r.delivery_ms, Payload::Delivery { link, token: r.token });
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, from: NodeId, dst: NodeId, bytes: u32, body: Body<S>) {
        let (link, dir) = first_hop(from, dst);
        let media = matches!(body, Body::Media(_));
        if media {
            self.media_offered[link.idx()] += 1;
        }
        let now = self.now;
        match self.links[link.idx()].enqueue(NetPacket { dst, body }, bytes, dir, now) {
            Enqueued::Scheduled { token, delivery_ms } => self.schedule(delivery_ms, Payload::Delivery { link, token }),
            Enqueued::Dropped => {
                if media {
                    self.media_dropped[link.idx()] += 1;
                }
                self.trace.push(now, TraceKind::Drop { link, dir, bytes });
            }
        }
    }

    fn send_frame(&mut self, from: NodeId, frame: &FrameDescriptor<S>) {
        self.trace.push(
            self.now,
            TraceKind::FrameSent {
                node: from,
                seq: frame.frame_seq,
                level: frame.level,
                key: frame.is_keyframe,
                headers: frame.carries_headers,
                size_bytes: frame.size_bytes,
            },
        );
        let dst = if from == NodeId::Sender {
            self.media_dst
        } else {
            NodeId::Receiver
        };
        let packets = packetize(frame, self.cfg.mtu_payload_bytes);
        let count = packets.len() as u32;
        for p in packets {
            let frag = Fragment {
                origin: from,
                frame: *frame,
                count,
            };
            self.send(from, dst, p.payload_bytes, Body::Media(frag));
        }
    }

    fn emit_frame(&mut self) {
        let frame = self.encoder.next_frame(self.now);
        self.send_frame(NodeId::Sender, &frame);
        let next = self.encoder.next_frame_at_ms;
        if next <= self.end_ms {
            self.schedule(
                next,
                Payload::FrameDue {
                    epoch: self.encoder_epoch,
                },
            );
        }
    }

    fn send_sender_report(&mut self, i: usize) {
        let spec = self.sessions[i].spec;
        self.trace.push(
            self.now,
            TraceKind::SenderReport {
                path: spec.path,
                node: spec.media_sender,
            },
        );
        let body = Body::SenderReport {
            session: i,
            sent_at: self.now,
        };
        self.send(spec.media_sender, spec.media_receiver, self.cfg.report_bytes, body);
        self.schedule(self.now + self.period_ms, Payload::SenderReportDue { session: i });
    }

    fn emit_receiver_report(&mut self, i: usize) {
        let now = self.now;
        let period = self.period_ms;
        let window = self.cfg.estimator.delay_window_reports as usize;
        let true_capacity = {
            let t = now - self.sessions[i].estimator.oracle_lag_ms;
            let mut cap: Option<S> = None;
            for l in self.sessions[i].spec.links() {
                if let Some(c) = self.links[l.idx()].capacity_at(t) {
                    cap = Some(cap.map_or(c, |m| m.min(c)));
                }
            }
            cap
        };
        let mut delivered = S::one();
        let mut marks = self.sessions[i].loss_mark;
        for l in self.sessions[i].spec.links() {
            let (off0, drop0) = marks[l.idx()];
            let off = self.media_offered[l.idx()] - off0;
            let dropped = self.media_dropped[l.idx()] - drop0;
            if off > 0 {
                delivered = delivered * (S::one() - S::lit(dropped as f64 / off as f64));
            }
            marks[l.idx()] = (self.media_offered[l.idx()], self.media_dropped[l.idx()]);
        }

        let s = &mut self.sessions[i];
        s.loss_mark = marks;
        let loss_fraction = S::one() - delivered;
        let throughput_kbps = S::lit(s.bytes as f64 * 8.0) / period;
        let queue_delay_ms = match s.interval_min {
            Some(m) => {
                s.base_window.push_back(m);
                while s.base_window.len() > window {
                    s.base_window.pop_front();
                }
                let base = s.base_window.iter().copied().fold(m, S::min);
                let mean = s.transit_sum / S::lit(s.transit_n as f64);
                (mean - base).max(S::zero())
            }
            // Starved interval: everything is stuck somewhere.
            None => s.last_arrival.map_or(S::zero(), |t| now - t),
        };
        s.estimator.estimate(&BandwidthSample {
            throughput_kbps,
            queue_delay_ms,
            loss_fraction,
            true_capacity_kbps: true_capacity,
        });
        let mut report = build_report(
            &s.jitter,
            &s.estimator,
            S::zero(),
            loss_fraction,
            s.spec.path,
            now,
            s.seq,
        );
        s.seq = report.seq;
        if let Some((lsr, arrived)) = s.last_sr {
            report = report.with_echo(Some(lsr), now - arrived);
        }
        s.bytes = 0;
        s.transit_sum = S::zero();
        s.transit_n = 0;
        s.interval_min = None;
        let spec = s.spec;

        self.trace.push(
            now,
            TraceKind::Report {
                path: spec.path,
                node: spec.media_receiver,
                seq: report.seq,
                bandwidth_kbps: report.metrics.bandwidth_kbps,
                jitter_ms: report.metrics.jitter_ms,
                loss_fraction,
            },
        );
        let body = Body::ReceiverReport { session: i, report };
        self.send(spec.media_receiver, spec.media_sender, self.cfg.report_bytes, body);
        self.schedule(now + period, Payload::ReportDue { session: i });
    }

    fn arrive(&mut self, node: NodeId, pkt: NetPacket<S>, bytes: u32) -> Result<(), SimError> {
        if let Body::Media(frag) = &pkt.body {
            self.observe_media(node, frag, bytes);
        }
        if pkt.dst != node {
            // Only the relay sits between two links.
            debug_assert_eq!(node, NodeId::Relay);
            self.send(node, pkt.dst, bytes, pkt.body);
            return Ok(());
        }
        match pkt.body {
            Body::Media(_) => {}
            Body::SenderReport { session, sent_at } => {
                self.sessions[session].last_sr = Some((sent_at, self.now));
            }
            Body::ReceiverReport { session, report } => self.on_receiver_report(node, session, report)?,
            Body::DataChannel(msg) => self.on_data_channel(node, msg)?,
        }
        Ok(())
    }

    fn observe_media(&mut self, node: NodeId, frag: &Fragment<S>, bytes: u32) {
        let Some(i) = self.sessions.iter().position(|s| s.spec.media_receiver == node) else {
            // Direct: the relay position is plain network.
            return;
        };
        let now = self.now;
        let transit = now - frag.frame.pts_ms;
        let key = (node, frag.origin, frag.frame.frame_seq);

        let s = &mut self.sessions[i];
        s.bytes += bytes as u64;
        s.transit_sum = s.transit_sum + transit;
        s.transit_n += 1;
        s.interval_min = Some(s.interval_min.map_or(transit, |m| m.min(transit)));
        s.last_arrival = Some(now);
        // Late packets of frames older than the newest one seen are not sampled.
        if s.last_jitter_frame.is_none_or(|f| frag.frame.frame_seq >= f) {
            s.jitter.update(transit);
            s.last_jitter_frame = Some(frag.frame.frame_seq);
        }

        let entry = self.partial.entry(key).or_insert(Partial { got: 0, first_at: now });
        entry.got += 1;
        if entry.got < frag.count {
            return;
        }
        let first_at = entry.first_at;
        self.partial.remove(&key);
        if self.partial.len() > 4096 {
            let horizon = now - S::lit(10_000.0);
            self.partial.retain(|_, p| p.first_at >= horizon);
        }
        let frame = frag.frame;
        self.trace.push(
            now,
            TraceKind::FrameRecv {
                node,
                origin: frag.origin,
                seq: frame.frame_seq,
                level: frame.level,
                key: frame.is_keyframe,
                headers: frame.carries_headers,
                size_bytes: frame.size_bytes,
                sent_at_ms: frame.pts_ms,
                first_at_ms: first_at,
                watermark_latency_ms: extract_watermark(&frame, now),
            },
        );
        if node == NodeId::Relay {
            if let Some(mut out) = self.transcoder.as_mut().and_then(|t| t.transcode(&frame, now)) {
                // Passed-through and re-encoded frames share one outgoing sequence.
                out.frame_seq = self.relay_out_seq;
                self.relay_out_seq += 1;
                self.send_frame(NodeId::Relay, &out);
            }
        }
    }

    fn on_receiver_report(&mut self, node: NodeId, i: usize, mut report: ReceiverReport<S>) -> Result<(), SimError> {
        let now = self.now;
        let s = &mut self.sessions[i];
        if report.lsr_ms.is_some() {
            report.complete_rtt(now)?;
        } else {
            report.metrics.rtt_ms = s.last_rtt;
        }
        s.last_rtt = report.metrics.rtt_ms;
        let m = report.metrics;
        self.trace.push(
            now,
            TraceKind::ReportRecv {
                path: report.path,
                node,
                seq: report.seq,
                emitted_at_ms: m.sampled_at_ms,
                bandwidth_kbps: m.bandwidth_kbps,
                rtt_ms: m.rtt_ms,
                jitter_ms: m.jitter_ms,
            },
        );
        match dispatch_report(self.cfg.topology, self.transcoding, report.path, node)? {
            ReportRoute::SenderController => self.feed(NodeId::Sender, report.path, m),
            ReportRoute::SenderCombined => {
                self.latest_upload = Some(m);
                let input = self.latest_download.map_or(m, |d| combine(&m, &d));
                self.feed_at(NodeId::Sender, report.path, m.sampled_at_ms, input);
            }
            ReportRoute::RelayController => self.feed(NodeId::Relay, report.path, m),
            ReportRoute::ForwardToSender => {
                self.trace.push(
                    now,
                    TraceKind::DataChannelSend {
                        seq: report.seq,
                        emitted_at_ms: m.sampled_at_ms,
                    },
                );
                let msg = DataChannelMessage {
                    report,
                    forwarded_at_ms: now,
                };
                self.send(
                    NodeId::Relay,
                    NodeId::Sender,
                    self.cfg.report_bytes,
                    Body::DataChannel(msg),
                );
            }
            ReportRoute::Ignore => {}
        }
        Ok(())
    }

    fn on_data_channel(&mut self, node: NodeId, msg: DataChannelMessage<S>) -> Result<(), SimError> {
        if node != NodeId::Sender || msg.report.path != PathId::Download {
            return Err(SimError::Wiring(format!(
                "data-channel message with {} report delivered to {}",
                msg.report.path,
                node.as_str()
            )));
        }
        let m = msg.report.metrics;
        self.trace.push(
            self.now,
            TraceKind::DataChannelRecv {
                seq: msg.report.seq,
                emitted_at_ms: m.sampled_at_ms,
                forwarded_at_ms: msg.forwarded_at_ms,
            },
        );
        self.latest_download = Some(m);
        let input = self.latest_upload.map_or(m, |u| combine(&u, &m));
        self.feed_at(NodeId::Sender, PathId::Download, m.sampled_at_ms, input);
        Ok(())
    }

    fn feed(&mut self, node: NodeId, path: PathId, m: PathMetrics<S>) {
        self.feed_at(node, path, m.sampled_at_ms, m);
    }

    /// Hands controller input to `node`'s controller and applies any decision.
    fn feed_at(&mut self, node: NodeId, path: PathId, emitted_at_ms: S, input: PathMetrics<S>) {
        let now = self.now;
        let ctl = match node {
            NodeId::Sender => &mut self.sender_ctl,
            _ => self.relay_ctl.as_mut().expect("relay controller exists when routed to"),
        };
        let class = classify(&input, &ctl.thresholds);
        let from = ctl.level();
        let decision = ctl.on_report(&input, now);
        self.trace.push(
            now,
            TraceKind::Input {
                node,
                path,
                emitted_at_ms,
                bandwidth_kbps: input.bandwidth_kbps,
                rtt_ms: input.rtt_ms,
                jitter_ms: input.jitter_ms,
                class,
            },
        );
        let Some((to, settings)) = decision else {
            return;
        };
        self.trace.push(
            now,
            TraceKind::Decision {
                node,
                from,
                to,
                settings,
            },
        );
        match node {
            NodeId::Sender => {
                self.encoder.apply_settings(to, settings, now);
                self.encoder_epoch += 1;
                let next = self.encoder.next_frame_at_ms;
                if next <= self.end_ms {
                    self.schedule(
                        next,
                        Payload::FrameDue {
                            epoch: self.encoder_epoch,
                        },
                    );
                }
            }
            _ => {
                if let Some(t) = self.transcoder.as_mut() {
                    t.retarget(to, settings);
                }
            }
        }
    }
}

/// Runs one scenario to completion.
pub fn run<S: Scalar>(cfg: &ScenarioConfig) -> Result<EventTrace<S>, SimError> {
    Simulation::<S>::new(cfg)?.run()
}

/// Receiver-to-sender delay of every report the relay forwarded, in trace order.
pub fn relay_forwarding_latency<S: Scalar>(trace: &EventTrace<S>) -> Vec<S> {
    trace
        .iter()
        .filter_map(|e| match e.kind {
            TraceKind::DataChannelRecv { emitted_at_ms, .. } => Some(e.time_ms - emitted_at_ms),
            _ => None,
        })
        .collect()
}

/// Level held by `node`'s controller over time: the initial level at zero,
/// then one entry per decision.
pub fn level_timeline<S: Scalar>(trace: &EventTrace<S>, node: NodeId) -> Vec<(S, Level)> {
    let mut out = Vec::new();
    for e in trace.iter() {
        match &e.kind {
            TraceKind::Start { initial_level, .. } => out.push((e.time_ms, *initial_level)),
            TraceKind::Decision { node: n, to, .. } if *n == node => out.push((e.time_ms, *to)),
            _ => {}
        }
    }
    out
}

/// Level in force for `node` at `t_ms` according to `timeline`.
pub fn level_at<S: Scalar>(timeline: &[(S, Level)], t_ms: S) -> Option<Level> {
    timeline.iter().rev().find(|(t, _)| *t <= t_ms).map(|(_, l)| *l)
}

/// Media bytes of frames fully received at `node` with arrival in `[from_ms, to_ms)`.
pub fn received_frame_bytes<S: Scalar>(trace: &EventTrace<S>, node: NodeId, from_ms: S, to_ms: S) -> u64 {
    trace
        .iter()
        .filter(|e| e.time_ms >= from_ms && e.time_ms < to_ms)
        .filter_map(|e| match e.kind {
            TraceKind::FrameRecv {
                node: n, size_bytes, ..
            } if n == node => Some(size_bytes as u64),
            _ => None,
        })
        .sum()
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;
    use crate::netem::ShapingKind;

    fn cfg(topology: TopologyKind, kind: ShapingKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.topology = topology;
        c.shaping.kind = kind;
        c
    }

    #[test]
    fn two_hundred_reports_in_100_s() {
        let t = run::<f64>(&cfg(TopologyKind::Direct, ShapingKind::Bandwidth)).unwrap();
        assert_eq!(t.count("report"), 200);
        assert_eq!(t.count("shaping"), 4);
        let times: Vec<f64> = t
            .iter()
            .filter(|e| e.kind.name() == "shaping")
            .map(|e| e.time_ms)
            .collect();
        assert_eq!(times, vec![20_000.0, 40_000.0, 60_000.0, 80_000.0]);
    }

    #[test]
    fn events_are_time_ordered() {
        for topo in TopologyKind::ALL {
            let t = run::<f64>(&cfg(topo, ShapingKind::Latency)).unwrap();
            assert!(t.events.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
        }
    }

    #[test]
    fn transcoding_downlink_changes_stay_at_the_relay() {
        let t = run::<f64>(&cfg(TopologyKind::TranscodingRelay, ShapingKind::Latency)).unwrap();
        assert!(level_timeline(&t, NodeId::Sender).len() == 1, "sender never decides");
        assert!(level_timeline(&t, NodeId::Relay).len() > 1);
        assert_eq!(t.count("dc_recv"), 0);
    }

    #[test]
    fn reporting_relay_forwards_downlink_reports() {
        let t = run::<f64>(&cfg(TopologyKind::ReportingRelay, ShapingKind::Latency)).unwrap();
        let fwd = relay_forwarding_latency(&t);
        assert!(fwd.len() >= 195, "{}", fwd.len());
        assert!(fwd.iter().all(|d| *d >= 0.0));
        // 600 ms downlink phases delay feedback by at least the added latency
        let slow = t
            .iter()
            .filter_map(|e| match e.kind {
                TraceKind::DataChannelRecv { emitted_at_ms, .. } if (1_000.0..19_000.0).contains(&emitted_at_ms) => {
                    Some(e.time_ms - emitted_at_ms)
                }
                _ => None,
            })
            .collect::<Vec<_>>();
        assert!(!slow.is_empty() && slow.iter().all(|d| *d >= 600.0));
    }

    #[test]
    fn f32_runs() {
        let t = run::<f32>(&cfg(TopologyKind::ReportingRelay, ShapingKind::Bandwidth)).unwrap();
        assert_eq!(t.count("report"), 400);
    }

    #[test]
    fn invalid_config_fails_before_running() {
        let mut c = ScenarioConfig::default();
        c.report_period_ms = 0.0;
        assert!(matches!(Simulation::<f64>::new(&c), Err(SimError::Config(_))));
    }
}
