//! Per-path network emulation: a rate-limited drop-tail FIFO with added
//! latency, plus the step schedules that retune it over time.
//!
//! A link is a shared bearer: packets in both directions queue on the same
//! FIFO and consume the same capacity. Added latency is applied to packets
//! travelling in the link's [`LatencyScope`], the way a `tc` delay rule acts
//! on one host's egress.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum NetemError {
    #[error("invalid shaping schedule: {0}")]
    InvalidSchedule(String),
    #[error("unknown shaping kind `{0}` (expected bandwidth or latency)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// Media direction: sender towards receiver.
    Forward,
    /// Feedback direction: receiver towards sender.
    Reverse,
}

impl Direction {
    fn idx(self) -> usize {
        match self {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "fwd",
            Direction::Reverse => "rev",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyScope {
    Forward,
    Reverse,
    Both,
}

impl LatencyScope {
    fn covers(self, dir: Direction) -> bool {
        matches!(
            (self, dir),
            (LatencyScope::Both, _)
                | (LatencyScope::Forward, Direction::Forward)
                | (LatencyScope::Reverse, Direction::Reverse)
        )
    }
}

/// Outcome of offering a packet to a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Enqueued<S> {
    Scheduled { token: u64, delivery_ms: S },
    Dropped,
}

/// A queued packet whose delivery moved because the shaping changed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescheduled<S> {
    pub token: u64,
    pub delivery_ms: S,
}

#[derive(Debug, Clone, Copy)]
struct Queued<S> {
    token: u64,
    bytes: u32,
    dir: Direction,
    service_start_ms: S,
    depart_ms: S,
    delivery_ms: S,
}

#[derive(Debug, Clone)]
pub struct ShapedLink<S, P> {
    /// `None` is an uncapped link.
    capacity_kbps: Option<S>,
    added_latency_ms: S,
    latency_scope: LatencyScope,
    queue_limit_bytes: u64,
    queue: VecDeque<Queued<S>>,
    queued_bytes: u64,
    in_flight: BTreeMap<u64, (P, u32, Direction)>,
    busy_until_ms: S,
    last_fixed_delivery: [S; 2],
    last_assigned_delivery: [S; 2],
    next_token: u64,
    capacity_history: Vec<(S, Option<S>)>,
    pub sent_count: u64,
    pub drop_count: u64,
    pub delivered_count: u64,
    pub delivered_bytes: u64,
}

fn serialization_ms<S: Scalar>(bits: S, capacity_kbps: Option<S>) -> S {
    match capacity_kbps {
        // kbps is bits per millisecond
        Some(c) => bits / c,
        None => S::zero(),
    }
}

impl<S: Scalar, P> ShapedLink<S, P> {
    pub fn new(
        capacity_kbps: Option<S>,
        added_latency_ms: S,
        latency_scope: LatencyScope,
        queue_limit_bytes: u64,
    ) -> Self {
        Self {
            capacity_kbps,
            added_latency_ms,
            latency_scope,
            queue_limit_bytes,
            queue: VecDeque::new(),
            queued_bytes: 0,
            in_flight: BTreeMap::new(),
            busy_until_ms: S::zero(),
            last_fixed_delivery: [S::neg_infinity(); 2],
            last_assigned_delivery: [S::neg_infinity(); 2],
            next_token: 0,
            capacity_history: vec![(S::neg_infinity(), capacity_kbps)],
            sent_count: 0,
            drop_count: 0,
            delivered_count: 0,
            delivered_bytes: 0,
        }
    }

    pub fn capacity_kbps(&self) -> Option<S> {
        self.capacity_kbps
    }

    pub fn added_latency_ms(&self) -> S {
        self.added_latency_ms
    }

    /// Capacity in force at `t_ms`, for oracle estimation.
    pub fn capacity_at(&self, t_ms: S) -> Option<S> {
        self.capacity_history
            .iter()
            .rev()
            .find(|(t, _)| *t <= t_ms)
            .map(|(_, c)| *c)
            .unwrap_or(self.capacity_kbps)
    }

    /// Bytes queued or in service at `now_ms`.
    pub fn occupancy_bytes(&mut self, now_ms: S) -> u64 {
        self.prune(now_ms);
        self.queued_bytes
    }

    /// Time a packet arriving at `now_ms` would wait before its own serialization.
    pub fn queue_delay_ms(&self, now_ms: S) -> S {
        (self.busy_until_ms - now_ms).max(S::zero())
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    fn latency_for(&self, dir: Direction) -> S {
        if self.latency_scope.covers(dir) {
            self.added_latency_ms
        } else {
            S::zero()
        }
    }

    fn prune(&mut self, now_ms: S) {
        while let Some(front) = self.queue.front() {
            if front.depart_ms > now_ms {
                break;
            }
            let q = self.queue.pop_front().expect("front exists");
            self.queued_bytes -= q.bytes as u64;
            let d = q.dir.idx();
            self.last_fixed_delivery[d] = self.last_fixed_delivery[d].max(q.delivery_ms);
        }
    }

    /// A rate-limited link never lets a packet overtake an earlier one in the
    /// same direction. A pure delay line does, when its latency drops.
    fn assign(&mut self, dir: Direction, depart_ms: S) -> S {
        let d = dir.idx();
        let mut delivery = depart_ms + self.latency_for(dir);
        if self.capacity_kbps.is_some() {
            delivery = delivery.max(self.last_assigned_delivery[d]);
        }
        self.last_assigned_delivery[d] = delivery;
        delivery
    }

    /// Offers a packet. Drop-tail when the queue would exceed its byte limit.
    pub fn enqueue(&mut self, payload: P, bytes: u32, dir: Direction, now_ms: S) -> Enqueued<S> {
        self.prune(now_ms);
        if self.queued_bytes + bytes as u64 > self.queue_limit_bytes {
            self.drop_count += 1;
            return Enqueued::Dropped;
        }
        let start = now_ms.max(self.busy_until_ms);
        let depart = start + serialization_ms(S::lit(bytes as f64 * 8.0), self.capacity_kbps);
        self.busy_until_ms = depart;
        let delivery_ms = self.assign(dir, depart);
        let token = self.next_token;
        self.next_token += 1;
        self.queue.push_back(Queued {
            token,
            bytes,
            dir,
            service_start_ms: start,
            depart_ms: depart,
            delivery_ms,
        });
        self.queued_bytes += bytes as u64;
        self.in_flight.insert(token, (payload, bytes, dir));
        self.sent_count += 1;
        Enqueued::Scheduled { token, delivery_ms }
    }

    /// Retunes the link at `at_ms`. Queued packets, including the one in
    /// service, drain under the new parameters; packets already on the wire
    /// keep their delivery time. Returns the new delivery of every queued
    /// packet under a fresh token; old tokens become stale.
    pub fn set_shaping(
        &mut self,
        capacity_kbps: Option<Option<S>>,
        added_latency_ms: Option<S>,
        at_ms: S,
    ) -> Vec<Rescheduled<S>> {
        self.prune(at_ms);
        let old_capacity = self.capacity_kbps;
        if let Some(c) = capacity_kbps {
            self.capacity_kbps = c;
            self.capacity_history.push((at_ms, c));
        }
        if let Some(l) = added_latency_ms {
            self.added_latency_ms = l;
        }

        self.last_assigned_delivery = self.last_fixed_delivery;
        let mut cursor = at_ms;
        let mut out = Vec::with_capacity(self.queue.len());
        let queue = std::mem::take(&mut self.queue);
        let mut rebuilt = VecDeque::with_capacity(queue.len());
        for (i, mut q) in queue.into_iter().enumerate() {
            let full_bits = S::lit(q.bytes as f64 * 8.0);
            let bits = if i == 0 && q.service_start_ms < at_ms {
                let served = match old_capacity {
                    Some(c) => (at_ms - q.service_start_ms) * c,
                    None => full_bits,
                };
                (full_bits - served).max(S::zero())
            } else {
                full_bits
            };
            q.service_start_ms = cursor;
            q.depart_ms = cursor + serialization_ms(bits, self.capacity_kbps);
            cursor = q.depart_ms;
            let delivery_ms = self.assign(q.dir, q.depart_ms);
            q.delivery_ms = delivery_ms;

            let entry = self.in_flight.remove(&q.token).expect("queued packet is in flight");
            q.token = self.next_token;
            self.next_token += 1;
            self.in_flight.insert(q.token, entry);
            out.push(Rescheduled {
                token: q.token,
                delivery_ms,
            });
            rebuilt.push_back(q);
        }
        self.queue = rebuilt;
        if !self.queue.is_empty() {
            self.busy_until_ms = cursor;
        }
        out
    }

    /// Hands over a packet whose delivery time has come. Stale tokens yield `None`.
    pub fn deliver(&mut self, token: u64) -> Option<(P, u32, Direction)> {
        let entry = self.in_flight.remove(&token)?;
        self.delivered_count += 1;
        self.delivered_bytes += entry.1 as u64;
        Some(entry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapingKind {
    /// Step values are capacities in kbps.
    Bandwidth,
    /// Step values are added latencies in ms.
    Latency,
}

impl ShapingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapingKind::Bandwidth => "bandwidth",
            ShapingKind::Latency => "latency",
        }
    }
}

impl fmt::Display for ShapingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapingKind {
    type Err = NetemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bandwidth" => Ok(ShapingKind::Bandwidth),
            "latency" => Ok(ShapingKind::Latency),
            other => Err(NetemError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep<S> {
    pub start_ms: S,
    pub value: S,
}

/// Piecewise-constant shaping over one cycle, optionally repeated.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingSchedule<S> {
    pub kind: ShapingKind,
    pub steps: Vec<ScheduleStep<S>>,
    pub cycle_ms: S,
    pub repeat: bool,
}

impl<S: Scalar> ShapingSchedule<S> {
    pub fn new(kind: ShapingKind, steps: Vec<ScheduleStep<S>>, cycle_ms: S, repeat: bool) -> Result<Self, NetemError> {
        let s = Self {
            kind,
            steps,
            cycle_ms,
            repeat,
        };
        s.validate()?;
        Ok(s)
    }

    /// Steps of equal length starting at zero.
    pub fn uniform(kind: ShapingKind, step_ms: S, values: &[S], repeat: bool) -> Result<Self, NetemError> {
        let steps = values
            .iter()
            .enumerate()
            .map(|(i, &value)| ScheduleStep {
                start_ms: step_ms * S::lit(i as f64),
                value,
            })
            .collect();
        Self::new(kind, steps, step_ms * S::lit(values.len() as f64), repeat)
    }

    pub fn validate(&self) -> Result<(), NetemError> {
        let bad = |m: &str| Err(NetemError::InvalidSchedule(m.to_string()));
        let Some(first) = self.steps.first() else {
            return bad("at least one step is required");
        };
        if first.start_ms != S::zero() {
            return bad("the first step must start at 0");
        }
        if self.steps.windows(2).any(|w| !(w[1].start_ms > w[0].start_ms)) {
            return bad("step starts must be strictly increasing");
        }
        if !(self.cycle_ms > self.steps.last().expect("non-empty").start_ms) {
            return bad("cycle must end after the last step starts");
        }
        for s in &self.steps {
            if !(s.value.is_finite() && s.value >= S::zero()) {
                return bad("step values must be finite and non-negative");
            }
            if self.kind == ShapingKind::Bandwidth && s.value <= S::zero() {
                return bad("capacities must be positive");
            }
        }
        Ok(())
    }

    pub fn value_at(&self, t_ms: S) -> S {
        let local = if self.repeat && t_ms >= self.cycle_ms {
            t_ms % self.cycle_ms
        } else {
            t_ms
        };
        self.steps
            .iter()
            .rev()
            .find(|s| s.start_ms <= local)
            .unwrap_or(&self.steps[0])
            .value
    }

    /// Step boundaries after time zero and up to `duration_ms` (exclusive),
    /// with the value each one installs.
    pub fn changes(&self, duration_ms: S) -> Vec<ScheduleStep<S>> {
        let mut out = Vec::new();
        let mut base = S::zero();
        loop {
            for s in &self.steps {
                let t = base + s.start_ms;
                if t >= duration_ms {
                    return out;
                }
                if t > S::zero() {
                    out.push(ScheduleStep {
                        start_ms: t,
                        value: s.value,
                    });
                }
            }
            if !self.repeat {
                return out;
            }
            base = base + self.cycle_ms;
        }
    }
}

/// The 20 s step tables: bandwidth 1, 10, 100, 10, 1 Mbps and latency
/// 600, 100, 10, 100, 600 ms.
pub fn schedule_from_table<S: Scalar>(kind: ShapingKind) -> ShapingSchedule<S> {
    let values: [f64; 5] = match kind {
        ShapingKind::Bandwidth => [1_000.0, 10_000.0, 100_000.0, 10_000.0, 1_000.0],
        ShapingKind::Latency => [600.0, 100.0, 10.0, 100.0, 600.0],
    };
    let values: Vec<S> = values.iter().map(|&v| S::lit(v)).collect();
    ShapingSchedule::uniform(kind, S::lit(20_000.0), &values, true).expect("built-in table is valid")
}
