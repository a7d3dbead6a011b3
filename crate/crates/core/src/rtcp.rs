//! Receiver-side feedback: interarrival jitter, round-trip time from the
//! LSR/DLSR echo, available-bandwidth estimation and periodic reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate_control::PathMetrics;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum RtcpError {
    #[error("malformed report: now {now_ms} ms precedes lsr {lsr_ms} ms + dlsr {dlsr_ms} ms")]
    ClockInconsistency { now_ms: f64, lsr_ms: f64, dlsr_ms: f64 },
    #[error("unknown estimator strategy `{0}` (expected oracle or delay-gradient)")]
    UnknownStrategy(String),
    #[error("invalid estimator: {0}")]
    InvalidEstimator(&'static str),
}

/// Which leg of the session a report measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathId {
    Upload,
    Download,
    Direct,
}

impl PathId {
    pub fn as_str(self) -> &'static str {
        match self {
            PathId::Upload => "upload",
            PathId::Download => "download",
            PathId::Direct => "direct",
        }
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// RTP interarrival jitter state, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JitterState<S> {
    pub j_ms: S,
    pub last_transit_ms: Option<S>,
}

impl<S: Scalar> JitterState<S> {
    pub fn new() -> Self {
        Self {
            j_ms: S::zero(),
            last_transit_ms: None,
        }
    }

    /// Feeds one packet's transit time (arrival minus send timestamp).
    pub fn update(&mut self, transit_ms: S) {
        if let Some(last) = self.last_transit_ms {
            let d = (transit_ms - last).abs();
            self.j_ms = self.j_ms + (d - self.j_ms) / S::lit(16.0);
        }
        self.last_transit_ms = Some(transit_ms);
    }
}

pub fn update_jitter<S: Scalar>(mut state: JitterState<S>, transit_ms: S) -> JitterState<S> {
    state.update(transit_ms);
    state
}

/// Round trip from an echoed sender-report timestamp: `now - lsr - dlsr`.
pub fn compute_rtt<S: Scalar>(now_ms: S, lsr_ms: S, dlsr_ms: S) -> Result<S, RtcpError> {
    let rtt = now_ms - lsr_ms - dlsr_ms;
    if rtt < S::zero() {
        return Err(RtcpError::ClockInconsistency {
            now_ms: now_ms.as_f64(),
            lsr_ms: lsr_ms.as_f64(),
            dlsr_ms: dlsr_ms.as_f64(),
        });
    }
    Ok(rtt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorStrategy {
    /// Reads the emulator's bottleneck capacity.
    Oracle,
    /// Multiplicative decrease on loss or queuing delay, gentle increase otherwise.
    DelayGradient,
}

impl EstimatorStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorStrategy::Oracle => "oracle",
            EstimatorStrategy::DelayGradient => "delay-gradient",
        }
    }
}

impl fmt::Display for EstimatorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorStrategy {
    type Err = RtcpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(EstimatorStrategy::Oracle),
            "delay-gradient" | "delay_gradient" => Ok(EstimatorStrategy::DelayGradient),
            other => Err(RtcpError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState<S> {
    pub strategy: EstimatorStrategy,
    pub est_kbps: S,
    pub oracle_lag_ms: S,
    pub increase_factor: S,
    pub decrease_factor: S,
    pub queue_delay_threshold_ms: S,
    pub loss_threshold: S,
    pub est_cap_kbps: S,
}

impl<S: Scalar> EstimatorState<S> {
    pub fn new(strategy: EstimatorStrategy, initial_kbps: S) -> Self {
        Self {
            strategy,
            est_kbps: initial_kbps,
            oracle_lag_ms: S::zero(),
            increase_factor: S::lit(1.08),
            decrease_factor: S::lit(0.85),
            queue_delay_threshold_ms: S::lit(50.0),
            loss_threshold: S::lit(0.02),
            est_cap_kbps: S::lit(200_000.0),
        }
    }

    pub fn validate(&self) -> Result<(), RtcpError> {
        if !(S::zero() < self.decrease_factor && self.decrease_factor < S::one()) {
            return Err(RtcpError::InvalidEstimator("decrease_factor must lie in (0, 1)"));
        }
        if !(self.increase_factor > S::one()) {
            return Err(RtcpError::InvalidEstimator("increase_factor must exceed 1"));
        }
        if !(self.est_kbps > S::zero() && self.est_kbps <= self.est_cap_kbps) {
            return Err(RtcpError::InvalidEstimator("initial estimate must lie in (0, cap]"));
        }
        if self.oracle_lag_ms < S::zero() || self.queue_delay_threshold_ms < S::zero() {
            return Err(RtcpError::InvalidEstimator(
                "lag and delay threshold must be non-negative",
            ));
        }
        Ok(())
    }

    /// Updates the estimate from one report interval's observations.
    ///
    /// `sample.true_capacity_kbps` is only read by the oracle and must already
    /// be sampled `oracle_lag_ms` in the past; `None` means an uncapped path.
    pub fn estimate(&mut self, sample: &BandwidthSample<S>) {
        match self.strategy {
            EstimatorStrategy::Oracle => {
                self.est_kbps = match sample.true_capacity_kbps {
                    Some(c) => c.min(self.est_cap_kbps),
                    None => self.est_cap_kbps,
                };
            }
            EstimatorStrategy::DelayGradient => {
                let congested =
                    sample.loss_fraction > self.loss_threshold || sample.queue_delay_ms > self.queue_delay_threshold_ms;
                if congested {
                    // Nothing arrived: decay the previous estimate instead of collapsing to zero.
                    let base = if sample.throughput_kbps > S::zero() {
                        sample.throughput_kbps
                    } else {
                        self.est_kbps
                    };
                    self.est_kbps = self.decrease_factor * base;
                } else {
                    self.est_kbps = (self.est_kbps * self.increase_factor)
                        .max(sample.throughput_kbps)
                        .min(self.est_cap_kbps);
                }
            }
        }
    }
}

/// One report interval's observations at the media receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthSample<S> {
    pub throughput_kbps: S,
    pub queue_delay_ms: S,
    pub loss_fraction: S,
    pub true_capacity_kbps: Option<S>,
}

pub fn estimate_bandwidth<S: Scalar>(mut state: EstimatorState<S>, sample: &BandwidthSample<S>) -> EstimatorState<S> {
    state.estimate(sample);
    state
}

/// Fixed-period report clock. The first report is due one period after start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportScheduler<S> {
    pub period_ms: S,
    pub next_due_ms: S,
}

impl<S: Scalar> ReportScheduler<S> {
    pub fn new(period_ms: S, start_ms: S) -> Self {
        Self {
            period_ms,
            next_due_ms: start_ms + period_ms,
        }
    }

    /// Returns the current due time and moves to the next one.
    pub fn advance(&mut self) -> S {
        let due = self.next_due_ms;
        self.next_due_ms = due + self.period_ms;
        due
    }

    /// Number of reports emitted over `[start, start + duration]`.
    pub fn count_within(period_ms: S, duration_ms: S) -> u64 {
        (duration_ms / period_ms).floor().to_u64().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverReport<S> {
    pub metrics: PathMetrics<S>,
    pub path: PathId,
    pub seq: u64,
    pub loss_fraction: S,
    /// Send time of the last sender report heard, if any.
    pub lsr_ms: Option<S>,
    /// Time the receiver held that sender report before replying.
    pub dlsr_ms: S,
}

impl<S: Scalar> ReceiverReport<S> {
    pub fn with_echo(mut self, lsr_ms: Option<S>, dlsr_ms: S) -> Self {
        self.lsr_ms = lsr_ms;
        self.dlsr_ms = dlsr_ms;
        self
    }

    /// Fills in the round trip once the report reaches the media sender.
    /// Without an echoed sender report the RTT stays at its current value.
    pub fn complete_rtt(&mut self, now_ms: S) -> Result<(), RtcpError> {
        if let Some(lsr) = self.lsr_ms {
            self.metrics.rtt_ms = compute_rtt(now_ms, lsr, self.dlsr_ms)?;
        }
        Ok(())
    }
}

/// Packages the receiver's current view into a report with sequence `seq + 1`.
pub fn build_report<S: Scalar>(
    jitter: &JitterState<S>,
    estimator: &EstimatorState<S>,
    rtt_ms: S,
    loss_fraction: S,
    path: PathId,
    now_ms: S,
    seq: u64,
) -> ReceiverReport<S> {
    ReceiverReport {
        metrics: PathMetrics::new(estimator.est_kbps, rtt_ms, jitter.j_ms, now_ms),
        path,
        seq: seq + 1,
        loss_fraction,
        lsr_ms: None,
        dlsr_ms: S::zero(),
    }
}
