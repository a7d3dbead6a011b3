//! Three-level adaptive rate control.
//!
//! Every feedback sample is classified as [`Level::Good`], [`Level::Mid`] or
//! [`Level::Poor`] against two threshold borders, and the level selects an
//! entry of the [`EncodingLadder`]. Bandwidth is "higher is better", RTT and
//! jitter are "lower is better". A value exactly on the good border counts as
//! good; poor requires a strict violation of the poor border.
//!
//! The metric type is generic: anything ordered with basic arithmetic works,
//! so the same code runs on `f32`, `f64` or exact rationals.

use std::fmt;
use std::str::FromStr;

use num_traits::Num;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum RateControlError {
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(&'static str),
    #[error("invalid encoding ladder: {0}")]
    InvalidLadder(String),
    #[error("unknown level `{0}` (expected good, mid or poor)")]
    UnknownLevel(String),
}

/// Quality level. Ordered `Poor < Mid < Good`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Poor,
    Mid,
    Good,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Good, Level::Mid, Level::Poor];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Good => "Good",
            Level::Mid => "Mid",
            Level::Poor => "Poor",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = RateControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "good" => Ok(Level::Good),
            "mid" => Ok(Level::Mid),
            "poor" => Ok(Level::Poor),
            _ => Err(RateControlError::UnknownLevel(s.to_string())),
        }
    }
}

/// One feedback sample: available bandwidth, round-trip time and jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathMetrics<T> {
    pub bandwidth_kbps: T,
    pub rtt_ms: T,
    pub jitter_ms: T,
    pub sampled_at_ms: T,
}

#[allow(clippy::eq_op)]
fn finite_non_negative<T: Copy + PartialOrd + Num>(v: T) -> bool {
    // `v - v` is NaN for infinities and NaN, so this also rejects non-finite floats.
    v >= T::zero() && v - v == T::zero()
}

impl<T: Copy + PartialOrd + Num> PathMetrics<T> {
    pub fn new(bandwidth_kbps: T, rtt_ms: T, jitter_ms: T, sampled_at_ms: T) -> Self {
        Self {
            bandwidth_kbps,
            rtt_ms,
            jitter_ms,
            sampled_at_ms,
        }
    }

    /// All three metrics finite and non-negative.
    pub fn is_valid(&self) -> bool {
        finite_non_negative(self.bandwidth_kbps)
            && finite_non_negative(self.rtt_ms)
            && finite_non_negative(self.jitter_ms)
    }
}

/// One threshold border.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Border<T> {
    #[serde(rename = "bw")]
    pub bandwidth_kbps: T,
    #[serde(rename = "rtt")]
    pub rtt_ms: T,
    #[serde(rename = "jitter")]
    pub jitter_ms: T,
}

impl<T> Border<T> {
    pub fn new(bandwidth_kbps: T, rtt_ms: T, jitter_ms: T) -> Self {
        Self {
            bandwidth_kbps,
            rtt_ms,
            jitter_ms,
        }
    }

    pub fn map<U>(self, f: impl Fn(T) -> U) -> Border<U> {
        Border::new(f(self.bandwidth_kbps), f(self.rtt_ms), f(self.jitter_ms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds<T> {
    pub good_mid: Border<T>,
    pub mid_poor: Border<T>,
}

impl<T> Thresholds<T> {
    /// Converts both borders to another number type.
    pub fn map<U>(self, f: impl Fn(T) -> U) -> Thresholds<U> {
        Thresholds {
            good_mid: self.good_mid.map(&f),
            mid_poor: self.mid_poor.map(&f),
        }
    }
}

impl<T: Copy + PartialOrd> Thresholds<T> {
    pub fn new(good_mid: Border<T>, mid_poor: Border<T>) -> Result<Self, RateControlError> {
        let t = Self { good_mid, mid_poor };
        t.validate()?;
        Ok(t)
    }

    /// The good border must be strictly better than the poor border on every
    /// metric, otherwise "all good" and "any poor" could hold together.
    pub fn validate(&self) -> Result<(), RateControlError> {
        if !(self.good_mid.bandwidth_kbps > self.mid_poor.bandwidth_kbps) {
            return Err(RateControlError::InvalidThresholds(
                "good_mid.bw must exceed mid_poor.bw",
            ));
        }
        if !(self.good_mid.rtt_ms < self.mid_poor.rtt_ms) {
            return Err(RateControlError::InvalidThresholds(
                "good_mid.rtt must be below mid_poor.rtt",
            ));
        }
        if !(self.good_mid.jitter_ms < self.mid_poor.jitter_ms) {
            return Err(RateControlError::InvalidThresholds(
                "good_mid.jitter must be below mid_poor.jitter",
            ));
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Thresholds<S> {
    /// Good/Mid border (10000 kbps, 90 ms, 2 ms), Mid/Poor border (5000 kbps, 180 ms, 8 ms).
    fn default() -> Self {
        Self {
            good_mid: Border::new(S::lit(10_000.0), S::lit(90.0), S::lit(2.0)),
            mid_poor: Border::new(S::lit(5_000.0), S::lit(180.0), S::lit(8.0)),
        }
    }
}

/// Encoder operating point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingLevel {
    pub bitrate_kbps: u32,
    pub framerate_fps: u32,
    pub width_px: u32,
    pub height_px: u32,
    pub gop_frames: u32,
}

impl EncodingLevel {
    pub const fn new(bitrate_kbps: u32, framerate_fps: u32, width_px: u32, height_px: u32, gop_frames: u32) -> Self {
        Self {
            bitrate_kbps,
            framerate_fps,
            width_px,
            height_px,
            gop_frames,
        }
    }

    pub fn validate(&self) -> Result<(), RateControlError> {
        let bad = |m: &str| Err(RateControlError::InvalidLadder(m.to_string()));
        if self.bitrate_kbps == 0 || self.framerate_fps == 0 {
            return bad("bitrate and framerate must be positive");
        }
        if self.width_px == 0 || self.height_px == 0 {
            return bad("resolution must be positive");
        }
        if !self.width_px.is_multiple_of(2) || !self.height_px.is_multiple_of(2) {
            return bad("width and height must be even");
        }
        if self.gop_frames == 0 {
            return bad("gop_frames must be at least 1");
        }
        Ok(())
    }

    /// Milliseconds between frames.
    pub fn frame_interval_ms<S: Scalar>(&self) -> S {
        S::lit(1000.0) / S::lit(self.framerate_fps as f64)
    }
}

impl fmt::Display for EncodingLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} kbps, {} fps, {}x{}, GOP {}",
            self.bitrate_kbps, self.framerate_fps, self.width_px, self.height_px, self.gop_frames
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingLadder {
    pub good: EncodingLevel,
    pub mid: EncodingLevel,
    pub poor: EncodingLevel,
}

impl Default for EncodingLadder {
    fn default() -> Self {
        Self {
            good: EncodingLevel::new(4000, 30, 1920, 1080, 5),
            mid: EncodingLevel::new(2200, 15, 1920, 1080, 7),
            poor: EncodingLevel::new(700, 5, 640, 360, 5),
        }
    }
}

impl EncodingLadder {
    pub fn validate(&self) -> Result<(), RateControlError> {
        for level in [&self.good, &self.mid, &self.poor] {
            level.validate()?;
        }
        let bad = |m: &str| Err(RateControlError::InvalidLadder(m.to_string()));
        if !(self.good.bitrate_kbps > self.mid.bitrate_kbps && self.mid.bitrate_kbps > self.poor.bitrate_kbps) {
            return bad("bitrates must strictly decrease from good to poor");
        }
        if !(self.good.framerate_fps >= self.mid.framerate_fps && self.mid.framerate_fps >= self.poor.framerate_fps) {
            return bad("framerates must not increase from good to poor");
        }
        if self.poor.width_px > self.good.width_px || self.poor.height_px > self.good.height_px {
            return bad("poor resolution must not exceed good resolution");
        }
        Ok(())
    }

    pub fn get(&self, level: Level) -> EncodingLevel {
        level_params(level, self)
    }
}

pub fn level_params(level: Level, ladder: &EncodingLadder) -> EncodingLevel {
    match level {
        Level::Good => ladder.good,
        Level::Mid => ladder.mid,
        Level::Poor => ladder.poor,
    }
}

fn all_good<T: Copy + PartialOrd>(m: &PathMetrics<T>, b: &Border<T>) -> bool {
    m.bandwidth_kbps >= b.bandwidth_kbps && m.rtt_ms <= b.rtt_ms && m.jitter_ms <= b.jitter_ms
}

fn any_poor<T: Copy + PartialOrd>(m: &PathMetrics<T>, b: &Border<T>) -> bool {
    m.bandwidth_kbps < b.bandwidth_kbps || m.rtt_ms > b.rtt_ms || m.jitter_ms > b.jitter_ms
}

pub fn classify<T: Copy + PartialOrd>(metrics: &PathMetrics<T>, thresholds: &Thresholds<T>) -> Level {
    if all_good(metrics, &thresholds.good_mid) {
        Level::Good
    } else if any_poor(metrics, &thresholds.mid_poor) {
        Level::Poor
    } else {
        Level::Mid
    }
}

fn worse<T: Copy + PartialOrd>(lower_is_better: bool, a: T, b: T) -> T {
    let pick_a = if lower_is_better { a >= b } else { a <= b };
    if pick_a {
        a
    } else {
        b
    }
}

/// Componentwise worst case of two samples.
pub fn combine<T: Copy + PartialOrd>(upload: &PathMetrics<T>, download: &PathMetrics<T>) -> PathMetrics<T> {
    PathMetrics {
        bandwidth_kbps: worse(false, upload.bandwidth_kbps, download.bandwidth_kbps),
        rtt_ms: worse(true, upload.rtt_ms, download.rtt_ms),
        jitter_ms: worse(true, upload.jitter_ms, download.jitter_ms),
        sampled_at_ms: worse(true, upload.sampled_at_ms, download.sampled_at_ms),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState<T> {
    pub current_level: Level,
    pub last_decision_at_ms: T,
    pub hold_down_ms: T,
}

impl<T: Copy + PartialOrd + Num> ControllerState<T> {
    pub fn new(initial: Level, start_ms: T, hold_down_ms: T) -> Self {
        Self {
            current_level: initial,
            last_decision_at_ms: start_ms,
            hold_down_ms,
        }
    }
}

/// Runs one controller step for a freshly received report.
///
/// Returns the new level and its encoder settings when the level changes;
/// the state is only touched in that case.
pub fn decide<T: Copy + PartialOrd + Num>(
    state: &mut ControllerState<T>,
    metrics: &PathMetrics<T>,
    thresholds: &Thresholds<T>,
    ladder: &EncodingLadder,
    now_ms: T,
) -> Option<(Level, EncodingLevel)> {
    debug_assert!(now_ms >= state.last_decision_at_ms);
    let target = classify(metrics, thresholds);
    if target == state.current_level {
        return None;
    }
    if now_ms - state.last_decision_at_ms < state.hold_down_ms {
        return None;
    }
    state.current_level = target;
    state.last_decision_at_ms = now_ms;
    Some((target, level_params(target, ladder)))
}

/// Controller bundle owned by one adapting endpoint.
#[derive(Debug, Clone)]
pub struct RateController<T> {
    pub state: ControllerState<T>,
    pub thresholds: Thresholds<T>,
    pub ladder: EncodingLadder,
    /// Pins the level; reports are still classified but never acted on.
    pub pinned: bool,
}

impl<T: Copy + PartialOrd + Num> RateController<T> {
    pub fn new(thresholds: Thresholds<T>, ladder: EncodingLadder, state: ControllerState<T>) -> Self {
        Self {
            state,
            thresholds,
            ladder,
            pinned: false,
        }
    }

    pub fn level(&self) -> Level {
        self.state.current_level
    }

    pub fn settings(&self) -> EncodingLevel {
        self.ladder.get(self.state.current_level)
    }

    pub fn on_report(&mut self, metrics: &PathMetrics<T>, now_ms: T) -> Option<(Level, EncodingLevel)> {
        if self.pinned {
            return None;
        }
        decide(&mut self.state, metrics, &self.thresholds, &self.ladder, now_ms)
    }
}
