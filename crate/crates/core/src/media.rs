//! Video source model: deterministic frame sizes, GOP structure, settings
//! changes with GOP restart, MTU packetization and the relay transcoder.
//!
//! Encoding is modeled as instantaneous. A GOP of `N` frames holds one
//! keyframe `k` times larger than each of its `N - 1` delta frames, sized so
//! the GOP averages exactly the configured bitrate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rate_control::{EncodingLevel, Level};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDescriptor<S> {
    pub frame_seq: u64,
    pub size_bytes: u32,
    pub is_keyframe: bool,
    /// Keyframe that restarts the stream with fresh parameter sets.
    pub carries_headers: bool,
    pub level: Level,
    pub settings: EncodingLevel,
    /// Capture clock stamped into the picture; survives transcoding.
    pub watermark_ms: S,
    pub pts_ms: S,
}

/// Frame size in bytes for the given settings.
pub fn frame_size<S: Scalar>(settings: &EncodingLevel, is_keyframe: bool, keyframe_weight: S) -> u32 {
    let n = S::lit(settings.gop_frames as f64);
    let avg_bits = S::lit(settings.bitrate_kbps as f64) * S::lit(1000.0) / S::lit(settings.framerate_fps as f64);
    let delta_bits = avg_bits * n / (keyframe_weight + n - S::one());
    let bits = if is_keyframe {
        keyframe_weight * delta_bits
    } else {
        delta_bits
    };
    let bytes = (bits / S::lit(8.0)).round();
    bytes.to_u32().unwrap_or(u32::MAX).max(1)
}

/// Seeded multiplicative noise on frame sizes, uniform in `[1 - a, 1 + a]`.
#[derive(Debug, Clone)]
pub struct SizeJitter {
    amplitude: f64,
    rng: ChaCha8Rng,
}

impl SizeJitter {
    pub fn new(amplitude: f64, seed: u64) -> Self {
        Self {
            amplitude,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn apply(&mut self, size: u32) -> u32 {
        let u: f64 = self.rng.random();
        let factor = 1.0 + self.amplitude * (2.0 * u - 1.0);
        ((size as f64 * factor).round() as u32).max(1)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderModel<S> {
    pub current: EncodingLevel,
    pub level: Level,
    pub frames_into_gop: u32,
    pub keyframe_weight: S,
    pub next_frame_at_ms: S,
    last_frame_at_ms: Option<S>,
    headers_pending: bool,
    next_seq: u64,
    size_jitter: Option<SizeJitter>,
}

impl<S: Scalar> EncoderModel<S> {
    pub fn new(level: Level, settings: EncodingLevel, keyframe_weight: S, start_ms: S) -> Self {
        Self {
            current: settings,
            level,
            frames_into_gop: 0,
            keyframe_weight,
            next_frame_at_ms: start_ms,
            last_frame_at_ms: None,
            headers_pending: true,
            next_seq: 0,
            size_jitter: None,
        }
    }

    pub fn with_size_jitter(mut self, jitter: Option<SizeJitter>) -> Self {
        self.size_jitter = jitter;
        self
    }

    pub fn frame_interval_ms(&self) -> S {
        self.current.frame_interval_ms()
    }

    fn emit(&mut self, now_ms: S, watermark_ms: S) -> FrameDescriptor<S> {
        let is_keyframe = self.frames_into_gop == 0;
        let carries_headers = is_keyframe && self.headers_pending;
        if carries_headers {
            self.headers_pending = false;
        }
        let mut size_bytes = frame_size(&self.current, is_keyframe, self.keyframe_weight);
        if let Some(j) = self.size_jitter.as_mut() {
            size_bytes = j.apply(size_bytes);
        }
        let frame = FrameDescriptor {
            frame_seq: self.next_seq,
            size_bytes,
            is_keyframe,
            carries_headers,
            level: self.level,
            settings: self.current,
            watermark_ms,
            pts_ms: now_ms,
        };
        self.next_seq += 1;
        self.frames_into_gop = (self.frames_into_gop + 1) % self.current.gop_frames;
        self.last_frame_at_ms = Some(now_ms);
        frame
    }

    /// Emits the frame due at `now_ms` and schedules the next one.
    pub fn next_frame(&mut self, now_ms: S) -> FrameDescriptor<S> {
        let frame = self.emit(now_ms, now_ms);
        self.next_frame_at_ms = now_ms + self.frame_interval_ms();
        frame
    }

    /// Switches settings, restarting the GOP so the next frame is a keyframe
    /// with headers. The cadence follows the new framerate from the last
    /// emitted frame, never earlier than `now_ms`.
    pub fn apply_settings(&mut self, level: Level, settings: EncodingLevel, now_ms: S) {
        self.current = settings;
        self.level = level;
        self.frames_into_gop = 0;
        self.headers_pending = true;
        self.next_frame_at_ms = match self.last_frame_at_ms {
            Some(last) => (last + self.frame_interval_ms()).max(now_ms),
            None => self.next_frame_at_ms.max(now_ms),
        };
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet<S> {
    pub payload_bytes: u32,
    pub frame_seq: u64,
    pub fragment_index: u32,
    pub fragment_count: u32,
    pub send_time_ms: S,
}

/// Splits a frame into MTU-sized fragments; only the last may be short.
pub fn packetize<S: Scalar>(frame: &FrameDescriptor<S>, mtu_payload_bytes: u32) -> Vec<Packet<S>> {
    assert!(mtu_payload_bytes >= 1, "mtu payload must be at least one byte");
    let count = frame.size_bytes.div_ceil(mtu_payload_bytes);
    (0..count)
        .map(|i| {
            let payload_bytes = if i + 1 == count {
                frame.size_bytes - mtu_payload_bytes * (count - 1)
            } else {
                mtu_payload_bytes
            };
            Packet {
                payload_bytes,
                frame_seq: frame.frame_seq,
                fragment_index: i,
                fragment_count: count,
                send_time_ms: frame.pts_ms,
            }
        })
        .collect()
}

/// End-to-end latency recovered from the picture watermark.
pub fn extract_watermark<S: Scalar>(frame: &FrameDescriptor<S>, arrival_ms: S) -> S {
    let latency = arrival_ms - frame.watermark_ms;
    debug_assert!(latency >= S::zero(), "frame arrived before it was captured");
    latency
}

/// Relay-side re-encoder for the downlink leg.
///
/// Output never exceeds the incoming quality: when the target is at least as
/// good as the incoming stream, frames pass through unmodified.
#[derive(Debug, Clone)]
pub struct Transcoder<S> {
    encoder: EncoderModel<S>,
    target_level: Level,
    target: EncodingLevel,
    effective: Option<Level>,
    inputs_since_restart: u64,
    restart_pending: bool,
}

impl<S: Scalar> Transcoder<S> {
    pub fn new(target_level: Level, target: EncodingLevel, keyframe_weight: S) -> Self {
        Self {
            encoder: EncoderModel::new(target_level, target, keyframe_weight, S::zero()),
            target_level,
            target,
            effective: None,
            inputs_since_restart: 0,
            restart_pending: true,
        }
    }

    pub fn with_size_jitter(mut self, jitter: Option<SizeJitter>) -> Self {
        self.encoder = self.encoder.with_size_jitter(jitter);
        self
    }

    pub fn target(&self) -> (Level, EncodingLevel) {
        (self.target_level, self.target)
    }

    pub fn retarget(&mut self, level: Level, settings: EncodingLevel) {
        self.target_level = level;
        self.target = settings;
    }

    /// Maps one incoming frame to at most one outgoing frame.
    pub fn transcode(&mut self, frame: &FrameDescriptor<S>, now_ms: S) -> Option<FrameDescriptor<S>> {
        let passthrough = frame.level <= self.target_level;
        let (level, settings) = if passthrough {
            (frame.level, frame.settings)
        } else {
            (self.target_level, self.target)
        };
        if self.effective != Some(level) {
            self.effective = Some(level);
            self.encoder.apply_settings(level, settings, now_ms);
            self.inputs_since_restart = 0;
            self.restart_pending = true;
        }

        if passthrough {
            if !self.restart_pending || frame.carries_headers {
                self.restart_pending = false;
                return Some(*frame);
            }
            // Re-encode one keyframe so the receiver can switch cleanly.
            self.restart_pending = false;
            self.encoder.frames_into_gop = 0;
            return Some(self.encoder.emit(now_ms, frame.watermark_ms));
        }

        let ratio = (frame.settings.framerate_fps / settings.framerate_fps).max(1) as u64;
        let keep = self.inputs_since_restart.is_multiple_of(ratio);
        self.inputs_since_restart += 1;
        if !keep {
            return None;
        }
        self.restart_pending = false;
        Some(self.encoder.emit(now_ms, frame.watermark_ms))
    }
}
