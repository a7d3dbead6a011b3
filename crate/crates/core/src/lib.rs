//! Deterministic simulation lab for report-driven three-level quality
//! adaptation of a video stream sent directly or through a relay.
//!
//! The core is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix it to `f64`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod media;
pub mod metrics;
pub mod netem;
pub mod rate_control;
pub mod rtcp;
pub mod runner;
pub mod scalar;
pub mod sim;

pub use rate_control::{Border, EncodingLadder, EncodingLevel, Level};
pub use scalar::Scalar;
pub use sim::{LinkId, NodeId, ShapedPath, TopologyKind};

pub type PathMetrics = rate_control::PathMetrics<f64>;
pub type Thresholds = rate_control::Thresholds<f64>;
pub type RateController = rate_control::RateController<f64>;
pub type JitterState = rtcp::JitterState<f64>;
pub type EstimatorState = rtcp::EstimatorState<f64>;
pub type ReceiverReport = rtcp::ReceiverReport<f64>;
pub type FrameDescriptor = media::FrameDescriptor<f64>;
pub type EncoderModel = media::EncoderModel<f64>;
pub type Transcoder = media::Transcoder<f64>;
pub type ShapedLink<P> = netem::ShapedLink<f64, P>;
pub type ShapingSchedule = netem::ShapingSchedule<f64>;
pub type EventTrace = sim::EventTrace<f64>;
pub type Simulation = sim::Simulation<f64>;
