//! Session topologies, node/link wiring and report routing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netem::{Direction, LatencyScope};
use crate::rtcp::PathId;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TopologyKind {
    /// Peers exchange media and feedback end to end.
    #[serde(rename = "direct")]
    Direct,
    /// The relay terminates both legs and re-encodes for the downlink.
    #[serde(rename = "transcoding")]
    TranscodingRelay,
    /// The relay forwards media and relays downlink feedback to the sender.
    #[serde(rename = "reporting")]
    ReportingRelay,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [
        TopologyKind::Direct,
        TopologyKind::TranscodingRelay,
        TopologyKind::ReportingRelay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopologyKind::Direct => "direct",
            TopologyKind::TranscodingRelay => "transcoding",
            TopologyKind::ReportingRelay => "reporting",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TopologyKind::Direct => "Direct",
            TopologyKind::TranscodingRelay => "TranscodingRelay",
            TopologyKind::ReportingRelay => "ReportingRelay",
        }
    }

    pub fn is_relay(self) -> bool {
        self != TopologyKind::Direct
    }

    /// Path shaped when the scenario does not say otherwise.
    pub fn default_shaped_path(self) -> ShapedPath {
        match self {
            // The series path is shaped once, on the sender's hop.
            TopologyKind::Direct => ShapedPath::Uplink,
            _ => ShapedPath::Downlink,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(TopologyKind::Direct),
            "transcoding" => Ok(TopologyKind::TranscodingRelay),
            "reporting" => Ok(TopologyKind::ReportingRelay),
            other => Err(format!(
                "unknown topology `{other}` (expected direct, transcoding or reporting)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapedPath {
    Uplink,
    Downlink,
    Both,
}

impl ShapedPath {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapedPath::Uplink => "uplink",
            ShapedPath::Downlink => "downlink",
            ShapedPath::Both => "both",
        }
    }

    pub fn links(self) -> &'static [LinkId] {
        match self {
            ShapedPath::Uplink => &[LinkId::Uplink],
            ShapedPath::Downlink => &[LinkId::Downlink],
            ShapedPath::Both => &[LinkId::Uplink, LinkId::Downlink],
        }
    }
}

impl FromStr for ShapedPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uplink" => Ok(ShapedPath::Uplink),
            "downlink" => Ok(ShapedPath::Downlink),
            "both" => Ok(ShapedPath::Both),
            other => Err(format!(
                "unknown shaped path `{other}` (expected uplink, downlink or both)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Sender,
    Relay,
    Receiver,
}

impl NodeId {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeId::Sender => "sender",
            NodeId::Relay => "relay",
            NodeId::Receiver => "receiver",
        }
    }
}

impl FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sender" => Ok(NodeId::Sender),
            "relay" => Ok(NodeId::Relay),
            "receiver" => Ok(NodeId::Receiver),
            other => Err(format!("unknown node `{other}`")),
        }
    }
}

/// Access links: the sender's UE to the relay, and the relay to the receiver's UE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkId {
    Uplink,
    Downlink,
}

impl LinkId {
    pub fn idx(self) -> usize {
        match self {
            LinkId::Uplink => 0,
            LinkId::Downlink => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LinkId::Uplink => "uplink",
            LinkId::Downlink => "downlink",
        }
    }

    /// Added latency models a delay rule on the UE's egress: the sender's
    /// outgoing media on the uplink, the receiver's outgoing feedback on the
    /// downlink.
    pub fn latency_scope(self) -> LatencyScope {
        match self {
            LinkId::Uplink => LatencyScope::Forward,
            LinkId::Downlink => LatencyScope::Reverse,
        }
    }

    /// Node reached by a packet leaving this link in `dir`.
    pub fn far_end(self, dir: Direction) -> NodeId {
        match (self, dir) {
            (LinkId::Uplink, Direction::Forward) => NodeId::Relay,
            (LinkId::Uplink, Direction::Reverse) => NodeId::Sender,
            (LinkId::Downlink, Direction::Forward) => NodeId::Receiver,
            (LinkId::Downlink, Direction::Reverse) => NodeId::Relay,
        }
    }
}

impl FromStr for LinkId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uplink" => Ok(LinkId::Uplink),
            "downlink" => Ok(LinkId::Downlink),
            other => Err(format!("unknown link `{other}`")),
        }
    }
}

/// First hop from `from` towards `to`.
pub fn first_hop(from: NodeId, to: NodeId) -> (LinkId, Direction) {
    match (from, to) {
        (NodeId::Sender, _) => (LinkId::Uplink, Direction::Forward),
        (NodeId::Receiver, _) => (LinkId::Downlink, Direction::Reverse),
        (NodeId::Relay, NodeId::Sender) => (LinkId::Uplink, Direction::Reverse),
        (NodeId::Relay, _) => (LinkId::Downlink, Direction::Forward),
    }
}

/// The media-carrying leg a feedback session measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSpec {
    pub path: PathId,
    pub media_sender: NodeId,
    pub media_receiver: NodeId,
}

impl SessionSpec {
    pub fn links(&self) -> &'static [LinkId] {
        match self.path {
            PathId::Direct => &[LinkId::Uplink, LinkId::Downlink],
            PathId::Upload => &[LinkId::Uplink],
            PathId::Download => &[LinkId::Downlink],
        }
    }
}

pub fn sessions(topology: TopologyKind) -> Vec<SessionSpec> {
    match topology {
        TopologyKind::Direct => vec![SessionSpec {
            path: PathId::Direct,
            media_sender: NodeId::Sender,
            media_receiver: NodeId::Receiver,
        }],
        _ => vec![
            SessionSpec {
                path: PathId::Upload,
                media_sender: NodeId::Sender,
                media_receiver: NodeId::Relay,
            },
            SessionSpec {
                path: PathId::Download,
                media_sender: NodeId::Relay,
                media_receiver: NodeId::Receiver,
            },
        ],
    }
}

/// What happens to a completed receiver report at the node it reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportRoute {
    /// Feeds the sender's controller as is.
    SenderController,
    /// Feeds the sender's controller combined with the latest report of the other leg.
    SenderCombined,
    /// Feeds the relay's controller, which retargets the transcoder.
    RelayController,
    /// Wrapped into a data-channel message towards the sender.
    ForwardToSender,
    /// Relay without transcoding: nothing can act on downlink feedback.
    Ignore,
}

pub fn dispatch_report(
    topology: TopologyKind,
    transcoding: bool,
    path: PathId,
    at: NodeId,
) -> Result<ReportRoute, SimError> {
    let route = match (topology, path, at) {
        (TopologyKind::Direct, PathId::Direct, NodeId::Sender) => ReportRoute::SenderController,
        (TopologyKind::TranscodingRelay, PathId::Upload, NodeId::Sender) => ReportRoute::SenderController,
        (TopologyKind::TranscodingRelay, PathId::Download, NodeId::Relay) => {
            if transcoding {
                ReportRoute::RelayController
            } else {
                ReportRoute::Ignore
            }
        }
        (TopologyKind::ReportingRelay, PathId::Upload, NodeId::Sender) => ReportRoute::SenderCombined,
        (TopologyKind::ReportingRelay, PathId::Download, NodeId::Relay) => ReportRoute::ForwardToSender,
        _ => {
            return Err(SimError::Wiring(format!(
                "{} report delivered to {} in {} topology",
                path,
                at.as_str(),
                topology
            )))
        }
    };
    Ok(route)
}

/// Controller node that observes shaping on `link`, if any.
pub fn observer(topology: TopologyKind, transcoding: bool, link: LinkId) -> Option<NodeId> {
    match (topology, link) {
        (TopologyKind::TranscodingRelay, LinkId::Downlink) => transcoding.then_some(NodeId::Relay),
        _ => Some(NodeId::Sender),
    }
}
