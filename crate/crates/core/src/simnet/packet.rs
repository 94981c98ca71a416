use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;
use crate::topo::{HostId, MacAddr, NodeId};

/// Ethertype carried by link-delay probe frames.
pub const PROBE_ETHERTYPE: u16 = 0x07C3;

/// Identifies a flow: the subset of header fields a rule matches on.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_host: HostId,
    pub dst_host: HostId,
    pub flow_id: u32,
}

impl FlowKey {
    pub fn new(src: &str, dst: &str, flow_id: u32) -> Self {
        FlowKey { src_host: HostId::new(src), dst_host: HostId::new(dst), flow_id }
    }

    /// The same conversation in the opposite direction.
    pub fn reversed(&self) -> Self {
        FlowKey { src_host: self.dst_host.clone(), dst_host: self.src_host.clone(), flow_id: self.flow_id }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}#{}", self.src_host, self.dst_host, self.flow_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PacketId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AppData {
    Raw,
    PingRequest { seq: u64 },
    PingReply { seq: u64, request_sent: SimTime },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeFrame {
    pub ethertype: u16,
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    /// Correlates the frame with the measurement that emitted it.
    pub token: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Data { flow: FlowKey, app: AppData },
    Probe(ProbeFrame),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub id: PacketId,
    pub size_bytes: u32,
    pub vlan: Option<u16>,
    pub payload: Payload,
    pub injected_at: SimTime,
    /// NFEs traversed so far, in order.
    pub visited: Vec<NodeId>,
}

impl Packet {
    pub fn flow(&self) -> Option<&FlowKey> {
        match &self.payload {
            Payload::Data { flow, .. } => Some(flow),
            Payload::Probe(_) => None,
        }
    }

    pub fn probe(&self) -> Option<&ProbeFrame> {
        match &self.payload {
            Payload::Probe(p) => Some(p),
            Payload::Data { .. } => None,
        }
    }
}
