//! Control-channel messages exchanged between the controller and NFEs.
//!
//! These mirror the semantics of the OpenFlow messages the engine relies on;
//! nothing here is wire-encoded.

use std::fmt;

use serde::Serialize;

use super::flow_table::{FlowModCommand, FlowRule};
use super::packet::Packet;
use crate::topo::{NodeId, PortNo, PortRef};

/// Transaction id correlating a request with its reply.
pub type Xid = u32;

/// Monotone per-port counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PortCounters {
    pub tx_bytes: u64,
    pub tx_pkts: u64,
    pub tx_dropped: u64,
    pub tx_errors: u64,
    pub rx_bytes: u64,
    pub rx_pkts: u64,
    pub rx_dropped: u64,
    pub rx_errors: u64,
}

impl PortCounters {
    /// True when no field of `self` is below the same field of `earlier`.
    pub fn dominates(&self, earlier: &PortCounters) -> bool {
        self.tx_bytes >= earlier.tx_bytes
            && self.tx_pkts >= earlier.tx_pkts
            && self.tx_dropped >= earlier.tx_dropped
            && self.tx_errors >= earlier.tx_errors
            && self.rx_bytes >= earlier.rx_bytes
            && self.rx_pkts >= earlier.rx_pkts
            && self.rx_dropped >= earlier.rx_dropped
            && self.rx_errors >= earlier.rx_errors
    }
}

/// Treatment of a packet carried by a PacketOut.
#[derive(Clone, Debug, PartialEq)]
pub enum PacketOutAction {
    Output(PortNo),
    /// Run the packet through the NFE's flow table.
    Table,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MsgBody {
    PacketIn {
        in_port: PortNo,
        packet: Packet,
    },
    PacketOut {
        in_port: Option<PortNo>,
        packet: Packet,
        action: PacketOutAction,
    },
    FlowMod {
        command: FlowModCommand,
        rule: FlowRule,
    },
    /// `None` requests every port of the NFE.
    PortStatsRequest {
        port: Option<PortNo>,
    },
    PortStatsReply {
        stats: Vec<(PortNo, PortCounters)>,
    },
    EchoRequest,
    EchoReply,
    BarrierRequest,
    BarrierReply,
    FeaturesRequest,
    FeaturesReply {
        dpid: NodeId,
        n_ports: usize,
    },
    PortDescRequest,
    PortDescReply {
        ports: Vec<PortRef>,
    },
    /// A request the NFE could not honour (e.g. modify of a missing rule).
    Error {
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MsgKind {
    PacketIn,
    PacketOut,
    FlowMod,
    PortStatsRequest,
    PortStatsReply,
    EchoRequest,
    EchoReply,
    BarrierRequest,
    BarrierReply,
    FeaturesRequest,
    FeaturesReply,
    PortDescRequest,
    PortDescReply,
    Error,
}

impl fmt::Display for MsgKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlMsg {
    pub xid: Xid,
    pub body: MsgBody,
}

impl ControlMsg {
    pub fn new(xid: Xid, body: MsgBody) -> Self {
        ControlMsg { xid, body }
    }

    pub fn kind(&self) -> MsgKind {
        match &self.body {
            MsgBody::PacketIn { .. } => MsgKind::PacketIn,
            MsgBody::PacketOut { .. } => MsgKind::PacketOut,
            MsgBody::FlowMod { .. } => MsgKind::FlowMod,
            MsgBody::PortStatsRequest { .. } => MsgKind::PortStatsRequest,
            MsgBody::PortStatsReply { .. } => MsgKind::PortStatsReply,
            MsgBody::EchoRequest => MsgKind::EchoRequest,
            MsgBody::EchoReply => MsgKind::EchoReply,
            MsgBody::BarrierRequest => MsgKind::BarrierRequest,
            MsgBody::BarrierReply => MsgKind::BarrierReply,
            MsgBody::FeaturesRequest => MsgKind::FeaturesRequest,
            MsgBody::FeaturesReply { .. } => MsgKind::FeaturesReply,
            MsgBody::PortDescRequest => MsgKind::PortDescRequest,
            MsgBody::PortDescReply { .. } => MsgKind::PortDescReply,
            MsgBody::Error { .. } => MsgKind::Error,
        }
    }
}
