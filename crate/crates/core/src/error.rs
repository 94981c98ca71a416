use thiserror::Error;

use crate::topo::{NodeId, PortNo};

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("cannot read {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("topology parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("topology parse error: node list is empty")]
    Empty,
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("duplicate port {1} on {0}")]
    DuplicatePort(NodeId, PortNo),
    #[error("duplicate host {0}")]
    DuplicateHost(String),
    #[error("reference to undeclared port {0}:{1}")]
    DanglingPort(NodeId, PortNo),
    #[error("port {0}:{1} used by more than one link end or host")]
    PortInUse(NodeId, PortNo),
    #[error("duplicate link {0}:{1} -> {2}:{3}")]
    DuplicateLink(NodeId, PortNo, NodeId, PortNo),
    #[error("non-positive capacity on {0}")]
    NonPositiveCapacity(String),
    #[error("link loops back to {0}")]
    SelfLoop(NodeId),
    #[error("invalid delay {0} ms")]
    BadDelay(f64),
    #[error("link {0} -> {1} has no delay and its endpoints lack coordinates")]
    MissingDelay(NodeId, NodeId),
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    BadCoord { lat: f64, lon: f64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("cannot schedule at {at} ns, clock is already at {now} ns")]
    ScheduleInPast { at: u64, now: u64 },
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown port {0}:{1}")]
    UnknownPort(NodeId, PortNo),
    #[error("no matching rule on {0} for modify/delete")]
    NoSuchRule(NodeId),
    #[error("invalid rule: {0}")]
    InvalidRule(&'static str),
    #[error("control channel to {0} is down")]
    Disconnected(NodeId),
    #[error("link {0}:{1} is down or missing")]
    LinkDown(NodeId, PortNo),
    #[error("timed out waiting for {0}")]
    Timeout(NodeId),
}

#[derive(Debug, Error, PartialEq)]
pub enum CramError {
    #[error("an RNN needs at least one active port")]
    NoPorts,
    #[error("potentials did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("every output port is forbidden")]
    AllForbidden,
    #[error("no simple path from {0} to {1}")]
    NoPath(NodeId, NodeId),
    #[error("objective must be positive, got {0}")]
    NonPositiveObjective(f64),
    #[error("neuron index {0} out of range")]
    BadNeuron(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum PtmError {
    #[error("path has {0} NFE(s); at least two are required")]
    PathTooShort(usize),
    #[error("new path equals the installed one")]
    SamePath,
    #[error("hosts are not attached to the same NFE")]
    NotColocated,
    #[error("path does not start/end at the hosts' NFEs")]
    Endpoints,
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("cannot build a report from empty logs")]
    EmptyLogs,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{name} = {value} is outside {range}")]
    OutOfRange { name: &'static str, value: f64, range: &'static str },
}
