//! Cognitive routing engine (CRE) for software-defined networks.
//!
//! The engine finds QoS paths with random neural networks trained by
//! reinforcement learning ([`cram`]), keeps monitoring traffic low with a
//! cache-aware measurement module ([`nmm`]) and installs paths with
//! loss-free VLAN-flip flow-rule updates ([`ptm`]). [`engine`] ties them
//! together on top of an emulated OpenFlow-style network ([`simnet`]);
//! [`oracle`] is the global-monitoring baseline and [`scenario`] runs the
//! two reference experiments.

pub mod cram;
pub mod engine;
pub mod error;
pub mod nmm;
pub mod oracle;
pub mod ptm;
pub mod scenario;
pub mod simnet;
pub mod time;
pub mod topo;

pub use error::{ConfigError, CramError, PtmError, ReportError, SimError, TopoError};
pub use time::SimTime;
pub use topo::{HostId, LinkId, NodeId, Path, PortNo, Topology};
