//! Network topology: NFEs, their ports, unidirectional links and attached hosts.
//!
//! Topologies are loaded from a JSON document (see [`Topology::from_json`]) or
//! assembled in code with [`TopologyBuilder`]. Once built they are immutable
//! apart from the per-link administrative status.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path as FsPath;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::TopoError;
use crate::time::millis;

/// Propagation speed of light in fibre, metres per second.
pub const DEFAULT_PROPAGATION_SPEED: f64 = 2.0e8;
/// Mean Earth radius used for great-circle distances, metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Shipped three-NFE triangle used by the delay-change scenario.
pub const SCENARIO1_TOPO: &str = include_str!("../data/scenario1.topo");
/// Shipped 23-PoP GEANT-like backbone.
pub const GEANT_TOPO: &str = include_str!("../data/geant.topo");

/// Data-plane identifier of an NFE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortNo(pub u32);

impl fmt::Display for PortNo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Index of a link inside its [`Topology`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HostId(pub String);

impl HostId {
    pub fn new(s: impl Into<String>) -> Self {
        HostId(s.into())
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    /// Locally administered address derived from a dpid and port number.
    pub fn derived(dpid: u64, port: u32) -> Self {
        let d = (dpid as u16).to_be_bytes();
        let p = (port as u16).to_be_bytes();
        MacAddr([0x02, 0x00, d[0], d[1], p[0], p[1]])
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(f, "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[0], b[1], b[2], b[3], b[4], b[5])
    }
}

impl FromStr for MacAddr {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 6 {
            return Err(format!("bad MAC address {s:?}"));
        }
        for (o, p) in out.iter_mut().zip(parts) {
            *o = u8::from_str_radix(p, 16).map_err(|_| format!("bad MAC address {s:?}"))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortRef {
    pub node: NodeId,
    pub port_no: PortNo,
    pub mac: MacAddr,
    pub speed_bps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkStatus {
    Up,
    Down,
}

/// A unidirectional link between two NFE ports.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub src: PortRef,
    pub dst: PortRef,
    pub capacity_bps: u64,
    pub prop_delay: Duration,
    pub status: LinkStatus,
}

impl Link {
    pub fn is_up(&self) -> bool {
        self.status == LinkStatus::Up
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HostAttachment {
    pub host_id: HostId,
    pub attach: PortRef,
    pub link_delay: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoCoord {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoord {
    pub fn new(lat: f64, lon: f64) -> Result<Self, TopoError> {
        let c = GeoCoord { lat, lon };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), TopoError> {
        if !(self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0) {
            return Err(TopoError::BadCoord { lat: self.lat, lon: self.lon });
        }
        Ok(())
    }
}

/// Great-circle distance in metres (haversine).
pub fn great_circle_m(a: GeoCoord, b: GeoCoord) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Line-of-sight propagation delay between two coordinates.
pub fn los_delay(a: GeoCoord, b: GeoCoord, v_prop: f64) -> Duration {
    debug_assert!(v_prop > 0.0);
    Duration::from_secs_f64(great_circle_m(a, b) / v_prop)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeInfo {
    pub dpid: NodeId,
    pub name: Option<String>,
    pub ports: BTreeMap<PortNo, PortRef>,
    pub coord: Option<GeoCoord>,
}

/// An ordered NFE sequence together with the links joining consecutive NFEs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub links: Vec<LinkId>,
}

impl Path {
    pub fn single(n: NodeId) -> Self {
        Path { nodes: vec![n], links: Vec::new() }
    }

    pub fn src(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.nodes.last().expect("path is never empty")
    }

    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    pub fn is_simple(&self) -> bool {
        let set: BTreeSet<_> = self.nodes.iter().collect();
        set.len() == self.nodes.len()
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.nodes.iter().map(|n| n.to_string()).collect();
        f.write_str(&names.join(">"))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeInfo>,
    links: Vec<Link>,
    hosts: Vec<HostAttachment>,
    #[serde(skip)]
    by_src_port: BTreeMap<(NodeId, PortNo), LinkId>,
    #[serde(skip)]
    by_dst_port: BTreeMap<(NodeId, PortNo), LinkId>,
}

// --- file schema -----------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    nodes: Vec<RawNode>,
    #[serde(default)]
    links: Vec<RawLink>,
    #[serde(default)]
    hosts: Vec<RawHost>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    dpid: u64,
    #[serde(default)]
    name: Option<String>,
    ports: Vec<RawPort>,
    #[serde(default)]
    coord: Option<GeoCoord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPort {
    port_no: u32,
    mac: MacAddr,
    speed_bps: u64,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct RawEnd {
    dpid: u64,
    port_no: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    src: RawEnd,
    dst: RawEnd,
    capacity_bps: u64,
    #[serde(default)]
    prop_delay_ms: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHost {
    id: String,
    attach: RawEnd,
    link_delay_ms: f64,
}

impl Topology {
    pub fn builder() -> TopologyBuilder {
        TopologyBuilder::default()
    }

    /// Reads and validates a topology file.
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self, TopoError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| TopoError::Io(path.as_ref().display().to_string(), e))?;
        Self::from_json(&text)
    }

    /// Parses a topology document. Links without `prop_delay_ms` take the
    /// line-of-sight delay between their endpoint coordinates.
    pub fn from_json(text: &str) -> Result<Self, TopoError> {
        Self::from_json_with_speed(text, DEFAULT_PROPAGATION_SPEED)
    }

    pub fn from_json_with_speed(text: &str, v_prop: f64) -> Result<Self, TopoError> {
        let raw: RawTopology = serde_json::from_str(text)?;
        if raw.nodes.is_empty() {
            return Err(TopoError::Empty);
        }
        let mut b = TopologyBuilder::default();
        for n in &raw.nodes {
            let id = NodeId(n.dpid);
            if b.nodes.contains_key(&id) {
                return Err(TopoError::DuplicateNode(id));
            }
            if let Some(c) = n.coord {
                c.validate()?;
            }
            let mut ports = BTreeMap::new();
            for p in &n.ports {
                if p.speed_bps == 0 {
                    return Err(TopoError::NonPositiveCapacity(format!("{id} port {}", p.port_no)));
                }
                let pr = PortRef { node: id, port_no: PortNo(p.port_no), mac: p.mac, speed_bps: p.speed_bps };
                if ports.insert(pr.port_no, pr).is_some() {
                    return Err(TopoError::DuplicatePort(id, pr.port_no));
                }
            }
            b.nodes.insert(id, NodeInfo { dpid: id, name: n.name.clone(), ports, coord: n.coord });
        }
        for l in &raw.links {
            let src = b.resolve(l.src.dpid, l.src.port_no)?;
            let dst = b.resolve(l.dst.dpid, l.dst.port_no)?;
            let delay = match l.prop_delay_ms {
                Some(ms) if ms >= 0.0 && ms.is_finite() => millis(ms),
                Some(ms) => return Err(TopoError::BadDelay(ms)),
                None => {
                    let (a, z) = (b.nodes[&src.node].coord, b.nodes[&dst.node].coord);
                    match (a, z) {
                        (Some(a), Some(z)) => los_delay(a, z, v_prop),
                        _ => return Err(TopoError::MissingDelay(src.node, dst.node)),
                    }
                }
            };
            b.push_link(src, dst, l.capacity_bps, delay)?;
        }
        for h in &raw.hosts {
            let attach = b.resolve(h.attach.dpid, h.attach.port_no)?;
            if !(h.link_delay_ms >= 0.0 && h.link_delay_ms.is_finite()) {
                return Err(TopoError::BadDelay(h.link_delay_ms));
            }
            b.push_host(HostId(h.id.clone()), attach, millis(h.link_delay_ms))?;
        }
        b.build()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeInfo> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeInfo> {
        self.nodes.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn hosts(&self) -> &[HostAttachment] {
        &self.hosts
    }

    pub fn host(&self, id: &HostId) -> Option<&HostAttachment> {
        self.hosts.iter().find(|h| &h.host_id == id)
    }

    /// Host attached at `(node, port)`, if any.
    pub fn host_at(&self, node: NodeId, port: PortNo) -> Option<&HostAttachment> {
        self.hosts.iter().find(|h| h.attach.node == node && h.attach.port_no == port)
    }

    pub fn link_from_port(&self, node: NodeId, port: PortNo) -> Option<LinkId> {
        self.by_src_port.get(&(node, port)).copied()
    }

    pub fn link_into_port(&self, node: NodeId, port: PortNo) -> Option<LinkId> {
        self.by_dst_port.get(&(node, port)).copied()
    }

    /// Outgoing links of `node` in port order, regardless of status.
    pub fn out_links(&self, node: NodeId) -> impl Iterator<Item = &Link> + '_ {
        self.by_src_port.range((node, PortNo(0))..=(node, PortNo(u32::MAX))).map(move |(_, id)| &self.links[id.0])
    }

    /// Lowest-port link from `a` to `b`.
    pub fn link_between(&self, a: NodeId, b: NodeId) -> Option<LinkId> {
        self.out_links(a).find(|l| l.dst.node == b).map(|l| l.id)
    }

    pub fn set_link_status(&mut self, id: LinkId, status: LinkStatus) {
        self.links[id.0].status = status;
    }

    /// Builds a [`Path`] from a node sequence using the lowest-port link
    /// between each consecutive pair.
    pub fn path_from_nodes(&self, nodes: &[NodeId]) -> Result<Path, TopoError> {
        if nodes.is_empty() {
            return Err(TopoError::Empty);
        }
        let mut links = Vec::with_capacity(nodes.len().saturating_sub(1));
        for w in nodes.windows(2) {
            links.push(self.link_between(w[0], w[1]).ok_or(TopoError::NoPath(w[0], w[1]))?);
        }
        Ok(Path { nodes: nodes.to_vec(), links })
    }

    /// Minimum-hop path over up links; ties go to the lowest next-hop dpid.
    pub fn hop_count_shortest_path(&self, s: NodeId, d: NodeId) -> Result<Path, TopoError> {
        self.hop_count_shortest_path_with(s, d, |l| l.is_up())
    }

    /// Minimum-hop path restricted to links accepted by `usable`.
    pub fn hop_count_shortest_path_with(&self, s: NodeId, d: NodeId, usable: impl Fn(&Link) -> bool) -> Result<Path, TopoError> {
        for n in [s, d] {
            if !self.nodes.contains_key(&n) {
                return Err(TopoError::UnknownNode(n));
            }
        }
        let dist = self.hop_distances_to(d, &usable);
        if !dist.contains_key(&s) {
            return Err(TopoError::NoPath(s, d));
        }
        let mut nodes = vec![s];
        let mut links = Vec::new();
        let mut cur = s;
        while cur != d {
            let want = dist[&cur] - 1;
            let next = self
                .out_links(cur)
                .filter(|l| usable(l) && dist.get(&l.dst.node) == Some(&want))
                .min_by_key(|l| (l.dst.node, l.src.port_no))
                .expect("BFS distance implies a next hop");
            links.push(next.id);
            cur = next.dst.node;
            nodes.push(cur);
        }
        Ok(Path { nodes, links })
    }

    /// Hop distance from every node to `d` along usable links.
    pub fn hop_distances_to(&self, d: NodeId, usable: impl Fn(&Link) -> bool) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::new();
        dist.insert(d, 0usize);
        let mut queue = VecDeque::from([d]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[&v];
            for id in self.in_link_ids(v) {
                let l = &self.links[id.0];
                if usable(l) && !dist.contains_key(&l.src.node) {
                    dist.insert(l.src.node, dv + 1);
                    queue.push_back(l.src.node);
                }
            }
        }
        dist
    }

    fn in_link_ids(&self, node: NodeId) -> impl Iterator<Item = LinkId> + '_ {
        self.by_dst_port.range((node, PortNo(0))..=(node, PortNo(u32::MAX))).map(|(_, id)| *id)
    }
}

/// Incremental constructor used by the file loader and by tests.
#[derive(Default)]
pub struct TopologyBuilder {
    nodes: BTreeMap<NodeId, NodeInfo>,
    links: Vec<Link>,
    hosts: Vec<HostAttachment>,
    pairs: BTreeSet<((NodeId, PortNo), (NodeId, PortNo))>,
    used_ports: BTreeSet<(NodeId, PortNo)>,
}

impl TopologyBuilder {
    pub fn node(&mut self, dpid: u64) -> &mut Self {
        let id = NodeId(dpid);
        self.nodes.entry(id).or_insert_with(|| NodeInfo { dpid: id, name: None, ports: BTreeMap::new(), coord: None });
        self
    }

    fn alloc_port(&mut self, node: NodeId, speed_bps: u64) -> PortRef {
        self.node(node.0);
        let info = self.nodes.get_mut(&node).expect("node inserted");
        let next = info.ports.keys().next_back().map_or(1, |p| p.0 + 1);
        let pr = PortRef { node, port_no: PortNo(next), mac: MacAddr::derived(node.0, next), speed_bps };
        info.ports.insert(pr.port_no, pr);
        pr
    }

    /// Adds a single directed link on freshly allocated ports.
    pub fn link(&mut self, a: u64, b: u64, delay: Duration, capacity_bps: u64) -> &mut Self {
        let src = self.alloc_port(NodeId(a), capacity_bps);
        let dst = self.alloc_port(NodeId(b), capacity_bps);
        self.push_link(src, dst, capacity_bps, delay).expect("fresh ports never collide");
        self
    }

    /// Adds a link in each direction between `a` and `b`, one port per end.
    pub fn duplex(&mut self, a: u64, b: u64, delay: Duration, capacity_bps: u64) -> &mut Self {
        let pa = self.alloc_port(NodeId(a), capacity_bps);
        let pb = self.alloc_port(NodeId(b), capacity_bps);
        self.push_link(pa, pb, capacity_bps, delay).expect("fresh ports never collide");
        self.push_link(pb, pa, capacity_bps, delay).expect("fresh ports never collide");
        self
    }

    pub fn host(&mut self, id: &str, node: u64, delay: Duration, speed_bps: u64) -> &mut Self {
        let pr = self.alloc_port(NodeId(node), speed_bps);
        self.push_host(HostId::new(id), pr, delay).expect("fresh port");
        self
    }

    fn resolve(&self, dpid: u64, port: u32) -> Result<PortRef, TopoError> {
        self.nodes
            .get(&NodeId(dpid))
            .and_then(|n| n.ports.get(&PortNo(port)))
            .copied()
            .ok_or(TopoError::DanglingPort(NodeId(dpid), PortNo(port)))
    }

    fn push_link(&mut self, src: PortRef, dst: PortRef, capacity_bps: u64, delay: Duration) -> Result<(), TopoError> {
        if capacity_bps == 0 {
            return Err(TopoError::NonPositiveCapacity(format!("link {}:{} -> {}:{}", src.node, src.port_no, dst.node, dst.port_no)));
        }
        if src.node == dst.node {
            return Err(TopoError::SelfLoop(src.node));
        }
        let key = ((src.node, src.port_no), (dst.node, dst.port_no));
        if !self.pairs.insert(key) {
            return Err(TopoError::DuplicateLink(src.node, src.port_no, dst.node, dst.port_no));
        }
        self.links.push(Link { id: LinkId(self.links.len()), src, dst, capacity_bps, prop_delay: delay, status: LinkStatus::Up });
        Ok(())
    }

    fn push_host(&mut self, host_id: HostId, attach: PortRef, link_delay: Duration) -> Result<(), TopoError> {
        if self.hosts.iter().any(|h| h.host_id == host_id) {
            return Err(TopoError::DuplicateHost(host_id.0));
        }
        if !self.used_ports.insert((attach.node, attach.port_no)) {
            return Err(TopoError::PortInUse(attach.node, attach.port_no));
        }
        self.hosts.push(HostAttachment { host_id, attach, link_delay });
        Ok(())
    }

    pub fn build(&mut self) -> Result<Topology, TopoError> {
        if self.nodes.is_empty() {
            return Err(TopoError::Empty);
        }
        let mut by_src_port = BTreeMap::new();
        let mut by_dst_port = BTreeMap::new();
        for l in &self.links {
            if by_src_port.insert((l.src.node, l.src.port_no), l.id).is_some() {
                return Err(TopoError::PortInUse(l.src.node, l.src.port_no));
            }
            if by_dst_port.insert((l.dst.node, l.dst.port_no), l.id).is_some() {
                return Err(TopoError::PortInUse(l.dst.node, l.dst.port_no));
            }
        }
        for h in &self.hosts {
            let k = (h.attach.node, h.attach.port_no);
            if by_src_port.contains_key(&k) || by_dst_port.contains_key(&k) {
                return Err(TopoError::PortInUse(k.0, k.1));
            }
        }
        Ok(Topology {
            nodes: std::mem::take(&mut self.nodes),
            links: std::mem::take(&mut self.links),
            hosts: std::mem::take(&mut self.hosts),
            by_src_port,
            by_dst_port,
        })
    }
}
