//! Discrete-event emulation of an SDN data plane and its control channel.
//!
//! A [`Network`] owns the NFEs (flow table plus port counters each), the
//! links between them, the attached hosts and a per-NFE control channel.
//! Controller logic plugs in through [`ControllerApp`]; it only ever talks
//! to NFEs with [`ControlMsg`]s that travel over the emulated channel.

mod event;
mod flow_table;
mod msg;
mod packet;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use self::event::EventQueue;
pub use self::flow_table::{fmt_actions, Action, FlowMatch, FlowModCommand, FlowRule, FlowTable, InstalledRule, ModOutcome, CRE_PRIORITY};
pub use self::msg::{ControlMsg, MsgBody, MsgKind, PacketOutAction, PortCounters, Xid};
pub use self::packet::{AppData, FlowKey, Packet, PacketId, Payload, ProbeFrame, PROBE_ETHERTYPE};

use crate::error::SimError;
use crate::time::{dur_nanos, millis, SimTime};
use crate::topo::{HostId, LinkId, LinkStatus, NodeId, PortNo, PortRef, Topology};

#[derive(Clone, Debug)]
pub struct NetConfig {
    /// One-way controller <-> NFE delay applied to every channel.
    pub ctrl_delay: Duration,
    pub seed: u64,
    pub trace: bool,
    /// Packets visiting more NFEs than this are discarded.
    pub max_hops: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { ctrl_delay: millis(2.0), seed: 0, trace: false, max_hops: 64 }
    }
}

/// Random impairments of a link; all zero (lossless) by default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LinkImpairment {
    /// Lost in flight: counted as sent, never received.
    pub loss: f64,
    /// Dropped on the transmit pipeline of the source port.
    pub tx_drop: f64,
    /// Dropped on the receive pipeline of the destination port.
    pub rx_drop: f64,
    /// Received with a frame error and discarded.
    pub rx_error: f64,
}

#[derive(Clone, Debug)]
struct LinkState {
    delay: Duration,
    status: LinkStatus,
    busy_until: SimTime,
    impair: LinkImpairment,
}

#[derive(Clone, Copy, Debug)]
struct Channel {
    down: Duration,
    up: Duration,
    connected: bool,
    last_down: SimTime,
    last_up: SimTime,
}

#[derive(Debug, Default)]
struct Switch {
    table: FlowTable,
    counters: BTreeMap<PortNo, PortCounters>,
}

/// Externally scheduled changes to the network.
#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioEvent {
    SetLinkDelay { link: LinkId, delay: Duration },
    ScaleLinkDelay { link: LinkId, factor: f64 },
    SetLinkStatus { link: LinkId, status: LinkStatus },
    SetChannel { nfe: NodeId, down: Duration, up: Duration, connected: bool },
}

/// Periodic traffic from `flow.src_host`.
#[derive(Clone, Debug)]
pub struct TrafficSpec {
    pub flow: FlowKey,
    pub start: SimTime,
    pub interval: Duration,
    pub count: u64,
    pub size_bytes: u32,
    /// Ping requests are answered by the destination host.
    pub ping: bool,
}

#[derive(Debug)]
enum Event {
    ArriveNfe { nfe: NodeId, in_port: PortNo, pkt: Packet },
    ArriveHost { host: HostId, pkt: Packet },
    ToSwitch { nfe: NodeId, msg: ControlMsg },
    ToController { from: NodeId, msg: ControlMsg },
    Timer { token: u64 },
    RuleTimeout { nfe: NodeId, rule: u64 },
    Traffic { gen: usize },
    Scenario(ScenarioEvent),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PingSample {
    /// The request direction.
    pub flow: FlowKey,
    pub seq: u64,
    pub sent: SimTime,
    pub rtt: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub packet: PacketId,
    pub flow: FlowKey,
    pub host: HostId,
    pub injected_at: SimTime,
    pub delivered_at: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PacketInRecord {
    pub time: SimTime,
    pub nfe: NodeId,
    pub packet: PacketId,
    pub flow: Option<FlowKey>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetStats {
    pub injected: u64,
    pub delivered: u64,
    pub duplicates: u64,
    pub misdelivered: u64,
    pub loops: u64,
    pub dropped_link: u64,
    pub dropped_no_route: u64,
    pub packet_ins: u64,
    pub flowmod_errors: u64,
    pub ctrl_msgs_to_switch: u64,
    pub ctrl_msgs_to_controller: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub node: String,
    pub detail: String,
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        format!("{:.6},{},{},{}", self.time.as_millis_f64(), self.kind, self.node, self.detail.replace(',', ";"))
    }
}

/// Result of running a packet through an NFE's table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForwardOutcome {
    Output(PortNo),
    PacketIn,
    Dropped,
}

/// Controller-side logic driven by the simulation.
pub trait ControllerApp {
    fn on_message(&mut self, ctl: &mut Ctl<'_>, from: NodeId, msg: ControlMsg);
    fn on_timer(&mut self, _ctl: &mut Ctl<'_>, _token: u64) {}
}

/// What a controller module needs from the network to issue requests.
pub trait Southbound {
    fn now(&self) -> SimTime;
    /// Sends `body` to `nfe` with a fresh xid and returns that xid.
    fn send(&mut self, nfe: NodeId, body: MsgBody) -> Xid;
    fn set_timer(&mut self, at: SimTime, token: u64);
    fn probe_packet(&mut self, src: PortRef, dst: PortRef) -> Packet;
}

impl Southbound for Ctl<'_> {
    fn now(&self) -> SimTime {
        Ctl::now(self)
    }

    fn send(&mut self, nfe: NodeId, body: MsgBody) -> Xid {
        Ctl::send(self, nfe, body)
    }

    fn set_timer(&mut self, at: SimTime, token: u64) {
        Ctl::set_timer(self, at, token).expect("timer in the past");
    }

    fn probe_packet(&mut self, src: PortRef, dst: PortRef) -> Packet {
        Ctl::probe_packet(self, src, dst)
    }
}

/// A controller that ignores everything.
#[derive(Default)]
pub struct NullController;

impl ControllerApp for NullController {
    fn on_message(&mut self, _: &mut Ctl<'_>, _: NodeId, _: ControlMsg) {}
}

/// The controller's handle on the network during a callback.
pub struct Ctl<'a> {
    net: &'a mut Network,
}

impl Ctl<'_> {
    pub fn now(&self) -> SimTime {
        self.net.now()
    }

    pub fn topology(&self) -> &Topology {
        &self.net.topo
    }

    pub fn next_xid(&mut self) -> Xid {
        self.net.next_xid()
    }

    /// Sends a message with a fresh xid and returns it.
    pub fn send(&mut self, nfe: NodeId, body: MsgBody) -> Xid {
        let xid = self.net.next_xid();
        self.net.controller_send(nfe, ControlMsg::new(xid, body));
        xid
    }

    pub fn send_msg(&mut self, nfe: NodeId, msg: ControlMsg) {
        self.net.controller_send(nfe, msg);
    }

    pub fn set_timer(&mut self, at: SimTime, token: u64) -> Result<(), SimError> {
        self.net.queue.schedule(at, Event::Timer { token })
    }

    /// Emulated link discovery: the inter-NFE links currently up.
    pub fn discover_links(&self) -> Vec<LinkId> {
        self.net.discover_links()
    }

    /// Fresh probe frame addressed from `src` to `dst`; its token equals its
    /// packet id.
    pub fn probe_packet(&mut self, src: PortRef, dst: PortRef) -> Packet {
        self.net.make_probe(src, dst)
    }

    pub fn note(&mut self, kind: &'static str, node: &str, detail: impl FnOnce() -> String) {
        self.net.trace(kind, node, detail);
    }
}

pub struct Network {
    topo: Topology,
    cfg: NetConfig,
    queue: EventQueue<Event>,
    rng: ChaCha8Rng,
    switches: BTreeMap<NodeId, Switch>,
    links: Vec<LinkState>,
    channels: BTreeMap<NodeId, Channel>,
    traffic: Vec<(TrafficSpec, u64)>,
    next_packet: u64,
    next_xid: Xid,
    delivered_ids: HashSet<PacketId>,
    deliveries: Vec<Delivery>,
    pings: Vec<PingSample>,
    packet_ins: Vec<PacketInRecord>,
    stats: NetStats,
    trace: Vec<TraceRecord>,
    host_index: HashMap<HostId, usize>,
}

impl Network {
    pub fn new(topo: Topology, cfg: NetConfig) -> Self {
        let mut switches = BTreeMap::new();
        let mut channels = BTreeMap::new();
        for n in topo.nodes() {
            let mut sw = Switch::default();
            for p in n.ports.keys() {
                sw.counters.insert(*p, PortCounters::default());
            }
            switches.insert(n.dpid, sw);
            channels.insert(
                n.dpid,
                Channel { down: cfg.ctrl_delay, up: cfg.ctrl_delay, connected: true, last_down: SimTime::ZERO, last_up: SimTime::ZERO },
            );
        }
        let links = topo
            .links()
            .iter()
            .map(|l| LinkState { delay: l.prop_delay, status: l.status, busy_until: SimTime::ZERO, impair: LinkImpairment::default() })
            .collect();
        let host_index = topo.hosts().iter().enumerate().map(|(i, h)| (h.host_id.clone(), i)).collect();
        Network {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            topo,
            cfg,
            queue: EventQueue::default(),
            switches,
            links,
            channels,
            traffic: Vec::new(),
            next_packet: 0,
            next_xid: 0,
            delivered_ids: HashSet::new(),
            deliveries: Vec::new(),
            pings: Vec::new(),
            packet_ins: Vec::new(),
            stats: NetStats::default(),
            trace: Vec::new(),
            host_index,
        }
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Runs `f` with a controller handle at the current instant.
    pub fn control<R>(&mut self, f: impl FnOnce(&mut Ctl<'_>) -> R) -> R {
        f(&mut Ctl { net: self })
    }

    /// Arms a controller timer.
    pub fn set_timer(&mut self, at: SimTime, token: u64) -> Result<(), SimError> {
        self.queue.schedule(at, Event::Timer { token })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn pings(&self) -> &[PingSample] {
        &self.pings
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn packet_ins(&self) -> &[PacketInRecord] {
        &self.packet_ins
    }

    pub fn trace_records(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time_ms,kind,node,detail\n");
        for r in &self.trace {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn flow_table(&self, nfe: NodeId) -> Option<&FlowTable> {
        self.switches.get(&nfe).map(|s| &s.table)
    }

    pub fn link_delay(&self, link: LinkId) -> Duration {
        self.links[link.0].delay
    }

    pub fn link_status(&self, link: LinkId) -> LinkStatus {
        self.links[link.0].status
    }

    pub fn set_link_delay(&mut self, link: LinkId, delay: Duration) {
        self.links[link.0].delay = delay;
    }

    pub fn set_link_status(&mut self, link: LinkId, status: LinkStatus) {
        self.links[link.0].status = status;
    }

    pub fn set_link_impairment(&mut self, link: LinkId, impair: LinkImpairment) {
        self.links[link.0].impair = impair;
    }

    pub fn set_channel(&mut self, nfe: NodeId, down: Duration, up: Duration, connected: bool) {
        if let Some(c) = self.channels.get_mut(&nfe) {
            c.down = down;
            c.up = up;
            c.connected = connected;
        }
    }

    /// Transmission time of `size_bytes` at `bps`.
    pub fn tx_time(size_bytes: u32, bps: u64) -> Duration {
        Duration::from_nanos((u64::from(size_bytes) * 8 * 1_000_000_000).div_ceil(bps.max(1)))
    }

    /// Emulated LLDP: inter-NFE links that are currently up.
    pub fn discover_links(&self) -> Vec<LinkId> {
        self.topo.links().iter().filter(|l| self.links[l.id.0].status == LinkStatus::Up).map(|l| l.id).collect()
    }

    /// Snapshot of one port's counters.
    pub fn port_counters(&self, nfe: NodeId, port: PortNo) -> Result<PortCounters, SimError> {
        self.switches.get(&nfe).ok_or(SimError::UnknownNode(nfe))?.counters.get(&port).copied().ok_or(SimError::UnknownPort(nfe, port))
    }

    fn next_xid(&mut self) -> Xid {
        self.next_xid = self.next_xid.wrapping_add(1);
        self.next_xid
    }

    fn trace(&mut self, kind: &'static str, node: &str, detail: impl FnOnce() -> String) {
        if self.cfg.trace {
            self.trace.push(TraceRecord { time: self.now(), kind, node: node.to_string(), detail: detail() });
        }
    }

    // --- scheduling ---------------------------------------------------------

    pub fn schedule(&mut self, at: SimTime, ev: ScenarioEvent) -> Result<(), SimError> {
        self.queue.schedule(at, Event::Scenario(ev))
    }

    pub fn add_traffic(&mut self, spec: TrafficSpec) -> Result<(), SimError> {
        if !self.host_index.contains_key(&spec.flow.src_host) {
            return Err(SimError::UnknownHost(spec.flow.src_host.0.clone()));
        }
        let gen = self.traffic.len();
        let start = spec.start;
        self.traffic.push((spec, 0));
        self.queue.schedule(start, Event::Traffic { gen })
    }

    /// Sends one data packet from `host` now.
    pub fn inject_packet(&mut self, host: &HostId, flow: FlowKey, size_bytes: u32) -> Result<PacketId, SimError> {
        self.send_from_host(host, Payload::Data { flow, app: AppData::Raw }, size_bytes)
    }

    fn send_from_host(&mut self, host: &HostId, payload: Payload, size_bytes: u32) -> Result<PacketId, SimError> {
        let idx = *self.host_index.get(host).ok_or_else(|| SimError::UnknownHost(host.0.clone()))?;
        let att = self.topo.hosts()[idx].clone();
        self.next_packet += 1;
        let id = PacketId(self.next_packet);
        let now = self.now();
        let pkt = Packet { id, size_bytes, vlan: None, payload, injected_at: now, visited: Vec::new() };
        self.stats.injected += 1;
        self.trace("inject", &host.0, || format!("pkt={} {}", id.0, describe(&pkt)));
        let at = now + att.link_delay + Self::tx_time(size_bytes, att.attach.speed_bps);
        self.queue.schedule(at, Event::ArriveNfe { nfe: att.attach.node, in_port: att.attach.port_no, pkt })?;
        Ok(id)
    }

    // --- running ------------------------------------------------------------

    /// Processes every event up to and including `t_end`; the clock ends at `t_end`.
    pub fn run_until<A: ControllerApp + ?Sized>(&mut self, app: &mut A, t_end: SimTime) {
        while self.queue.peek_time().is_some_and(|t| t <= t_end) {
            self.step(app);
        }
        self.queue.advance_to(t_end);
    }

    /// Processes events until `done` holds or the clock would pass `deadline`.
    pub fn run_while<A: ControllerApp + ?Sized>(&mut self, app: &mut A, deadline: SimTime, mut done: impl FnMut(&A) -> bool) -> bool {
        while !done(app) {
            match self.queue.peek_time() {
                Some(t) if t <= deadline => {
                    self.step(app);
                }
                _ => {
                    self.queue.advance_to(deadline);
                    return done(app);
                }
            }
        }
        true
    }

    /// Fires the next event. Returns false when the queue is empty.
    pub fn step<A: ControllerApp + ?Sized>(&mut self, app: &mut A) -> bool {
        let Some((_, ev)) = self.queue.pop() else { return false };
        match ev {
            Event::ArriveNfe { nfe, in_port, pkt } => self.arrive_nfe(nfe, in_port, pkt),
            Event::ArriveHost { host, pkt } => self.arrive_host(host, pkt),
            Event::ToSwitch { nfe, msg } => self.switch_handle(nfe, msg),
            Event::ToController { from, msg } => {
                self.trace("ctl_rx", &from.to_string(), || format!("{} xid={}", msg.kind(), msg.xid));
                app.on_message(&mut Ctl { net: self }, from, msg);
            }
            Event::Timer { token } => app.on_timer(&mut Ctl { net: self }, token),
            Event::RuleTimeout { nfe, rule } => self.rule_timeout(nfe, rule),
            Event::Traffic { gen } => self.traffic_tick(gen),
            Event::Scenario(s) => self.apply_scenario(s),
        }
        true
    }

    fn apply_scenario(&mut self, s: ScenarioEvent) {
        self.trace("scenario", "-", || format!("{s:?}"));
        match s {
            ScenarioEvent::SetLinkDelay { link, delay } => self.links[link.0].delay = delay,
            ScenarioEvent::ScaleLinkDelay { link, factor } => {
                let l = &mut self.links[link.0];
                l.delay = Duration::from_secs_f64(l.delay.as_secs_f64() * factor);
            }
            ScenarioEvent::SetLinkStatus { link, status } => self.links[link.0].status = status,
            ScenarioEvent::SetChannel { nfe, down, up, connected } => self.set_channel(nfe, down, up, connected),
        }
    }

    fn traffic_tick(&mut self, gen: usize) {
        let (spec, sent) = &mut self.traffic[gen];
        if *sent >= spec.count {
            return;
        }
        let seq = *sent;
        *sent += 1;
        let (flow, ping, size, interval, more) = (spec.flow.clone(), spec.ping, spec.size_bytes, spec.interval, *sent < spec.count);
        let app = if ping { AppData::PingRequest { seq } } else { AppData::Raw };
        let src = flow.src_host.clone();
        self.send_from_host(&src, Payload::Data { flow, app }, size).expect("validated in add_traffic");
        if more {
            let at = self.now() + interval;
            self.queue.schedule(at, Event::Traffic { gen }).expect("future");
        }
    }

    // --- data plane -----------------------------------------------------------

    fn counters(&mut self, nfe: NodeId, port: PortNo) -> &mut PortCounters {
        self.switches.get_mut(&nfe).expect("known NFE").counters.entry(port).or_default()
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.gen::<f64>() < p
    }

    fn arrive_nfe(&mut self, nfe: NodeId, in_port: PortNo, mut pkt: Packet) {
        let size = u64::from(pkt.size_bytes);
        let impair = self.topo.link_into_port(nfe, in_port).map(|l| self.links[l.0].impair).unwrap_or_default();
        let rx_drop = self.chance(impair.rx_drop);
        let rx_err = !rx_drop && self.chance(impair.rx_error);
        let c = self.counters(nfe, in_port);
        c.rx_pkts += 1;
        c.rx_bytes += size;
        if rx_drop || rx_err {
            if rx_drop {
                c.rx_dropped += 1;
            } else {
                c.rx_errors += 1;
            }
            self.stats.dropped_link += 1;
            self.trace("drop", &nfe.to_string(), || format!("pkt={} rx impairment", pkt.id.0));
            return;
        }
        if pkt.visited.contains(&nfe) {
            self.stats.loops += 1;
            self.trace("loop", &nfe.to_string(), || format!("pkt={} visited={:?}", pkt.id.0, pkt.visited));
            return;
        }
        if pkt.visited.len() >= self.cfg.max_hops {
            self.stats.dropped_no_route += 1;
            return;
        }
        pkt.visited.push(nfe);
        self.match_and_forward(nfe, in_port, pkt);
    }

    /// Applies the highest-priority matching rule, or punts the packet to the
    /// controller on a table miss.
    pub fn match_and_forward(&mut self, nfe: NodeId, in_port: PortNo, mut pkt: Packet) -> ForwardOutcome {
        let now = self.now();
        let actions = match self.switches.get_mut(&nfe).and_then(|s| s.table.lookup(&pkt, now)) {
            Some(r) => r.rule.actions.clone(),
            None => {
                self.stats.packet_ins += 1;
                self.packet_ins.push(PacketInRecord { time: now, nfe, packet: pkt.id, flow: pkt.flow().cloned() });
                self.trace("punt", &nfe.to_string(), || format!("pkt={} {}", pkt.id.0, describe(&pkt)));
                self.switch_send(nfe, ControlMsg::new(0, MsgBody::PacketIn { in_port, packet: pkt }));
                return ForwardOutcome::PacketIn;
            }
        };
        let mut out = None;
        for a in actions {
            match a {
                Action::PushVlan(v) => pkt.vlan = Some(v),
                Action::PopVlan => pkt.vlan = None,
                Action::Output(p) => out = Some(p),
            }
        }
        match out {
            Some(p) => {
                self.trace("fwd", &nfe.to_string(), || format!("pkt={} out={} vlan={:?}", pkt.id.0, p, pkt.vlan));
                self.emit(nfe, p, pkt);
                ForwardOutcome::Output(p)
            }
            None => {
                self.stats.dropped_no_route += 1;
                ForwardOutcome::Dropped
            }
        }
    }

    /// Transmits `pkt` out of `(nfe, port)` towards a host or a link.
    fn emit(&mut self, nfe: NodeId, port: PortNo, pkt: Packet) {
        let size = pkt.size_bytes;
        if let Some(h) = self.topo.host_at(nfe, port) {
            let (host, delay, speed) = (h.host_id.clone(), h.link_delay, h.attach.speed_bps);
            let c = self.counters(nfe, port);
            c.tx_pkts += 1;
            c.tx_bytes += u64::from(size);
            let at = self.now() + Self::tx_time(size, speed) + delay;
            self.queue.schedule(at, Event::ArriveHost { host, pkt }).expect("future");
            return;
        }
        let Some(lid) = self.topo.link_from_port(nfe, port) else {
            self.stats.dropped_no_route += 1;
            self.trace("drop", &nfe.to_string(), || format!("pkt={} no link on port {}", pkt.id.0, port));
            return;
        };
        let link = self.topo.link(lid).clone();
        let state = self.links[lid.0].clone();
        let tx_drop = state.status == LinkStatus::Down || self.chance(state.impair.tx_drop);
        let c = self.counters(nfe, port);
        c.tx_pkts += 1;
        c.tx_bytes += u64::from(size);
        if tx_drop {
            c.tx_dropped += 1;
            self.stats.dropped_link += 1;
            self.trace("drop", &nfe.to_string(), || format!("pkt={} tx on port {}", pkt.id.0, port));
            return;
        }
        let now = self.now();
        let start = now.max(state.busy_until);
        let done = start + Self::tx_time(size, link.capacity_bps);
        self.links[lid.0].busy_until = done;
        if self.chance(state.impair.loss) {
            self.stats.dropped_link += 1;
            self.trace("drop", &nfe.to_string(), || format!("pkt={} lost in flight", pkt.id.0));
            return;
        }
        let ev = Event::ArriveNfe { nfe: link.dst.node, in_port: link.dst.port_no, pkt };
        self.queue.schedule(done + state.delay, ev).expect("future");
    }

    fn arrive_host(&mut self, host: HostId, pkt: Packet) {
        let now = self.now();
        let Payload::Data { flow, app } = &pkt.payload else {
            self.stats.misdelivered += 1;
            return;
        };
        if flow.dst_host != host {
            self.stats.misdelivered += 1;
        }
        if !self.delivered_ids.insert(pkt.id) {
            self.stats.duplicates += 1;
        }
        self.stats.delivered += 1;
        self.trace("deliver", &host.0, || format!("pkt={} {} hops={:?}", pkt.id.0, flow, pkt.visited));
        self.deliveries.push(Delivery {
            packet: pkt.id,
            flow: flow.clone(),
            host: host.clone(),
            injected_at: pkt.injected_at,
            delivered_at: now,
        });
        match app {
            AppData::PingRequest { seq } => {
                let reply = Payload::Data { flow: flow.reversed(), app: AppData::PingReply { seq: *seq, request_sent: pkt.injected_at } };
                let _ = self.send_from_host(&host, reply, pkt.size_bytes);
            }
            AppData::PingReply { seq, request_sent } => {
                self.pings.push(PingSample { flow: flow.reversed(), seq: *seq, sent: *request_sent, rtt: now - *request_sent });
            }
            AppData::Raw => {}
        }
    }

    // --- control plane ----------------------------------------------------------

    fn controller_send(&mut self, nfe: NodeId, msg: ControlMsg) {
        let now = self.now();
        let Some(ch) = self.channels.get_mut(&nfe) else { return };
        if !ch.connected {
            self.trace("ctl_lost", &nfe.to_string(), || format!("{} xid={}", msg.kind(), msg.xid));
            return;
        }
        let at = (now + ch.down).max(ch.last_down);
        ch.last_down = at;
        self.stats.ctrl_msgs_to_switch += 1;
        self.trace("ctl_tx", &nfe.to_string(), || format!("{} xid={}", msg.kind(), msg.xid));
        self.queue.schedule(at, Event::ToSwitch { nfe, msg }).expect("future");
    }

    fn switch_send(&mut self, nfe: NodeId, msg: ControlMsg) {
        let now = self.now();
        let Some(ch) = self.channels.get_mut(&nfe) else { return };
        if !ch.connected {
            return;
        }
        let at = (now + ch.up).max(ch.last_up);
        ch.last_up = at;
        self.stats.ctrl_msgs_to_controller += 1;
        self.queue.schedule(at, Event::ToController { from: nfe, msg }).expect("future");
    }

    fn switch_handle(&mut self, nfe: NodeId, msg: ControlMsg) {
        if !self.channels.get(&nfe).is_some_and(|c| c.connected) {
            return;
        }
        let xid = msg.xid;
        match msg.body {
            MsgBody::FlowMod { command, rule } => {
                if let Err(e) = self.apply_flow_mod(nfe, command, rule) {
                    self.stats.flowmod_errors += 1;
                    self.switch_send(nfe, ControlMsg::new(xid, MsgBody::Error { reason: e.to_string() }));
                }
            }
            MsgBody::PacketOut { in_port, packet, action } => match action {
                PacketOutAction::Output(p) => {
                    self.trace("pkt_out", &nfe.to_string(), || format!("pkt={} out={}", packet.id.0, p));
                    self.emit(nfe, p, packet);
                }
                PacketOutAction::Table => {
                    let port = in_port.unwrap_or(PortNo(0));
                    self.match_and_forward(nfe, port, packet);
                }
            },
            MsgBody::PortStatsRequest { port } => {
                let sw = &self.switches[&nfe];
                let stats: Vec<_> = match port {
                    Some(p) => sw.counters.get(&p).map(|c| vec![(p, *c)]).unwrap_or_default(),
                    None => sw.counters.iter().map(|(p, c)| (*p, *c)).collect(),
                };
                self.switch_send(nfe, ControlMsg::new(xid, MsgBody::PortStatsReply { stats }));
            }
            MsgBody::EchoRequest => self.switch_send(nfe, ControlMsg::new(xid, MsgBody::EchoReply)),
            MsgBody::BarrierRequest => self.switch_send(nfe, ControlMsg::new(xid, MsgBody::BarrierReply)),
            MsgBody::FeaturesRequest => {
                let n_ports = self.topo.node(nfe).map_or(0, |n| n.ports.len());
                self.switch_send(nfe, ControlMsg::new(xid, MsgBody::FeaturesReply { dpid: nfe, n_ports }));
            }
            MsgBody::PortDescRequest => {
                let ports: Vec<PortRef> = self.topo.node(nfe).map(|n| n.ports.values().copied().collect()).unwrap_or_default();
                self.switch_send(nfe, ControlMsg::new(xid, MsgBody::PortDescReply { ports }));
            }
            other => {
                self.trace("ctl_ignored", &nfe.to_string(), || format!("{:?}", ControlMsg::new(xid, other).kind()));
            }
        }
    }

    /// Applies a flow-mod to an NFE's table immediately and arms its timeouts.
    pub fn apply_flow_mod(&mut self, nfe: NodeId, command: FlowModCommand, rule: FlowRule) -> Result<ModOutcome, SimError> {
        let now = self.now();
        let (idle, hard) = (rule.idle_timeout, rule.hard_timeout);
        let detail = format!("{} {} [{}]", command, rule.matching, fmt_actions(&rule.actions));
        let sw = self.switches.get_mut(&nfe).ok_or(SimError::UnknownNode(nfe))?;
        let outcome = sw.table.apply(nfe, command, rule, now)?;
        self.trace("flowmod", &nfe.to_string(), || detail);
        if let ModOutcome::Installed(id) | ModOutcome::Modified(id) = outcome {
            for t in [idle, hard] {
                if t > Duration::ZERO {
                    self.queue.schedule(now + t, Event::RuleTimeout { nfe, rule: id })?;
                }
            }
        }
        Ok(outcome)
    }

    fn rule_timeout(&mut self, nfe: NodeId, id: u64) {
        let now = self.now();
        let Some(sw) = self.switches.get_mut(&nfe) else { return };
        let Some(r) = sw.table.get(id) else { return };
        let (idle, hard) = (r.rule.idle_timeout, r.rule.hard_timeout);
        let hard_due = hard > Duration::ZERO && now >= r.installed_at + hard;
        let idle_due = idle > Duration::ZERO && now >= r.last_hit + idle;
        if hard_due || idle_due {
            let r = sw.table.remove(id).expect("present");
            self.trace("expire", &nfe.to_string(), || format!("{} idle={idle_due}", r.rule.matching));
        } else if idle > Duration::ZERO {
            let at = r.last_hit + idle;
            self.queue.schedule(at.max(now), Event::RuleTimeout { nfe, rule: id }).expect("future");
        }
    }

    // --- standalone measurement helpers --------------------------------------------
    //
    // These drive the event loop with a private controller until the reply
    // arrives; messages for any other controller during that span are dropped.

    /// Round-trip time of a Barrier + Echo exchange with `nfe`.
    pub fn echo_rtt(&mut self, nfe: NodeId, timeout: Duration) -> Result<Duration, SimError> {
        if !self.channels.contains_key(&nfe) {
            return Err(SimError::UnknownNode(nfe));
        }
        let start = self.now();
        let mut app = WaitFor::default();
        {
            let mut ctl = Ctl { net: self };
            ctl.send(nfe, MsgBody::BarrierRequest);
            app.xid = Some(ctl.send(nfe, MsgBody::EchoRequest));
        }
        if self.run_while(&mut app, start + timeout, |a| a.at.is_some()) {
            Ok(app.at.expect("done") - start)
        } else {
            Err(SimError::Timeout(nfe))
        }
    }

    /// Emits a probe frame on `src` via PacketOut and returns the time until
    /// the controller receives it back from the far end of the link.
    pub fn packet_out_probe(&mut self, src: PortRef, dst: PortRef, timeout: Duration) -> Result<Duration, SimError> {
        if self.topo.link_from_port(src.node, src.port_no).is_none() {
            return Err(SimError::LinkDown(src.node, src.port_no));
        }
        let start = self.now();
        let pkt = self.make_probe(src, dst);
        let token = pkt.id.0;
        let mut app = WaitFor { probe: Some(token), ..Default::default() };
        Ctl { net: self }.send(src.node, MsgBody::PacketOut { in_port: None, packet: pkt, action: PacketOutAction::Output(src.port_no) });
        if self.run_while(&mut app, start + timeout, |a| a.at.is_some()) {
            Ok(app.at.expect("done") - start)
        } else {
            Err(SimError::LinkDown(src.node, src.port_no))
        }
    }
}

impl Network {
    fn make_probe(&mut self, src: PortRef, dst: PortRef) -> Packet {
        self.next_packet += 1;
        let token = self.next_packet;
        Packet {
            id: PacketId(token),
            size_bytes: PROBE_SIZE_BYTES,
            vlan: None,
            payload: Payload::Probe(ProbeFrame { ethertype: PROBE_ETHERTYPE, src_mac: src.mac, dst_mac: dst.mac, token }),
            injected_at: self.now(),
            visited: vec![src.node],
        }
    }
}

/// Size of a link-delay probe frame.
pub const PROBE_SIZE_BYTES: u32 = 64;

#[derive(Default)]
struct WaitFor {
    xid: Option<Xid>,
    probe: Option<u64>,
    at: Option<SimTime>,
}

impl ControllerApp for WaitFor {
    fn on_message(&mut self, ctl: &mut Ctl<'_>, _from: NodeId, msg: ControlMsg) {
        let hit = match &msg.body {
            MsgBody::EchoReply => self.xid == Some(msg.xid),
            MsgBody::PacketIn { packet, .. } => packet.probe().is_some_and(|p| Some(p.token) == self.probe),
            _ => false,
        };
        if hit && self.at.is_none() {
            self.at = Some(ctl.now());
        }
    }
}

fn describe(pkt: &Packet) -> String {
    let mut s = String::new();
    match &pkt.payload {
        Payload::Data { flow, app } => {
            let _ = write!(s, "{flow}");
            match app {
                AppData::PingRequest { seq } => {
                    let _ = write!(s, " ping_req={seq}");
                }
                AppData::PingReply { seq, .. } => {
                    let _ = write!(s, " ping_rep={seq}");
                }
                AppData::Raw => {}
            }
        }
        Payload::Probe(p) => {
            let _ = write!(s, "probe ethertype=0x{:04x} {}>{}", p.ethertype, p.src_mac, p.dst_mac);
        }
    }
    if let Some(v) = pkt.vlan {
        let _ = write!(s, " vlan={v}");
    }
    s
}

/// Nanoseconds of a duration, for arithmetic in tests and reports.
pub fn nanos(d: Duration) -> u64 {
    dur_nanos(d)
}
