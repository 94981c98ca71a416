//! Network monitoring: probe-based link delay, counter-based utilization and
//! quality, and a staleness cache that keeps repeated requests free.
//!
//! The monitor never touches the network directly. Requests go out through a
//! [`Southbound`] handle and replies are fed back with
//! [`Monitor::handle_message`] and [`Monitor::handle_timer`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use crate::simnet::{ControlMsg, MsgBody, PacketOutAction, PortCounters, Southbound, Xid};
use crate::time::SimTime;
use crate::topo::{Link, LinkId, NodeId, PortNo, PortRef, Topology};

/// Timer tokens owned by the monitor carry this bit.
pub const TIMER_TAG: u64 = 1 << 62;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Delay,
    Utilization,
    Quality,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Delay, Metric::Utilization, Metric::Quality];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Delay => "delay",
            Metric::Utilization => "utilization",
            Metric::Quality => "quality",
        }
    }

    pub fn job(self) -> JobKind {
        match self {
            Metric::Delay => JobKind::Delay,
            Metric::Utilization | Metric::Quality => JobKind::Stats,
        }
    }
}

/// How a metric is obtained: a delay probe, or a port-stats round that
/// yields both utilization and quality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum JobKind {
    Delay,
    Stats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonitorConfig {
    /// Values younger than this are served from the cache.
    pub t_e: Duration,
    /// Minimum age of the utilization baseline.
    pub delta: Duration,
    pub probe_timeout: Duration,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { t_e: Duration::from_secs(1), delta: Duration::from_secs(1), probe_timeout: Duration::from_secs(1) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub value: f64,
    pub at: SimTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkHealth {
    Up,
    Down,
}

/// Fixed and measured characteristics of one unidirectional link.
#[derive(Clone, Debug, Serialize)]
pub struct LinkRecord {
    pub id: LinkId,
    pub src: PortRef,
    pub dst: PortRef,
    pub capacity_bps: u64,
    pub health: LinkHealth,
    pub down_since: Option<SimTime>,
    pub delay: Option<Sample>,
    pub utilization: Option<Sample>,
    pub quality: Option<Sample>,
    /// Transmit-side counters used as the previous utilization sample.
    pub baseline: Option<(SimTime, PortCounters)>,
}

impl LinkRecord {
    fn new(l: &Link) -> Self {
        LinkRecord {
            id: l.id,
            src: l.src,
            dst: l.dst,
            capacity_bps: l.capacity_bps,
            health: LinkHealth::Up,
            down_since: None,
            delay: None,
            utilization: None,
            quality: None,
            baseline: None,
        }
    }

    pub fn sample(&self, m: Metric) -> Option<Sample> {
        match m {
            Metric::Delay => self.delay,
            Metric::Utilization => self.utilization,
            Metric::Quality => self.quality,
        }
    }
}

/// Fixed characteristics of an NFE, learned from its feature and port
/// descriptions.
#[derive(Clone, Debug, Default, Serialize)]
pub struct NfeRecord {
    pub dpid: Option<NodeId>,
    pub n_ports: usize,
    pub ports: BTreeMap<PortNo, PortRef>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fetch {
    /// Served from the cache, no message sent.
    Ready(f64),
    /// A measurement is in flight; a [`Completion`] will follow.
    Pending,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Completion {
    pub link: LinkId,
    pub kind: JobKind,
    pub ok: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RoundTally {
    pub round: usize,
    pub at: SimTime,
    pub units: u64,
}

#[derive(Clone, Debug)]
enum Job {
    Delay {
        link: LinkId,
        started: SimTime,
        /// Echo round-trip per endpoint, filled in as replies arrive.
        echo: [(NodeId, Xid, Option<Duration>); 2],
        probe: Option<(u64, SimTime)>,
    },
    Stats {
        link: LinkId,
        ends: [(NodeId, PortNo, Xid, Option<PortCounters>); 2],
    },
}

impl Job {
    fn link(&self) -> LinkId {
        match self {
            Job::Delay { link, .. } | Job::Stats { link, .. } => *link,
        }
    }

    fn kind(&self) -> JobKind {
        match self {
            Job::Delay { .. } => JobKind::Delay,
            Job::Stats { .. } => JobKind::Stats,
        }
    }
}

/// Utilization from two transmit byte counts taken `elapsed` apart on a link
/// of `capacity_bps`.
pub fn compute_utilization(bytes_now: u64, bytes_prev: u64, elapsed: Duration, capacity_bps: u64) -> Option<f64> {
    if bytes_now < bytes_prev || elapsed.is_zero() || capacity_bps == 0 {
        return None;
    }
    Some(8.0 * (bytes_now - bytes_prev) as f64 / (elapsed.as_secs_f64() * capacity_bps as f64))
}

/// Packets lost or errored between the transmit side and the receive side.
/// Zero on a clean link; lower is better.
pub fn compute_quality(tx: &PortCounters, rx: &PortCounters) -> f64 {
    let a = tx.tx_pkts as f64;
    let a_drop = tx.tx_dropped as f64;
    let a_err = tx.tx_errors as f64;
    let r = rx.rx_pkts as f64;
    (a - a_drop - a_err - r) + (rx.rx_dropped as f64 + rx.rx_errors as f64) + (a_drop + a_err)
}

/// Delay of a link from the probe transit time and the echo round trips of
/// its two endpoints.
pub fn link_delay_from(transit: Duration, echo_src: Duration, echo_dst: Duration) -> f64 {
    transit.as_secs_f64() - echo_src.as_secs_f64() / 2.0 - echo_dst.as_secs_f64() / 2.0
}

pub struct Monitor {
    cfg: MonitorConfig,
    links: Vec<LinkRecord>,
    nfes: BTreeMap<NodeId, NfeRecord>,
    jobs: BTreeMap<u64, Job>,
    pending: BTreeMap<(LinkId, JobKind), u64>,
    by_xid: BTreeMap<Xid, u64>,
    by_probe: BTreeMap<u64, u64>,
    /// Outstanding barrier and description requests.
    acks: BTreeSet<Xid>,
    next_job: u64,
    rounds: Vec<RoundTally>,
    units_total: u64,
    cache_hits: u64,
}

impl Monitor {
    pub fn new(topo: &Topology, cfg: MonitorConfig) -> Self {
        Monitor {
            cfg,
            links: topo.links().iter().map(LinkRecord::new).collect(),
            nfes: BTreeMap::new(),
            jobs: BTreeMap::new(),
            pending: BTreeMap::new(),
            by_xid: BTreeMap::new(),
            by_probe: BTreeMap::new(),
            acks: BTreeSet::new(),
            next_job: 0,
            rounds: Vec::new(),
            units_total: 0,
            cache_hits: 0,
        }
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    pub fn link(&self, id: LinkId) -> &LinkRecord {
        &self.links[id.0]
    }

    pub fn links(&self) -> &[LinkRecord] {
        &self.links
    }

    pub fn nfe(&self, id: NodeId) -> Option<&NfeRecord> {
        self.nfes.get(&id)
    }

    /// Asks every NFE for its features and port descriptions.
    pub fn populate_nfes<S: Southbound + ?Sized>(&mut self, sb: &mut S, nfes: impl IntoIterator<Item = NodeId>) {
        for n in nfes {
            self.nfes.entry(n).or_default();
            for body in [MsgBody::FeaturesRequest, MsgBody::PortDescRequest] {
                let xid = sb.send(n, body);
                self.acks.insert(xid);
            }
        }
    }

    /// A link counts as down for `t_e` after a failed measurement.
    pub fn is_down(&self, id: LinkId, now: SimTime) -> bool {
        let r = &self.links[id.0];
        r.health == LinkHealth::Down && r.down_since.is_some_and(|t| now.since(t) < self.cfg.t_e.max(Duration::from_nanos(1)))
    }

    /// Cached value of `metric` if it was measured within `t_e`.
    pub fn cached(&self, id: LinkId, metric: Metric, now: SimTime) -> Option<f64> {
        let s = self.links[id.0].sample(metric)?;
        (now.since(s.at) < self.cfg.t_e || s.at == now).then_some(s.value)
    }

    /// Latest value regardless of age.
    pub fn latest(&self, id: LinkId, metric: Metric) -> Option<f64> {
        self.links[id.0].sample(metric).map(|s| s.value)
    }

    pub fn is_pending(&self, id: LinkId, kind: JobKind) -> bool {
        self.pending.contains_key(&(id, kind))
    }

    /// Returns a fresh value or starts (or joins) the measurement for it.
    pub fn request<S: Southbound + ?Sized>(&mut self, sb: &mut S, id: LinkId, metric: Metric) -> Fetch {
        let now = sb.now();
        if let Some(v) = self.cached(id, metric, now) {
            self.cache_hits += 1;
            return Fetch::Ready(v);
        }
        let kind = metric.job();
        if self.pending.contains_key(&(id, kind)) {
            return Fetch::Pending;
        }
        self.start(sb, id, kind);
        Fetch::Pending
    }

    fn start<S: Southbound + ?Sized>(&mut self, sb: &mut S, id: LinkId, kind: JobKind) {
        let now = sb.now();
        let job_id = self.next_job;
        self.next_job += 1;
        let rec = &self.links[id.0];
        let (s, d) = (rec.src, rec.dst);
        let job = match kind {
            JobKind::Delay => {
                let mut echo = [(s.node, 0, None), (d.node, 0, None)];
                for e in echo.iter_mut() {
                    let b = sb.send(e.0, MsgBody::BarrierRequest);
                    self.acks.insert(b);
                    e.1 = sb.send(e.0, MsgBody::EchoRequest);
                    self.by_xid.insert(e.1, job_id);
                }
                Job::Delay { link: id, started: now, echo, probe: None }
            }
            JobKind::Stats => {
                let mut ends = [(s.node, s.port_no, 0, None), (d.node, d.port_no, 0, None)];
                for e in ends.iter_mut() {
                    e.2 = sb.send(e.0, MsgBody::PortStatsRequest { port: Some(e.1) });
                    self.by_xid.insert(e.2, job_id);
                }
                Job::Stats { link: id, ends }
            }
        };
        sb.set_timer(now + self.cfg.probe_timeout, TIMER_TAG | job_id);
        self.jobs.insert(job_id, job);
        self.pending.insert((id, kind), job_id);
        self.units_total += 1;
        if let Some(r) = self.rounds.last_mut() {
            r.units += 1;
        }
    }

    /// Feeds a switch message to the monitor. `None` means the message is
    /// not the monitor's.
    pub fn handle_message<S: Southbound + ?Sized>(&mut self, sb: &mut S, from: NodeId, msg: &ControlMsg) -> Option<Vec<Completion>> {
        match &msg.body {
            MsgBody::BarrierReply => self.acks.remove(&msg.xid).then(Vec::new),
            MsgBody::FeaturesReply { dpid, n_ports } => {
                self.acks.remove(&msg.xid).then_some(())?;
                let r = self.nfes.entry(from).or_default();
                r.dpid = Some(*dpid);
                r.n_ports = *n_ports;
                Some(Vec::new())
            }
            MsgBody::PortDescReply { ports } => {
                self.acks.remove(&msg.xid).then_some(())?;
                self.nfes.entry(from).or_default().ports = ports.iter().map(|p| (p.port_no, *p)).collect();
                Some(Vec::new())
            }
            MsgBody::EchoReply => {
                let job_id = self.by_xid.remove(&msg.xid)?;
                let now = sb.now();
                let mut send_probe = None;
                if let Some(Job::Delay { link, started, echo, probe }) = self.jobs.get_mut(&job_id) {
                    for e in echo.iter_mut() {
                        if e.1 == msg.xid {
                            e.2 = Some(now.since(*started));
                        }
                    }
                    if probe.is_none() && echo.iter().all(|e| e.2.is_some()) {
                        send_probe = Some(*link);
                    }
                }
                if let Some(link) = send_probe {
                    let rec = &self.links[link.0];
                    let (src, dst) = (self.port_ref(rec.src), self.port_ref(rec.dst));
                    let pkt = sb.probe_packet(src, dst);
                    let token = pkt.id.0;
                    sb.send(src.node, MsgBody::PacketOut { in_port: None, packet: pkt, action: PacketOutAction::Output(src.port_no) });
                    if let Some(Job::Delay { probe, .. }) = self.jobs.get_mut(&job_id) {
                        *probe = Some((token, now));
                    }
                    self.by_probe.insert(token, job_id);
                }
                Some(Vec::new())
            }
            MsgBody::PacketIn { packet, .. } => {
                let token = packet.probe()?.token;
                let job_id = self.by_probe.remove(&token)?;
                let now = sb.now();
                let Some(Job::Delay { link, echo, probe: Some((_, sent)), .. }) = self.jobs.remove(&job_id) else {
                    return Some(Vec::new());
                };
                self.pending.remove(&(link, JobKind::Delay));
                let rec = &mut self.links[link.0];
                if from != rec.dst.node {
                    // arrived somewhere unexpected; treat as lost
                    return Some(vec![self.fail(link, JobKind::Delay, now)]);
                }
                let d = link_delay_from(now.since(sent), echo[0].2.unwrap_or_default(), echo[1].2.unwrap_or_default());
                rec.delay = Some(Sample { value: d.max(0.0), at: now });
                rec.health = LinkHealth::Up;
                rec.down_since = None;
                Some(vec![Completion { link, kind: JobKind::Delay, ok: true }])
            }
            MsgBody::PortStatsReply { stats } => {
                let job_id = self.by_xid.remove(&msg.xid)?;
                let Some(Job::Stats { ends, .. }) = self.jobs.get_mut(&job_id) else {
                    return Some(Vec::new());
                };
                for e in ends.iter_mut() {
                    if e.2 == msg.xid {
                        e.3 = stats.iter().find(|(p, _)| *p == e.1).map(|(_, c)| *c);
                    }
                }
                if ends.iter().any(|e| self.by_xid.contains_key(&e.2)) {
                    return Some(Vec::new());
                }
                let Some(Job::Stats { link, ends }) = self.jobs.remove(&job_id) else { unreachable!() };
                self.pending.remove(&(link, JobKind::Stats));
                let now = sb.now();
                let (Some(tx), Some(rx)) = (ends[0].3, ends[1].3) else {
                    return Some(vec![self.fail(link, JobKind::Stats, now)]);
                };
                self.absorb_stats(link, tx, rx, now);
                Some(vec![Completion { link, kind: JobKind::Stats, ok: true }])
            }
            MsgBody::Error { .. } => {
                let job_id = self.by_xid.remove(&msg.xid)?;
                let job = self.jobs.remove(&job_id)?;
                self.pending.remove(&(job.link(), job.kind()));
                Some(vec![self.fail(job.link(), job.kind(), sb.now())])
            }
            _ => None,
        }
    }

    fn port_ref(&self, p: PortRef) -> PortRef {
        self.nfes.get(&p.node).and_then(|n| n.ports.get(&p.port_no)).copied().unwrap_or(p)
    }

    fn absorb_stats(&mut self, link: LinkId, tx: PortCounters, rx: PortCounters, now: SimTime) {
        let delta = self.cfg.delta;
        let rec = &mut self.links[link.0];
        rec.quality = Some(Sample { value: compute_quality(&tx, &rx), at: now });
        let prev_u = rec.utilization.map_or(0.0, |s| s.value);
        let u = match rec.baseline {
            None => {
                rec.baseline = Some((now, tx));
                0.0
            }
            Some((t0, c0)) => {
                let elapsed = now.since(t0);
                if tx.tx_bytes < c0.tx_bytes {
                    // counter reset: start over
                    rec.baseline = Some((now, tx));
                    prev_u
                } else if elapsed < delta {
                    prev_u
                } else {
                    rec.baseline = Some((now, tx));
                    compute_utilization(tx.tx_bytes, c0.tx_bytes, elapsed, rec.capacity_bps).unwrap_or(prev_u)
                }
            }
        };
        rec.utilization = Some(Sample { value: u, at: now });
        rec.health = LinkHealth::Up;
        rec.down_since = None;
    }

    fn fail(&mut self, link: LinkId, kind: JobKind, now: SimTime) -> Completion {
        let rec = &mut self.links[link.0];
        rec.health = LinkHealth::Down;
        rec.down_since = Some(now);
        if kind == JobKind::Delay {
            rec.delay = Some(Sample { value: f64::INFINITY, at: now });
        }
        Completion { link, kind, ok: false }
    }

    /// Expires a measurement whose reply never came. `None` when the token
    /// is not the monitor's.
    pub fn handle_timer(&mut self, now: SimTime, token: u64) -> Option<Vec<Completion>> {
        if token & TIMER_TAG == 0 {
            return None;
        }
        let job_id = token & !TIMER_TAG;
        let Some(job) = self.jobs.remove(&job_id) else {
            return Some(Vec::new());
        };
        self.by_xid.retain(|_, j| *j != job_id);
        self.by_probe.retain(|_, j| *j != job_id);
        self.pending.remove(&(job.link(), job.kind()));
        Some(vec![self.fail(job.link(), job.kind(), now)])
    }

    /// Opens a new monitoring round; later measurements are tallied to it.
    pub fn begin_round(&mut self, now: SimTime) {
        let round = self.rounds.len();
        self.rounds.push(RoundTally { round, at: now, units: 0 });
    }

    pub fn rounds(&self) -> &[RoundTally] {
        &self.rounds
    }

    /// Links freshly measured so far.
    pub fn units_total(&self) -> u64 {
        self.units_total
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits
    }

    /// `link_src,link_dst,metric,value,last_updated_ms`
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("link_src,link_dst,metric,value,last_updated_ms\n");
        for r in &self.links {
            for m in Metric::ALL {
                if let Some(v) = r.sample(m) {
                    let value = if m == Metric::Delay { v.value * 1e3 } else { v.value };
                    let _ = writeln!(s, "{},{},{},{:.6},{:.3}", r.src.node, r.dst.node, m.name(), value, v.at.as_millis_f64());
                }
            }
        }
        s
    }

    /// `round,time_ms,units,cumulative`
    pub fn monitoring_csv(&self) -> String {
        let mut s = String::from("round,time_ms,units,cumulative\n");
        let mut cum = 0;
        for r in &self.rounds {
            cum += r.units;
            let _ = writeln!(s, "{},{:.3},{},{}", r.round, r.at.as_millis_f64(), r.units, cum);
        }
        s
    }
}
