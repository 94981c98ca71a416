//! The controller application: PacketIn handling, hop-count bootstrap and
//! the per-flow monitor → reward → reinforce → re-path loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cram::{CramConfig, FlowLearner, Incumbent, Walk};
use crate::error::ConfigError;
use crate::nmm::{Completion, Fetch, JobKind, Metric, Monitor, MonitorConfig};
use crate::oracle::{optimal_path, Snapshot};
use crate::ptm::{
    change_path, flowmod_csv, install_new_path, single_switch_rule, FlowModEntry, InstalledPath, PlanRunner, PtmConfig, RunState,
};
use crate::simnet::{ControlMsg, ControllerApp, Ctl, FlowKey, MsgBody, Network, Packet, PacketOutAction};
use crate::time::SimTime;
use crate::topo::{Link, LinkId, NodeId, Path, PortNo, Topology};

const TICK_TAG: u64 = 1 << 60;
const PLAN_TAG: u64 = 1 << 59;
const ROUND_TAG: u64 = 1 << 58;
const INDEX_MASK: u64 = (1 << 32) - 1;

/// What a path is judged by; link values are summed along the path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Delay,
    Utilization,
    Quality,
    Weighted { delay: f64, utilization: f64, quality: f64 },
}

impl Objective {
    fn terms(self) -> Vec<(Metric, f64)> {
        match self {
            Objective::Delay => vec![(Metric::Delay, 1.0)],
            Objective::Utilization => vec![(Metric::Utilization, 1.0)],
            Objective::Quality => vec![(Metric::Quality, 1.0)],
            Objective::Weighted { delay, utilization, quality } => {
                [(Metric::Delay, delay), (Metric::Utilization, utilization), (Metric::Quality, quality)]
                    .into_iter()
                    .filter(|(_, w)| *w != 0.0)
                    .collect()
            }
        }
    }
}

/// How paths are chosen after the bootstrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// One RNN walk per flow and period, measuring only that walk.
    Cognitive,
    /// Probe every link each period and move every flow onto its exact
    /// shortest-delay path. The comparison baseline.
    Global,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub period: Duration,
    pub objective: Objective,
    pub routing: Routing,
    pub cram: CramConfig,
    pub monitor: MonitorConfig,
    pub ptm: PtmConfig,
    pub seed: u64,
    /// Delay the second tick of each flow by a random fraction of the period
    /// so flows do not all measure at the same instant.
    pub stagger: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            period: Duration::from_secs(5),
            objective: Objective::Delay,
            routing: Routing::Cognitive,
            cram: CramConfig::default(),
            monitor: MonitorConfig::default(),
            ptm: PtmConfig::default(),
            seed: 1,
            stagger: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.period.is_zero() {
            return Err(ConfigError::NotPositive("monitoring period"));
        }
        if self.cram.z == 0 {
            return Err(ConfigError::NotPositive("z"));
        }
        let unit = |name, v: f64, closed_top: bool| {
            let ok = v >= 0.0 && if closed_top { v <= 1.0 } else { v < 1.0 };
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { name, value: v, range: if closed_top { "[0, 1]" } else { "[0, 1)" } })
            }
        };
        unit("explore probability", self.cram.explore_prob, true)?;
        unit("alpha", self.cram.alpha, false)?;
        unit("beta", self.cram.beta, false)?;
        if self.cram.hop_prior < 0.0 || !self.cram.hop_prior.is_finite() {
            return Err(ConfigError::OutOfRange { name: "hop prior", value: self.cram.hop_prior, range: "[0, inf)" });
        }
        Ok(())
    }
}

/// One line of the engine event log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineEvent {
    pub time: SimTime,
    pub flow: FlowKey,
    pub event: &'static str,
    pub path: Option<Path>,
    /// Path objective in seconds for delay, raw otherwise.
    pub objective: Option<f64>,
    pub reward: Option<f64>,
    pub gamma: Option<f64>,
}

struct Tick {
    walk: Walk,
    waiting: BTreeSet<(LinkId, JobKind)>,
}

pub struct FlowSession {
    pub flow: FlowKey,
    pub src: NodeId,
    pub dst: NodeId,
    pub learner: FlowLearner,
    pub current: Option<InstalledPath>,
    /// Latest measurement of the installed path.
    pub incumbent_objective: Option<f64>,
    /// Completion times of every install or change, with the path.
    pub installs: Vec<(SimTime, Path)>,
    monitored: bool,
    looping: bool,
    runner: Option<PlanRunner>,
    buffered: Vec<(NodeId, PortNo, Packet)>,
    first_walk: Option<Walk>,
    /// Challenger to re-measure on the next tick before switching to it.
    verify: Option<Path>,
    tick: Option<Tick>,
}

impl FlowSession {
    pub fn is_updating(&self) -> bool {
        self.runner.is_some()
    }
}

pub struct Engine {
    cfg: EngineConfig,
    topo: Topology,
    monitor: Monitor,
    sessions: Vec<FlowSession>,
    index: BTreeMap<FlowKey, usize>,
    rng: ChaCha8Rng,
    events: Vec<EngineEvent>,
    flowmods: Vec<FlowModEntry>,
    sweep: Option<BTreeSet<(LinkId, JobKind)>>,
    started: bool,
}

impl Engine {
    pub fn new(topo: Topology, cfg: EngineConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Engine {
            monitor: Monitor::new(&topo, cfg.monitor),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            topo,
            cfg,
            sessions: Vec::new(),
            index: BTreeMap::new(),
            events: Vec::new(),
            flowmods: Vec::new(),
            sweep: None,
            started: false,
        })
    }

    /// Learns the NFEs and starts the round clock. Call once before running.
    pub fn attach(&mut self, net: &mut Network) {
        net.control(|ctl| self.start(ctl));
    }

    pub fn start(&mut self, ctl: &mut Ctl<'_>) {
        if self.started {
            return;
        }
        self.started = true;
        let nfes: Vec<NodeId> = self.topo.node_ids().collect();
        self.monitor.populate_nfes(ctl, nfes);
        let now = ctl.now();
        self.round(ctl, now);
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn sessions(&self) -> &[FlowSession] {
        &self.sessions
    }

    pub fn session(&self, flow: &FlowKey) -> Option<&FlowSession> {
        self.index.get(flow).map(|&i| &self.sessions[i])
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    pub fn flowmod_log(&self) -> &[FlowModEntry] {
        &self.flowmods
    }

    pub fn flowmod_csv(&self) -> String {
        flowmod_csv(&self.flowmods)
    }

    /// `time_ms,flow,event,path,objective_ms,reward,gamma`
    pub fn events_csv(&self) -> String {
        let delay = self.cfg.objective == Objective::Delay;
        let mut s = String::from("time_ms,flow,event,path,objective_ms,reward,gamma\n");
        for e in &self.events {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:.3},{},{},{},{},{},{}",
                e.time.as_millis_f64(),
                e.flow,
                e.event,
                e.path.as_ref().map(|p| p.to_string()).unwrap_or_default(),
                opt(e.objective.map(|o| if delay { o * 1e3 } else { o })),
                opt(e.reward),
                opt(e.gamma)
            );
        }
        s
    }

    /// Time the last install or change of any monitored flow completed.
    pub fn converged_at(&self) -> Option<SimTime> {
        self.sessions.iter().filter(|s| s.monitored).filter_map(|s| s.installs.last().map(|(t, _)| *t)).max()
    }

    fn log(&mut self, time: SimTime, idx: usize, event: &'static str, path: Option<Path>) {
        self.events.push(EngineEvent {
            time,
            flow: self.sessions[idx].flow.clone(),
            event,
            path,
            objective: None,
            reward: None,
            gamma: None,
        });
    }

    fn usable(&self, ctl: &Ctl<'_>) -> BTreeSet<LinkId> {
        let now = ctl.now();
        ctl.discover_links().into_iter().filter(|l| !self.monitor.is_down(*l, now)).collect()
    }

    fn round(&mut self, ctl: &mut Ctl<'_>, now: SimTime) {
        self.monitor.begin_round(now);
        if self.cfg.routing == Routing::Global && self.sweep.is_none() {
            let mut waiting = BTreeSet::new();
            for id in self.usable(ctl) {
                if let Fetch::Pending = self.monitor.request(ctl, id, Metric::Delay) {
                    waiting.insert((id, JobKind::Delay));
                }
            }
            self.sweep = Some(waiting);
            self.try_finish_sweep(ctl);
        }
        let _ = ctl.set_timer(now + self.cfg.period, ROUND_TAG);
    }

    fn on_packet_in(&mut self, ctl: &mut Ctl<'_>, from: NodeId, in_port: PortNo, packet: Packet) {
        let Some(flow) = packet.flow().cloned() else {
            ctl.note("engine", &from.to_string(), || "packet-in without a flow ignored".into());
            return;
        };
        let idx = match self.index.get(&flow) {
            Some(&i) => i,
            None => {
                let ends = self.topo.host(&flow.src_host).zip(self.topo.host(&flow.dst_host));
                let Some((a, b)) = ends else {
                    ctl.note("engine", &flow.to_string(), || "packet-in for unknown hosts ignored".into());
                    return;
                };
                let (src, dst) = (a.attach.node, b.attach.node);
                let i = self.sessions.len();
                self.sessions.push(FlowSession {
                    learner: FlowLearner::new(flow.clone(), &self.cfg.cram),
                    flow: flow.clone(),
                    src,
                    dst,
                    current: None,
                    incumbent_objective: None,
                    installs: Vec::new(),
                    monitored: src != dst,
                    looping: false,
                    runner: None,
                    buffered: Vec::new(),
                    first_walk: None,
                    verify: None,
                    tick: None,
                });
                self.index.insert(flow, i);
                self.log(ctl.now(), i, "session", None);
                i
            }
        };
        if from != self.sessions[idx].src {
            ctl.note("engine", &from.to_string(), || "stray packet-in dropped".into());
            return;
        }
        self.sessions[idx].buffered.push((from, in_port, packet));
        if self.sessions[idx].runner.is_none() {
            // no plan running and the ingress rule is missing: (re)install
            self.bootstrap(ctl, idx);
        }
    }

    fn bootstrap(&mut self, ctl: &mut Ctl<'_>, idx: usize) {
        let now = ctl.now();
        let s = &self.sessions[idx];
        let (src, dst) = (s.src, s.dst);
        let plan = if src == dst {
            single_switch_rule(&self.topo, &s.flow, now, &self.cfg.ptm)
        } else {
            let up = self.usable(ctl);
            let ok = |l: &Link| up.contains(&l.id);
            let reuse = s.current.as_ref().map(|c| c.path.clone()).filter(|p| p.links.iter().all(|l| up.contains(l)));
            let path = match reuse {
                Some(p) => p,
                None => match self.topo.hop_count_shortest_path_with(src, dst, ok) {
                    Ok(p) => p,
                    Err(_) => {
                        self.log(now, idx, "nopath", None);
                        return;
                    }
                },
            };
            if self.cfg.routing == Routing::Cognitive && self.sessions[idx].learner.rnns.is_empty() {
                match self.seed_walk(idx, &path, &ok) {
                    Ok(w) => self.sessions[idx].first_walk = Some(w),
                    Err(e) => ctl.note("engine", &self.sessions[idx].flow.to_string(), || e.to_string()),
                }
            }
            install_new_path(&self.topo, &self.sessions[idx].flow, &path, now, &self.cfg.ptm)
        };
        match plan {
            Ok(plan) => {
                let path = plan.result.path.clone();
                let runner = PlanRunner::start(plan, PLAN_TAG | idx as u64, ctl, &mut self.flowmods);
                self.sessions[idx].current = None;
                self.sessions[idx].runner = Some(runner);
                self.log(now, idx, "install", Some(path));
            }
            Err(e) => ctl.note("engine", &self.sessions[idx].flow.to_string(), || e.to_string()),
        }
    }

    /// Creates the RNNs along the bootstrap path, primes each towards it and
    /// returns the path as a walk so the first tick measures it.
    fn seed_walk(&mut self, idx: usize, path: &Path, usable: &dyn Fn(&Link) -> bool) -> Result<Walk, crate::error::CramError> {
        let learner = &mut self.sessions[idx].learner;
        let mut decisions = Vec::new();
        let mut created = Vec::new();
        for (node, link) in path.nodes.iter().zip(&path.links) {
            if learner.ensure_rnn(&self.topo, usable, *node, &self.cfg.cram.rnn)? {
                created.push(*node);
            }
            let port = self.topo.link(*link).src.port_no;
            if self.cfg.cram.hop_prior > 0.0 {
                learner.prime(*node, port, self.cfg.cram.hop_prior, &self.cfg.cram.rnn)?;
            }
            let i = learner.rnns[node].neuron_of(port).ok_or(crate::error::CramError::BadNeuron(0))?;
            decisions.push((*node, i));
        }
        Ok(Walk { path: path.clone(), decisions, created })
    }

    fn plan_progress(&mut self, ctl: &mut Ctl<'_>, idx: usize, state: Option<RunState>) {
        if state != Some(RunState::Done) {
            return;
        }
        let now = ctl.now();
        let runner = self.sessions[idx].runner.take().expect("state came from the runner");
        let mut result = runner.plan().result.clone();
        result.installed_at = now;
        let changed = self.sessions[idx].installs.last().is_some_and(|(_, p)| p != &result.path);
        for e in &runner.errors {
            let e = e.clone();
            ctl.note("engine", &self.sessions[idx].flow.to_string(), || e);
        }
        if !runner.errors.is_empty() {
            self.log(now, idx, "error", Some(result.path.clone()));
        }
        let s = &mut self.sessions[idx];
        s.incumbent_objective = s.learner.history.records().rev().find(|r| r.path == result.path).map(|r| r.objective);
        s.installs.push((now, result.path.clone()));
        let path = result.path.clone();
        s.current = Some(result);
        for (nfe, port, packet) in std::mem::take(&mut s.buffered) {
            ctl.send(nfe, MsgBody::PacketOut { in_port: Some(port), packet, action: PacketOutAction::Table });
        }
        let start_loop = s.monitored && !s.looping && self.cfg.routing == Routing::Cognitive;
        if start_loop {
            s.looping = true;
        }
        self.log(now, idx, if changed { "changed" } else { "installed" }, Some(path));
        if start_loop {
            let next = if self.cfg.stagger { self.cfg.period.mul_f64(1.0 - self.rng.gen::<f64>()) } else { self.cfg.period };
            self.tick(ctl, idx, next);
        }
    }

    fn tick(&mut self, ctl: &mut Ctl<'_>, idx: usize, next: Duration) {
        let now = ctl.now();
        let _ = ctl.set_timer(now + next, TICK_TAG | idx as u64);
        let s = &self.sessions[idx];
        if s.runner.is_some() || s.tick.is_some() || s.current.is_none() {
            return;
        }
        let replay = self.sessions[idx].verify.take().and_then(|p| self.walk_along(idx, &p));
        let walk = match self.sessions[idx].first_walk.take().or(replay) {
            Some(w) => w,
            None => {
                let up = self.usable(ctl);
                let ok = |l: &Link| up.contains(&l.id);
                let s = &mut self.sessions[idx];
                match s.learner.build_path(&self.topo, &ok, s.src, s.dst, &self.cfg.cram, &mut self.rng) {
                    Ok(w) => w,
                    Err(_) => {
                        self.log(now, idx, "nopath", None);
                        return;
                    }
                }
            }
        };
        let mut waiting = BTreeSet::new();
        for &link in &walk.path.links {
            for (m, _) in self.cfg.objective.terms() {
                if let Fetch::Pending = self.monitor.request(ctl, link, m) {
                    waiting.insert((link, m.job()));
                }
            }
        }
        self.sessions[idx].tick = Some(Tick { walk, waiting });
        self.try_finish_tick(ctl, idx);
    }

    /// A walk that follows `path` through the flow's existing RNNs.
    fn walk_along(&self, idx: usize, path: &Path) -> Option<Walk> {
        let rnns = &self.sessions[idx].learner.rnns;
        let mut decisions = Vec::with_capacity(path.links.len());
        for (node, link) in path.nodes.iter().zip(&path.links) {
            let i = rnns.get(node)?.neuron_of(self.topo.link(*link).src.port_no)?;
            decisions.push((*node, i));
        }
        Some(Walk { path: path.clone(), decisions, created: Vec::new() })
    }

    fn path_objective(&self, path: &Path, now: SimTime) -> Option<f64> {
        let mut total = 0.0;
        for &link in &path.links {
            if self.monitor.is_down(link, now) {
                return None;
            }
            for (m, w) in self.cfg.objective.terms() {
                total += w * self.monitor.latest(link, m)?;
            }
        }
        total.is_finite().then_some(total.max(crate::cram::EPS_FLOOR))
    }

    fn try_finish_tick(&mut self, ctl: &mut Ctl<'_>, idx: usize) {
        if !self.sessions[idx].tick.as_ref().is_some_and(|t| t.waiting.is_empty()) {
            return;
        }
        let now = ctl.now();
        let Tick { walk, .. } = self.sessions[idx].tick.take().expect("checked");
        let objective = self.path_objective(&walk.path, now);
        let p = self.cfg.cram.rnn;
        let s = &mut self.sessions[idx];
        let lesson = match s.learner.learn(&walk, objective, &p) {
            Ok(l) => Some(l),
            Err(e) => {
                ctl.note("engine", &s.flow.to_string(), || e.to_string());
                None
            }
        };
        if let Some(o) = objective {
            s.learner.record(walk.path.clone(), o, now);
            if s.current.as_ref().is_some_and(|c| c.path == walk.path) {
                s.incumbent_objective = Some(o);
            }
        }
        self.events.push(EngineEvent {
            time: now,
            flow: s.flow.clone(),
            event: "measure",
            path: Some(walk.path.clone()),
            objective,
            reward: lesson.map(|l| l.reward),
            gamma: lesson.map(|l| l.gamma),
        });
        // links shared with other walks may have fresher values than the
        // last time a remembered path was walked
        let refreshed = self.sessions[idx].current.as_ref().and_then(|c| self.path_objective(&c.path, now));
        let mut history = std::mem::replace(&mut self.sessions[idx].learner.history, crate::cram::PathHistory::new(1));
        history.refresh(|p| self.path_objective(p, now));
        let s = &mut self.sessions[idx];
        s.learner.history = history;
        if refreshed.is_some() {
            s.incumbent_objective = refreshed;
        }
        let s = &self.sessions[idx];
        let Some(cur) = s.current.as_ref() else { return };
        let inc = Incumbent { path: &cur.path, installed_at: cur.installed_at, objective: s.incumbent_objective };
        if let Some(next) = s.learner.history.best_of_z(&inc, now, self.cfg.cram.min_hold) {
            let fresh = s.learner.history.records().rev().find(|r| r.path == next).is_some_and(|r| r.recorded_at == now);
            if fresh {
                self.start_change(ctl, idx, next);
            } else {
                self.sessions[idx].verify = Some(next);
            }
        }
    }

    fn start_change(&mut self, ctl: &mut Ctl<'_>, idx: usize, next: Path) {
        let now = ctl.now();
        let s = &self.sessions[idx];
        let Some(cur) = s.current.as_ref() else { return };
        match change_path(&self.topo, cur, &next, now, &self.cfg.ptm) {
            Ok(plan) => {
                let runner = PlanRunner::start(plan, PLAN_TAG | idx as u64, ctl, &mut self.flowmods);
                self.sessions[idx].runner = Some(runner);
                self.log(now, idx, "change", Some(next));
            }
            Err(e) => ctl.note("engine", &s.flow.to_string(), || e.to_string()),
        }
    }

    fn try_finish_sweep(&mut self, ctl: &mut Ctl<'_>) {
        if !self.sweep.as_ref().is_some_and(|w| w.is_empty()) {
            return;
        }
        self.sweep = None;
        let now = ctl.now();
        let snap: Snapshot = self
            .usable(ctl)
            .into_iter()
            .filter_map(|l| self.monitor.latest(l, Metric::Delay).filter(|v| v.is_finite()).map(|v| (l, v)))
            .collect();
        for idx in 0..self.sessions.len() {
            let s = &self.sessions[idx];
            if !s.monitored || s.runner.is_some() {
                continue;
            }
            let Some(cur) = s.current.as_ref() else { continue };
            let Ok((best, cost)) = optimal_path(&self.topo, &snap, s.src, s.dst) else { continue };
            let same = best == cur.path;
            self.events.push(EngineEvent {
                time: now,
                flow: s.flow.clone(),
                event: "measure",
                path: Some(best.clone()),
                objective: Some(cost),
                reward: None,
                gamma: None,
            });
            if !same {
                self.start_change(ctl, idx, best);
            }
        }
    }

    fn completions(&mut self, ctl: &mut Ctl<'_>, done: Vec<Completion>) {
        for c in done {
            let key = (c.link, c.kind);
            for idx in 0..self.sessions.len() {
                if self.sessions[idx].tick.as_mut().is_some_and(|t| t.waiting.remove(&key)) {
                    self.try_finish_tick(ctl, idx);
                }
            }
            if self.sweep.as_mut().is_some_and(|w| w.remove(&key)) {
                self.try_finish_sweep(ctl);
            }
        }
    }
}

impl ControllerApp for Engine {
    fn on_message(&mut self, ctl: &mut Ctl<'_>, from: NodeId, msg: ControlMsg) {
        if !self.started {
            self.start(ctl);
        }
        if let Some(done) = self.monitor.handle_message(ctl, from, &msg) {
            self.completions(ctl, done);
            return;
        }
        for idx in 0..self.sessions.len() {
            let Some(r) = self.sessions[idx].runner.as_mut() else { continue };
            if let Some(state) = r.on_message(ctl, &msg, &mut self.flowmods) {
                self.plan_progress(ctl, idx, Some(state));
                return;
            }
        }
        if let MsgBody::PacketIn { in_port, packet } = msg.body {
            self.on_packet_in(ctl, from, in_port, packet);
        }
    }

    fn on_timer(&mut self, ctl: &mut Ctl<'_>, token: u64) {
        if let Some(done) = self.monitor.handle_timer(ctl.now(), token) {
            self.completions(ctl, done);
            return;
        }
        let idx = (token & INDEX_MASK) as usize;
        if token & TICK_TAG != 0 && idx < self.sessions.len() {
            self.tick(ctl, idx, self.cfg.period);
        } else if token & PLAN_TAG != 0 && idx < self.sessions.len() {
            let Some(r) = self.sessions[idx].runner.as_mut() else { return };
            let state = r.on_timer(ctl, token, &mut self.flowmods);
            self.plan_progress(ctl, idx, state);
        } else if token == ROUND_TAG {
            let now = ctl.now();
            self.round(ctl, now);
        }
    }
}

#[cfg(test)]
mod tests;
