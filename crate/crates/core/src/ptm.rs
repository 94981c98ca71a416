//! Translates paths into flow rules and installs or changes them without
//! loss, loops or extra PacketIns.
//!
//! A new path is written from the last NFE back to the first, so every
//! downstream rule exists before the first NFE starts tagging packets. A
//! change writes the new chain under the other VLAN id, flips the first
//! NFE's rule in one modify, waits for in-flight packets to drain and only
//! then deletes the old chain.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use crate::error::PtmError;
use crate::simnet::{
    fmt_actions, Action, ControlMsg, FlowKey, FlowMatch, FlowModCommand, FlowRule, MsgBody, Southbound, Xid, CRE_PRIORITY,
};
use crate::time::SimTime;
use crate::topo::{NodeId, Path, PortNo, Topology};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtmConfig {
    /// Idle timeout of every installed rule.
    pub idle_timeout: Duration,
    /// Pause between flipping the first NFE and deleting the old chain.
    pub drain: Duration,
}

impl Default for PtmConfig {
    fn default() -> Self {
        PtmConfig { idle_timeout: Duration::from_secs(10), drain: Duration::from_secs(1) }
    }
}

/// The rule chain currently carrying a flow.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstalledPath {
    pub flow: FlowKey,
    pub path: Path,
    /// Egress port at each NFE of the path; the last one faces the host.
    pub egress: Vec<PortNo>,
    /// VLAN id of the chain, 1 or 2. Zero for a single-NFE rule.
    pub vlan: u16,
    pub installed_at: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuleOp {
    pub nfe: NodeId,
    pub command: FlowModCommand,
    pub rule: FlowRule,
}

/// Rule operations sent together; every NFE touched gets a barrier and the
/// phase ends when all barriers are answered and `wait_after` has passed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Phase {
    pub ops: Vec<RuleOp>,
    pub wait_after: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub phases: Vec<Phase>,
    /// State once the plan has run.
    pub result: InstalledPath,
}

impl Plan {
    pub fn ops(&self) -> impl Iterator<Item = &RuleOp> {
        self.phases.iter().flat_map(|p| p.ops.iter())
    }
}

fn rule(flow: &FlowKey, vlan: Option<u16>, actions: Vec<Action>, cfg: &PtmConfig) -> FlowRule {
    FlowRule {
        matching: FlowMatch { flow: flow.clone(), vlan },
        actions,
        idle_timeout: cfg.idle_timeout,
        hard_timeout: Duration::ZERO,
        priority: CRE_PRIORITY,
    }
}

/// Egress ports along `path` for `flow`, ending with the destination host port.
fn egress_ports(topo: &Topology, flow: &FlowKey, path: &Path) -> Result<Vec<PortNo>, PtmError> {
    let src = topo.host(&flow.src_host).ok_or(PtmError::Endpoints)?;
    let dst = topo.host(&flow.dst_host).ok_or(PtmError::Endpoints)?;
    if path.nodes.is_empty() || path.src() != src.attach.node || path.dst() != dst.attach.node || !path.is_simple() {
        return Err(PtmError::Endpoints);
    }
    if path.links.len() + 1 != path.nodes.len() {
        return Err(PtmError::Endpoints);
    }
    let mut out = Vec::with_capacity(path.nodes.len());
    for (i, l) in path.links.iter().enumerate() {
        let link = topo.link(*l);
        if link.src.node != path.nodes[i] || link.dst.node != path.nodes[i + 1] {
            return Err(PtmError::Endpoints);
        }
        out.push(link.src.port_no);
    }
    out.push(dst.attach.port_no);
    Ok(out)
}

/// Downstream chain (last NFE back to the second) under `vlan`.
fn downstream(flow: &FlowKey, path: &Path, egress: &[PortNo], vlan: u16, cfg: &PtmConfig) -> Vec<RuleOp> {
    let n = path.nodes.len();
    (1..n)
        .rev()
        .map(|i| {
            let actions = if i == n - 1 { vec![Action::PopVlan, Action::Output(egress[i])] } else { vec![Action::Output(egress[i])] };
            RuleOp { nfe: path.nodes[i], command: FlowModCommand::Add, rule: rule(flow, Some(vlan), actions, cfg) }
        })
        .collect()
}

fn ingress(flow: &FlowKey, path: &Path, egress: &[PortNo], vlan: u16, command: FlowModCommand, cfg: &PtmConfig) -> RuleOp {
    RuleOp { nfe: path.nodes[0], command, rule: rule(flow, None, vec![Action::PushVlan(vlan), Action::Output(egress[0])], cfg) }
}

/// Rules for a flow that has none yet, tagged with VLAN 1.
pub fn install_new_path(topo: &Topology, flow: &FlowKey, path: &Path, now: SimTime, cfg: &PtmConfig) -> Result<Plan, PtmError> {
    if path.nodes.len() < 2 {
        return Err(PtmError::PathTooShort(path.nodes.len()));
    }
    let egress = egress_ports(topo, flow, path)?;
    let vlan = 1;
    let phases = vec![
        Phase { ops: downstream(flow, path, &egress, vlan, cfg), wait_after: Duration::ZERO },
        Phase { ops: vec![ingress(flow, path, &egress, vlan, FlowModCommand::Add, cfg)], wait_after: Duration::ZERO },
    ];
    Ok(Plan { phases, result: InstalledPath { flow: flow.clone(), path: path.clone(), egress, vlan, installed_at: now } })
}

/// Moves `old.flow` onto `new_path` under the other VLAN id.
pub fn change_path(topo: &Topology, old: &InstalledPath, new_path: &Path, now: SimTime, cfg: &PtmConfig) -> Result<Plan, PtmError> {
    if new_path.nodes.len() < 2 || old.path.nodes.len() < 2 {
        return Err(PtmError::PathTooShort(new_path.nodes.len().min(old.path.nodes.len())));
    }
    if &old.path == new_path {
        return Err(PtmError::SamePath);
    }
    let flow = &old.flow;
    let egress = egress_ports(topo, flow, new_path)?;
    let vlan = if old.vlan == 1 { 2 } else { 1 };
    let retire = (1..old.path.nodes.len())
        .rev()
        .map(|i| RuleOp { nfe: old.path.nodes[i], command: FlowModCommand::Delete, rule: rule(flow, Some(old.vlan), Vec::new(), cfg) })
        .collect();
    let phases = vec![
        Phase { ops: downstream(flow, new_path, &egress, vlan, cfg), wait_after: Duration::ZERO },
        Phase { ops: vec![ingress(flow, new_path, &egress, vlan, FlowModCommand::Modify, cfg)], wait_after: cfg.drain },
        Phase { ops: retire, wait_after: Duration::ZERO },
    ];
    Ok(Plan { phases, result: InstalledPath { flow: flow.clone(), path: new_path.clone(), egress, vlan, installed_at: now } })
}

/// One untagged rule for hosts on the same NFE.
pub fn single_switch_rule(topo: &Topology, flow: &FlowKey, now: SimTime, cfg: &PtmConfig) -> Result<Plan, PtmError> {
    let src = topo.host(&flow.src_host).ok_or(PtmError::Endpoints)?;
    let dst = topo.host(&flow.dst_host).ok_or(PtmError::Endpoints)?;
    if src.attach.node != dst.attach.node {
        return Err(PtmError::NotColocated);
    }
    let nfe = src.attach.node;
    let op = RuleOp { nfe, command: FlowModCommand::Add, rule: rule(flow, None, vec![Action::Output(dst.attach.port_no)], cfg) };
    Ok(Plan {
        phases: vec![Phase { ops: vec![op], wait_after: Duration::ZERO }],
        result: InstalledPath { flow: flow.clone(), path: Path::single(nfe), egress: vec![dst.attach.port_no], vlan: 0, installed_at: now },
    })
}

/// One line of the rule audit log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowModEntry {
    pub time: SimTime,
    pub nfe: NodeId,
    pub op: FlowModCommand,
    pub matching: String,
    pub actions: String,
    pub vlan: Option<u16>,
}

/// `time_ms,nfe,op,match,actions,vlan`
pub fn flowmod_csv(log: &[FlowModEntry]) -> String {
    let mut s = String::from("time_ms,nfe,op,match,actions,vlan\n");
    for e in log {
        let vlan = e.vlan.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{:.3},{},{},{},{},{}", e.time.as_millis_f64(), e.nfe, e.op, e.matching, e.actions.replace(',', ";"), vlan);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunState {
    Running,
    Done,
}

/// Executes a [`Plan`] phase by phase over the control channel.
#[derive(Debug)]
pub struct PlanRunner {
    plan: Plan,
    phase: usize,
    barriers: BTreeSet<Xid>,
    mods: BTreeSet<Xid>,
    timer: u64,
    waiting: bool,
    /// Error replies received for this plan's rule operations.
    pub errors: Vec<String>,
}

impl PlanRunner {
    /// Sends the first phase. `timer` is the token used for drain waits.
    pub fn start<S: Southbound + ?Sized>(plan: Plan, timer: u64, sb: &mut S, log: &mut Vec<FlowModEntry>) -> Self {
        let mut r =
            PlanRunner { plan, phase: 0, barriers: BTreeSet::new(), mods: BTreeSet::new(), timer, waiting: false, errors: Vec::new() };
        r.send_phase(sb, log);
        r
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn is_done(&self) -> bool {
        self.phase >= self.plan.phases.len()
    }

    /// Phases fully completed so far.
    pub fn phases_done(&self) -> usize {
        self.phase
    }

    fn send_phase<S: Southbound + ?Sized>(&mut self, sb: &mut S, log: &mut Vec<FlowModEntry>) {
        let Some(phase) = self.plan.phases.get(self.phase) else { return };
        let now = sb.now();
        let mut touched: Vec<NodeId> = Vec::new();
        for op in &phase.ops {
            log.push(FlowModEntry {
                time: now,
                nfe: op.nfe,
                op: op.command,
                matching: op.rule.matching.flow.to_string(),
                actions: fmt_actions(&op.rule.actions),
                vlan: op.rule.matching.vlan,
            });
            let xid = sb.send(op.nfe, MsgBody::FlowMod { command: op.command, rule: op.rule.clone() });
            self.mods.insert(xid);
            if touched.last() != Some(&op.nfe) {
                if let Some(prev) = touched.last().copied() {
                    self.barriers.insert(sb.send(prev, MsgBody::BarrierRequest));
                }
                touched.push(op.nfe);
            }
        }
        if let Some(last) = touched.last().copied() {
            self.barriers.insert(sb.send(last, MsgBody::BarrierRequest));
        }
        if self.barriers.is_empty() {
            self.finish_phase(sb, log);
        }
    }

    fn finish_phase<S: Southbound + ?Sized>(&mut self, sb: &mut S, log: &mut Vec<FlowModEntry>) {
        let wait = self.plan.phases[self.phase].wait_after;
        if wait.is_zero() {
            self.phase += 1;
            self.send_phase(sb, log);
        } else {
            self.waiting = true;
            let at = sb.now() + wait;
            sb.set_timer(at, self.timer);
        }
    }

    /// Feeds a switch message; `None` when it does not belong to this plan.
    pub fn on_message<S: Southbound + ?Sized>(&mut self, sb: &mut S, msg: &ControlMsg, log: &mut Vec<FlowModEntry>) -> Option<RunState> {
        match &msg.body {
            MsgBody::BarrierReply if self.barriers.remove(&msg.xid) => {
                if self.barriers.is_empty() && !self.waiting && !self.is_done() {
                    self.finish_phase(sb, log);
                }
            }
            MsgBody::Error { reason } if self.mods.contains(&msg.xid) => self.errors.push(reason.clone()),
            _ => return None,
        }
        Some(self.state())
    }

    /// Handles the drain timer; `None` when `token` is not this plan's.
    pub fn on_timer<S: Southbound + ?Sized>(&mut self, sb: &mut S, token: u64, log: &mut Vec<FlowModEntry>) -> Option<RunState> {
        if token != self.timer || !self.waiting {
            return None;
        }
        self.waiting = false;
        self.phase += 1;
        self.send_phase(sb, log);
        Some(self.state())
    }

    fn state(&self) -> RunState {
        if self.is_done() {
            RunState::Done
        } else {
            RunState::Running
        }
    }
}
