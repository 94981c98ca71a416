//! Single-table OpenFlow-style flow matching.

use std::fmt;
use std::time::Duration;

use serde::Serialize;

use super::packet::{FlowKey, Packet};
use crate::error::SimError;
use crate::time::SimTime;
use crate::topo::{NodeId, PortNo};

/// Priority used for every rule the routing engine installs. The implicit
/// table-miss entry sits below any explicit rule.
pub const CRE_PRIORITY: u16 = 100;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FlowMatch {
    pub flow: FlowKey,
    /// `None` leaves the VLAN field wildcarded.
    pub vlan: Option<u16>,
}

impl FlowMatch {
    pub fn matches(&self, pkt: &Packet) -> bool {
        match pkt.flow() {
            Some(f) if *f == self.flow => self.vlan.is_none_or(|v| pkt.vlan == Some(v)),
            _ => false,
        }
    }
}

impl fmt::Display for FlowMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.vlan {
            Some(v) => write!(f, "{}+vlan{}", self.flow, v),
            None => write!(f, "{}", self.flow),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Action {
    PushVlan(u16),
    PopVlan,
    Output(PortNo),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::PushVlan(v) => write!(f, "push_vlan({v})"),
            Action::PopVlan => f.write_str("pop_vlan"),
            Action::Output(p) => write!(f, "output({p})"),
        }
    }
}

pub fn fmt_actions(actions: &[Action]) -> String {
    actions.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowRule {
    pub matching: FlowMatch,
    pub actions: Vec<Action>,
    pub idle_timeout: Duration,
    pub hard_timeout: Duration,
    pub priority: u16,
}

impl FlowRule {
    pub fn validate(&self) -> Result<(), SimError> {
        let outputs = self.actions.iter().filter(|a| matches!(a, Action::Output(_))).count();
        if outputs > 1 {
            return Err(SimError::InvalidRule("more than one output action"));
        }
        if self.actions.iter().any(|a| matches!(a, Action::PushVlan(v) if *v == 0 || *v > 4094)) {
            return Err(SimError::InvalidRule("VLAN id out of range"));
        }
        if let Some(v) = self.matching.vlan {
            if v == 0 || v > 4094 {
                return Err(SimError::InvalidRule("VLAN id out of range"));
            }
        }
        Ok(())
    }

    pub fn output_port(&self) -> Option<PortNo> {
        self.actions.iter().find_map(|a| match a {
            Action::Output(p) => Some(*p),
            _ => None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum FlowModCommand {
    Add,
    /// Strict modify: rewrites actions and timeouts of the rule with the
    /// same match and priority, keeping its counters and age.
    Modify,
    /// Strict delete of the rule with the same match and priority.
    Delete,
}

impl fmt::Display for FlowModCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowModCommand::Add => "add",
            FlowModCommand::Modify => "modify",
            FlowModCommand::Delete => "delete",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstalledRule {
    pub id: u64,
    pub rule: FlowRule,
    pub installed_at: SimTime,
    pub last_hit: SimTime,
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default)]
pub struct FlowTable {
    rules: Vec<InstalledRule>,
    next_id: u64,
}

/// What a flow-mod did to the table; the caller uses it to arm timeouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModOutcome {
    Installed(u64),
    Modified(u64),
    Deleted(u64),
}

impl FlowTable {
    pub fn rules(&self) -> &[InstalledRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn position(&self, m: &FlowMatch, priority: u16) -> Option<usize> {
        self.rules.iter().position(|r| r.rule.matching == *m && r.rule.priority == priority)
    }

    pub fn apply(&mut self, nfe: NodeId, cmd: FlowModCommand, rule: FlowRule, now: SimTime) -> Result<ModOutcome, SimError> {
        rule.validate()?;
        let pos = self.position(&rule.matching, rule.priority);
        match (cmd, pos) {
            (FlowModCommand::Add, Some(i)) => {
                // identical match and priority: overwrite, counters reset
                let id = self.fresh_id();
                self.rules[i] = InstalledRule { id, rule, installed_at: now, last_hit: now, packets: 0, bytes: 0 };
                Ok(ModOutcome::Installed(id))
            }
            (FlowModCommand::Add, None) => {
                let id = self.fresh_id();
                self.rules.push(InstalledRule { id, rule, installed_at: now, last_hit: now, packets: 0, bytes: 0 });
                Ok(ModOutcome::Installed(id))
            }
            (FlowModCommand::Modify, Some(i)) => {
                let r = &mut self.rules[i];
                r.rule.actions = rule.actions;
                r.rule.idle_timeout = rule.idle_timeout;
                r.rule.hard_timeout = rule.hard_timeout;
                Ok(ModOutcome::Modified(r.id))
            }
            (FlowModCommand::Delete, Some(i)) => Ok(ModOutcome::Deleted(self.rules.remove(i).id)),
            (FlowModCommand::Modify | FlowModCommand::Delete, None) => Err(SimError::NoSuchRule(nfe)),
        }
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// Highest-priority matching rule; among equal priorities the oldest wins.
    pub fn lookup(&mut self, pkt: &Packet, now: SimTime) -> Option<&InstalledRule> {
        let mut best: Option<usize> = None;
        for (i, r) in self.rules.iter().enumerate() {
            if r.rule.matching.matches(pkt) && best.is_none_or(|b| r.rule.priority > self.rules[b].rule.priority) {
                best = Some(i);
            }
        }
        let r = &mut self.rules[best?];
        r.last_hit = now;
        r.packets += 1;
        r.bytes += u64::from(pkt.size_bytes);
        Some(r)
    }

    pub fn get(&self, id: u64) -> Option<&InstalledRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn remove(&mut self, id: u64) -> Option<InstalledRule> {
        let i = self.rules.iter().position(|r| r.id == id)?;
        Some(self.rules.remove(i))
    }

    /// Rules matching `flow`, any VLAN.
    pub fn rules_for(&self, flow: &FlowKey) -> impl Iterator<Item = &InstalledRule> + '_ {
        let flow = flow.clone();
        self.rules.iter().filter(move |r| r.rule.matching.flow == flow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::packet::{AppData, PacketId, Payload};

    fn pkt(vlan: Option<u16>) -> Packet {
        Packet {
            id: PacketId(1),
            size_bytes: 100,
            vlan,
            payload: Payload::Data { flow: FlowKey::new("H1", "H2", 1), app: AppData::Raw },
            injected_at: SimTime::ZERO,
            visited: vec![],
        }
    }

    fn rule(vlan: Option<u16>, actions: Vec<Action>, priority: u16) -> FlowRule {
        FlowRule {
            matching: FlowMatch { flow: FlowKey::new("H1", "H2", 1), vlan },
            actions,
            idle_timeout: Duration::from_secs(10),
            hard_timeout: Duration::ZERO,
            priority,
        }
    }

    #[test]
    fn untagged_packet_misses_vlan_rules() {
        let mut t = FlowTable::default();
        t.apply(NodeId(1), FlowModCommand::Add, rule(Some(1), vec![Action::PopVlan, Action::Output(PortNo(3))], 100), SimTime::ZERO)
            .unwrap();
        assert!(t.lookup(&pkt(None), SimTime(1)).is_none());
        let hit = t.lookup(&pkt(Some(1)), SimTime(2)).unwrap();
        assert_eq!(hit.rule.actions, vec![Action::PopVlan, Action::Output(PortNo(3))]);
        assert_eq!(hit.last_hit, SimTime(2));
    }

    #[test]
    fn higher_priority_wins() {
        let mut t = FlowTable::default();
        t.apply(NodeId(1), FlowModCommand::Add, rule(None, vec![Action::Output(PortNo(2))], 10), SimTime::ZERO).unwrap();
        t.apply(NodeId(1), FlowModCommand::Add, rule(None, vec![Action::Output(PortNo(3))], 20), SimTime::ZERO).unwrap();
        assert_eq!(t.lookup(&pkt(None), SimTime(1)).unwrap().rule.output_port(), Some(PortNo(3)));
    }

    #[test]
    fn modify_and_delete_need_an_existing_rule() {
        let mut t = FlowTable::default();
        let r = rule(None, vec![Action::Output(PortNo(2))], 100);
        assert_eq!(t.apply(NodeId(4), FlowModCommand::Modify, r.clone(), SimTime::ZERO), Err(SimError::NoSuchRule(NodeId(4))));
        assert_eq!(t.apply(NodeId(4), FlowModCommand::Delete, r.clone(), SimTime::ZERO), Err(SimError::NoSuchRule(NodeId(4))));
        let ModOutcome::Installed(id) = t.apply(NodeId(4), FlowModCommand::Add, r.clone(), SimTime::ZERO).unwrap() else { panic!() };
        let mut changed = r.clone();
        changed.actions = vec![Action::PushVlan(2), Action::Output(PortNo(5))];
        assert_eq!(t.apply(NodeId(4), FlowModCommand::Modify, changed, SimTime(3)).unwrap(), ModOutcome::Modified(id));
        assert_eq!(t.rules()[0].rule.output_port(), Some(PortNo(5)));
        assert_eq!(t.apply(NodeId(4), FlowModCommand::Delete, r, SimTime(4)).unwrap(), ModOutcome::Deleted(id));
        assert!(t.is_empty());
    }

    #[test]
    fn two_outputs_rejected() {
        let r = rule(None, vec![Action::Output(PortNo(1)), Action::Output(PortNo(2))], 1);
        assert!(r.validate().is_err());
    }
}
