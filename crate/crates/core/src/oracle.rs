//! Global-monitoring baseline: exact shortest-delay paths over a full
//! link-state snapshot, and the comparison report between a CRE run and a
//! baseline run.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{ReportError, TopoError};
use crate::time::SimTime;
use crate::topo::{LinkId, NodeId, Path, Topology};

/// Link weights of one global probing round; links without an entry are
/// unusable.
pub type Snapshot = BTreeMap<LinkId, f64>;

#[derive(Clone, PartialEq)]
struct Label {
    cost: f64,
    nodes: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl Label {
    fn better(&self, other: &Label) -> bool {
        match self.cost.total_cmp(&other.cost) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.nodes < other.nodes,
        }
    }
}

struct Entry(Label);

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.cost.total_cmp(&self.0.cost).then_with(|| o.0.nodes.cmp(&self.0.nodes))
    }
}

/// Minimum-weight path from `s` to `d`. Among equal weights the
/// lexicographically smallest node sequence wins, then the lowest link ids.
pub fn optimal_path(topo: &Topology, snap: &Snapshot, s: NodeId, d: NodeId) -> Result<(Path, f64), TopoError> {
    for n in [s, d] {
        if topo.node(n).is_none() {
            return Err(TopoError::UnknownNode(n));
        }
    }
    let mut best: BTreeMap<NodeId, Label> = BTreeMap::new();
    let mut done: BTreeMap<NodeId, ()> = BTreeMap::new();
    let start = Label { cost: 0.0, nodes: vec![s], links: vec![] };
    best.insert(s, start.clone());
    let mut heap = BinaryHeap::from([Entry(start)]);
    while let Some(Entry(lab)) = heap.pop() {
        let v = *lab.nodes.last().expect("non-empty");
        if done.contains_key(&v) || best.get(&v).is_some_and(|b| b != &lab) {
            continue;
        }
        done.insert(v, ());
        if v == d {
            return Ok((Path { nodes: lab.nodes, links: lab.links }, lab.cost));
        }
        for l in topo.out_links(v) {
            let Some(&w) = snap.get(&l.id) else { continue };
            let u = l.dst.node;
            if !w.is_finite() || done.contains_key(&u) || lab.nodes.contains(&u) {
                continue;
            }
            let mut next = lab.clone();
            next.cost += w;
            next.nodes.push(u);
            next.links.push(l.id);
            if best.get(&u).is_none_or(|b| next.better(b)) {
                best.insert(u, next.clone());
                heap.push(Entry(next));
            }
        }
    }
    Err(TopoError::NoPath(s, d))
}

/// Exhaustive search over all simple paths; the reference for
/// [`optimal_path`].
pub fn brute_force_optimal(topo: &Topology, snap: &Snapshot, s: NodeId, d: NodeId) -> Option<(Path, f64)> {
    fn go(topo: &Topology, snap: &Snapshot, d: NodeId, cur: &mut Label, best: &mut Option<Label>) {
        let v = *cur.nodes.last().expect("non-empty");
        if v == d {
            if best.as_ref().is_none_or(|b| cur.better(b) || (cur.cost == b.cost && cur.nodes == b.nodes && cur.links < b.links)) {
                *best = Some(cur.clone());
            }
            return;
        }
        for l in topo.out_links(v) {
            let Some(&w) = snap.get(&l.id) else { continue };
            if !w.is_finite() || cur.nodes.contains(&l.dst.node) {
                continue;
            }
            let saved = cur.cost;
            cur.cost += w;
            cur.nodes.push(l.dst.node);
            cur.links.push(l.id);
            go(topo, snap, d, cur, best);
            cur.cost = saved;
            cur.nodes.pop();
            cur.links.pop();
        }
    }
    let mut best = None;
    go(topo, snap, d, &mut Label { cost: 0.0, nodes: vec![s], links: vec![] }, &mut best);
    best.map(|b| (Path { nodes: b.nodes, links: b.links }, b.cost))
}

/// What one run (CRE or baseline) contributes to the comparison.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub monitoring_units: u64,
    pub rounds: usize,
    /// When the last path change of the measured flows completed.
    pub converged_at: Option<SimTime>,
    /// Ping RTT once the run has settled, in milliseconds.
    pub final_rtt_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub opt_monitoring: u64,
    pub cre_monitoring: u64,
    pub monitoring_ratio: f64,
    pub rtt_gap_pct: f64,
    pub convergence_delta_s: f64,
}

pub fn gap_report(cre: &RunSummary, opt: &RunSummary) -> Result<GapReport, ReportError> {
    let (Some(c_rtt), Some(o_rtt)) = (cre.final_rtt_ms, opt.final_rtt_ms) else {
        return Err(ReportError::EmptyLogs);
    };
    if opt.monitoring_units == 0 || o_rtt <= 0.0 {
        return Err(ReportError::EmptyLogs);
    }
    let ratio = if cre.monitoring_units == 0 { f64::INFINITY } else { opt.monitoring_units as f64 / cre.monitoring_units as f64 };
    let t = |s: &RunSummary| s.converged_at.map_or(0.0, SimTime::as_secs_f64);
    Ok(GapReport {
        opt_monitoring: opt.monitoring_units,
        cre_monitoring: cre.monitoring_units,
        monitoring_ratio: ratio,
        rtt_gap_pct: 100.0 * (c_rtt - o_rtt) / o_rtt,
        convergence_delta_s: t(cre) - t(opt),
    })
}

/// `exp,opt_monitoring,cre_monitoring,delta_s,gap_pct`, one row per
/// experiment followed by an `avg` row.
pub fn table_csv(rows: &[GapReport]) -> String {
    let mut s = String::from("exp,opt_monitoring,cre_monitoring,delta_s,gap_pct\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{:.2},{:.2}", i + 1, r.opt_monitoring, r.cre_monitoring, r.convergence_delta_s, r.rtt_gap_pct);
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let avg = |f: &dyn Fn(&GapReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let _ = writeln!(
            s,
            "avg,{:.1},{:.1},{:.2},{:.2}",
            avg(&|r| r.opt_monitoring as f64),
            avg(&|r| r.cre_monitoring as f64),
            avg(&|r| r.convergence_delta_s),
            avg(&|r| r.rtt_gap_pct)
        );
    }
    s
}
