//! Cognitive routing: per-NFE random neural networks trained by
//! reinforcement learning propose candidate paths for each flow.

mod history;
mod reward;
mod rnn;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::Rng;
use serde::Serialize;

pub use history::{Incumbent, PathHistory, PathRecord};
pub use reward::RewardState;
pub use rnn::{Branch, Mode, RnnParams, RnnState, EPS_FLOOR, Q_CAP};

use crate::error::CramError;
use crate::simnet::FlowKey;
use crate::time::SimTime;
use crate::topo::{Link, NodeId, Path, PortNo, Topology};

#[derive(Clone, Debug, PartialEq)]
pub struct CramConfig {
    /// Per-hop probability of picking a random port.
    pub explore_prob: f64,
    /// Size of the recent-path window.
    pub z: usize,
    /// Minimum time a path stays installed before it may be replaced.
    pub min_hold: Duration,
    pub alpha: f64,
    pub beta: f64,
    /// Reward of the success lesson that points a fresh RNN at the neighbour
    /// nearest (in hops) to the destination. 0 leaves fresh RNNs uniform.
    pub hop_prior: f64,
    /// Walks may be at most this many hops longer than the shortest path.
    pub max_detour: Option<usize>,
    pub rnn: RnnParams,
}

impl Default for CramConfig {
    fn default() -> Self {
        CramConfig {
            explore_prob: 0.05,
            z: 5,
            min_hold: Duration::from_secs(5),
            alpha: 0.5,
            beta: 0.8,
            hop_prior: 1.0,
            max_detour: Some(2),
            rnn: RnnParams::default(),
        }
    }
}

/// A path proposed by the RNNs with the neuron fired at each hop.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub path: Path,
    pub decisions: Vec<(NodeId, usize)>,
    /// NFEs whose RNN was created during this walk.
    pub created: Vec<NodeId>,
}

/// Outcome of one reinforcement round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Lesson {
    pub reward: f64,
    pub gamma: f64,
    pub branch: Branch,
}

/// All learning state of one flow.
#[derive(Clone, Debug)]
pub struct FlowLearner {
    pub flow: FlowKey,
    pub rnns: BTreeMap<NodeId, RnnState>,
    pub reward: RewardState,
    pub history: PathHistory,
}

impl FlowLearner {
    pub fn new(flow: FlowKey, cfg: &CramConfig) -> Self {
        FlowLearner { flow, rnns: BTreeMap::new(), reward: RewardState::new(cfg.alpha, cfg.beta), history: PathHistory::new(cfg.z) }
    }

    /// Creates the RNN of `nfe` over its usable ports unless it exists.
    /// Returns true when a new network was made.
    pub fn ensure_rnn(&mut self, topo: &Topology, usable: &dyn Fn(&Link) -> bool, nfe: NodeId, p: &RnnParams) -> Result<bool, CramError> {
        if self.rnns.contains_key(&nfe) {
            return Ok(false);
        }
        let ports: Vec<PortNo> = topo.out_links(nfe).filter(|l| usable(l)).map(|l| l.src.port_no).collect();
        let rnn = RnnState::new(self.flow.clone(), nfe, &ports, p)?;
        self.rnns.insert(nfe, rnn);
        Ok(true)
    }

    /// Walks from `src` to `dst` letting each NFE's RNN pick the egress port.
    ///
    /// Ports towards visited NFEs, or towards NFEs that can no longer reach
    /// `dst` without revisiting one, are forbidden. A dead end backtracks one
    /// hop and forbids the port that led there.
    pub fn build_path<R: Rng + ?Sized>(
        &mut self,
        topo: &Topology,
        usable: &dyn Fn(&Link) -> bool,
        src: NodeId,
        dst: NodeId,
        cfg: &CramConfig,
        rng: &mut R,
    ) -> Result<Walk, CramError> {
        if topo.node(src).is_none() || topo.node(dst).is_none() {
            return Err(CramError::NoPath(src, dst));
        }
        let mut nodes = vec![src];
        let mut links = Vec::new();
        let mut decisions: Vec<(NodeId, usize)> = Vec::new();
        let mut created = Vec::new();
        let mut dead: BTreeMap<NodeId, BTreeSet<PortNo>> = BTreeMap::new();
        let limit = match cfg.max_detour {
            Some(extra) => match topo.hop_distances_to(dst, |l| usable(l)).get(&src) {
                Some(d) => d + extra,
                None => return Err(CramError::NoPath(src, dst)),
            },
            None => usize::MAX,
        };
        loop {
            let cur = *nodes.last().expect("never empty");
            if cur == dst {
                return Ok(Walk { path: Path { nodes, links }, decisions, created });
            }
            let visited: BTreeSet<NodeId> = nodes.iter().copied().collect();
            let reach = topo.hop_distances_to(dst, |l| usable(l) && !visited.contains(&l.src.node) && !visited.contains(&l.dst.node));
            let mut choice = None;
            if self.ensure_rnn(topo, usable, cur, &cfg.rnn).unwrap_or(false) {
                created.push(cur);
                if cfg.hop_prior > 0.0 {
                    let toward =
                        topo.out_links(cur).filter(|l| usable(l)).filter_map(|l| reach.get(&l.dst.node).map(|d| (*d, l.src.port_no))).min();
                    if let Some((_, port)) = toward {
                        self.prime(cur, port, cfg.hop_prior, &cfg.rnn)?;
                    }
                }
            }
            if let Some(rnn) = self.rnns.get(&cur) {
                let mut forbidden = dead.get(&cur).cloned().unwrap_or_default();
                for &port in &rnn.neurons {
                    let ok = topo
                        .link_from_port(cur, port)
                        .map(|id| topo.link(id))
                        .is_some_and(|l| usable(l) && reach.get(&l.dst.node).is_some_and(|d| links.len() + 1 + d <= limit));
                    if !ok {
                        forbidden.insert(port);
                    }
                }
                let mode = if rng.gen_bool(cfg.explore_prob.clamp(0.0, 1.0)) { Mode::Explore } else { Mode::Exploit };
                if let Ok(i) = rnn.select(mode, &forbidden, rng) {
                    choice = Some((i, rnn.neurons[i]));
                }
            }
            match choice {
                Some((i, port)) => {
                    let id = topo.link_from_port(cur, port).expect("checked above");
                    decisions.push((cur, i));
                    links.push(id);
                    nodes.push(topo.link(id).dst.node);
                }
                None if cur == src => return Err(CramError::NoPath(src, dst)),
                None => {
                    dead.remove(&cur);
                    nodes.pop();
                    links.pop();
                    let (prev, i) = decisions.pop().expect("one decision per hop");
                    let port = self.rnns[&prev].neurons[i];
                    dead.entry(prev).or_default().insert(port);
                }
            }
        }
    }

    /// Success lesson on a single RNN, biasing it towards `port`.
    pub fn prime(&mut self, nfe: NodeId, port: PortNo, reward: f64, p: &RnnParams) -> Result<(), CramError> {
        let rnn = self.rnns.get_mut(&nfe).ok_or(CramError::NoPorts)?;
        let i = rnn.neuron_of(port).ok_or(CramError::BadNeuron(port.0 as usize))?;
        rnn.reinforce(i, reward, reward, p)?;
        Ok(())
    }

    /// Turns a path measurement into a reward and trains every RNN on the
    /// walk. `None` means the path could not be measured.
    pub fn learn(&mut self, walk: &Walk, objective: Option<f64>, p: &RnnParams) -> Result<Lesson, CramError> {
        let reward = match objective {
            Some(o) => self.reward.compute_reward(o)?,
            None => self.reward.sentinel(),
        };
        let gamma = self.reward.update_threshold(reward);
        let mut branch = Branch::Success;
        for &(nfe, i) in &walk.decisions {
            let rnn = self.rnns.get_mut(&nfe).ok_or(CramError::BadNeuron(i))?;
            branch = rnn.reinforce(i, reward, gamma, p)?;
        }
        Ok(Lesson { reward, gamma, branch })
    }

    pub fn record(&mut self, path: Path, objective: f64, at: SimTime) {
        self.history.push(PathRecord { path, objective, recorded_at: at });
    }

    /// JSON snapshot of every RNN of the flow.
    pub fn dump_json(&self) -> String {
        let all: Vec<&RnnState> = self.rnns.values().collect();
        serde_json::to_string_pretty(&all).expect("plain data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::millis;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Topology {
        Topology::from_json(crate::topo::SCENARIO1_TOPO).unwrap()
    }

    fn flow() -> FlowKey {
        FlowKey::new("H1", "H2", 1)
    }

    fn up(l: &Link) -> bool {
        l.is_up()
    }

    fn exploit_only() -> CramConfig {
        CramConfig { explore_prob: 0.0, ..CramConfig::default() }
    }

    #[test]
    fn symmetric_walk_takes_lowest_port() {
        let t = triangle();
        let mut fl = FlowLearner::new(flow(), &exploit_only());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = fl.build_path(&t, &up, NodeId(1), NodeId(2), &exploit_only(), &mut rng).unwrap();
        // N1 port 2 goes to N2
        assert_eq!(w.path.nodes, vec![NodeId(1), NodeId(2)]);
        assert_eq!(w.created, vec![NodeId(1)]);
    }

    /// N1 reaches N2 directly or round N3..N6; N1's lowest port faces N3.
    fn ring() -> Topology {
        let mut b = Topology::builder();
        for n in 1..=6 {
            b.node(n);
        }
        for (a, c) in [(1, 3), (1, 2), (3, 4), (4, 5), (5, 6), (6, 2)] {
            b.duplex(a, c, millis(1.0), 1_000_000);
        }
        b.build().unwrap()
    }

    #[test]
    fn hop_prior_points_fresh_rnns_at_the_destination() {
        let t = ring();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flat = CramConfig { hop_prior: 0.0, max_detour: None, ..exploit_only() };
        let w = FlowLearner::new(flow(), &flat).build_path(&t, &up, NodeId(1), NodeId(2), &flat, &mut rng).unwrap();
        assert_eq!(w.path.nodes[1], NodeId(3));
        let primed = CramConfig { max_detour: None, ..exploit_only() };
        let w = FlowLearner::new(flow(), &primed).build_path(&t, &up, NodeId(1), NodeId(2), &primed, &mut rng).unwrap();
        assert_eq!(w.path.nodes, vec![NodeId(1), NodeId(2)]);
    }

    #[test]
    fn detour_budget_caps_walk_length() {
        let t = ring();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wild = CramConfig { explore_prob: 1.0, hop_prior: 0.0, max_detour: None, ..CramConfig::default() };
        let mut fl = FlowLearner::new(flow(), &wild);
        let long = (0..200).filter(|_| fl.build_path(&t, &up, NodeId(1), NodeId(2), &wild, &mut rng).unwrap().path.hop_count() > 1).count();
        assert!(long > 0);
        let capped = CramConfig { max_detour: Some(2), ..wild };
        let mut fl = FlowLearner::new(flow(), &capped);
        for _ in 0..200 {
            let w = fl.build_path(&t, &up, NodeId(1), NodeId(2), &capped, &mut rng).unwrap();
            assert_eq!(w.path.hop_count(), 1);
        }
    }

    #[test]
    fn walk_via_n3_never_returns_to_n1() {
        let t = triangle();
        let cfg = exploit_only();
        let mut fl = FlowLearner::new(flow(), &cfg);
        fl.ensure_rnn(&t, &up, NodeId(1), &cfg.rnn).unwrap();
        let to_n3 = fl.rnns[&NodeId(1)].neuron_of(PortNo(3)).unwrap();
        for _ in 0..20 {
            fl.rnns.get_mut(&NodeId(1)).unwrap().reinforce(to_n3, 1.0, 0.5, &cfg.rnn).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = fl.build_path(&t, &up, NodeId(1), NodeId(2), &cfg, &mut rng).unwrap();
        assert_eq!(w.path.nodes, vec![NodeId(1), NodeId(3), NodeId(2)]);
        // N3's lowest port points back at N1 and must be skipped
        assert_eq!(w.decisions.len(), 2);
    }

    #[test]
    fn exploit_walk_is_deterministic() {
        let t = Topology::from_json(crate::topo::GEANT_TOPO).unwrap();
        let cfg = exploit_only();
        let run = |seed| {
            let mut fl = FlowLearner::new(flow(), &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            fl.build_path(&t, &up, NodeId(1), NodeId(23), &cfg, &mut rng).unwrap().path
        };
        assert_eq!(run(1), run(99));
    }

    #[test]
    fn success_and_failure_steer_the_walk() {
        let t = triangle();
        let cfg = exploit_only();
        let mut fl = FlowLearner::new(flow(), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let direct = fl.build_path(&t, &up, NodeId(1), NodeId(2), &cfg, &mut rng).unwrap();
        let l = fl.learn(&direct, Some(0.07), &cfg.rnn).unwrap();
        assert_eq!(l.branch, Branch::Success);
        assert_eq!(l.reward, l.gamma);
        // a much worse sample fails and pushes the walk elsewhere
        let mut last = direct.clone();
        for _ in 0..50 {
            last = fl.build_path(&t, &up, NodeId(1), NodeId(2), &cfg, &mut rng).unwrap();
            if last.path != direct.path {
                break;
            }
            assert_eq!(fl.learn(&last, Some(10.0), &cfg.rnn).unwrap().branch, Branch::Failure);
        }
        assert_eq!(last.path.nodes, vec![NodeId(1), NodeId(3), NodeId(2)]);
        assert!(fl.dump_json().contains("\"w_plus\""));
    }

    #[test]
    fn unreachable_destination_errors() {
        let mut b = Topology::builder();
        b.node(1).node(2).node(3).duplex(1, 2, millis(1.0), 1_000_000);
        let t = b.build().unwrap();
        let cfg = CramConfig::default();
        let mut fl = FlowLearner::new(flow(), &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(fl.build_path(&t, &up, NodeId(1), NodeId(3), &cfg, &mut rng), Err(CramError::NoPath(NodeId(1), NodeId(3))));
    }

    #[test]
    fn stale_rnn_port_forces_a_backtrack() {
        // 1-2, 1-3, 2-4, 3-4; RNN at 2 only knows the port back to 1
        let mut b = Topology::builder();
        for n in 1..=4 {
            b.node(n);
        }
        b.duplex(1, 2, millis(1.0), 1_000_000).duplex(1, 3, millis(1.0), 1_000_000).duplex(2, 4, millis(1.0), 1_000_000).duplex(
            3,
            4,
            millis(1.0),
            1_000_000,
        );
        let t = b.build().unwrap();
        let cfg = exploit_only();
        let mut fl = FlowLearner::new(flow(), &cfg);
        let back = t.link_between(NodeId(2), NodeId(1)).unwrap();
        let stale = RnnState::new(flow(), NodeId(2), &[t.link(back).src.port_no], &cfg.rnn).unwrap();
        fl.rnns.insert(NodeId(2), stale);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = fl.build_path(&t, &up, NodeId(1), NodeId(4), &cfg, &mut rng).unwrap();
        assert_eq!(w.path.nodes, vec![NodeId(1), NodeId(3), NodeId(4)]);
        assert_eq!(w.decisions.len(), 2);
    }

    fn all_simple_paths(t: &Topology, s: NodeId, d: NodeId) -> Vec<Vec<NodeId>> {
        fn go(t: &Topology, d: NodeId, cur: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
            let v = *cur.last().unwrap();
            if v == d {
                out.push(cur.clone());
                return;
            }
            let nexts: BTreeSet<NodeId> = t.out_links(v).map(|l| l.dst.node).collect();
            for n in nexts {
                if !cur.contains(&n) {
                    cur.push(n);
                    go(t, d, cur, out);
                    cur.pop();
                }
            }
        }
        let mut out = Vec::new();
        go(t, d, &mut vec![s], &mut out);
        out
    }

    proptest! {
        #[test]
        fn walks_are_simple_and_real(
            n in 2u64..=6,
            edges in proptest::collection::vec((1u64..=6, 1u64..=6), 1..15),
            seed in any::<u64>(),
        ) {
            let mut b = Topology::builder();
            for i in 1..=n {
                b.node(i);
            }
            let mut seen = BTreeSet::new();
            for (a, c) in edges {
                let (a, c) = ((a - 1) % n + 1, (c - 1) % n + 1);
                if a != c && seen.insert((a.min(c), a.max(c))) {
                    b.duplex(a, c, millis(1.0), 1_000_000);
                }
            }
            let t = b.build().unwrap();
            let cfg = CramConfig { explore_prob: 0.5, ..CramConfig::default() };
            let mut fl = FlowLearner::new(flow(), &cfg);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let all = all_simple_paths(&t, NodeId(1), NodeId(n));
            for _ in 0..5 {
                match fl.build_path(&t, &up, NodeId(1), NodeId(n), &cfg, &mut rng) {
                    Ok(w) => {
                        prop_assert!(w.path.is_simple());
                        prop_assert!(all.contains(&w.path.nodes));
                        let rw = fl.learn(&w, Some(rng.gen_range(0.01..1.0)), &cfg.rnn);
                        prop_assert!(rw.is_ok());
                    }
                    Err(_) => prop_assert!(all.is_empty()),
                }
            }
        }
    }
}
