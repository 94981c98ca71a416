//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr so the verdicts show up even when output is captured.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cre_core::cram::{Mode, RnnParams, RnnState};
use cre_core::nmm::{Metric, Monitor, MonitorConfig};
use cre_core::oracle::{optimal_path, Snapshot};
use cre_core::ptm::{change_path, install_new_path, InstalledPath, PlanRunner, PtmConfig, RunState};
use cre_core::scenario::{run_scenario1, run_scenario2, series_csv, Scenario1Config, Scenario2Config, Scenario2Output};
use cre_core::simnet::{ControlMsg, ControllerApp, Ctl, FlowKey, NetConfig, Network, TrafficSpec};
use cre_core::time::millis;
use cre_core::topo::{GEANT_TOPO, SCENARIO1_TOPO};
use cre_core::{LinkId, NodeId, Path, PortNo, SimTime, Topology};

fn verdict(n: u32, ok: bool, detail: String) {
    let _ = writeln!(std::io::stderr(), "criterion {n}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

// ---- 1: triangle delay jump ----

#[test]
fn criterion_1_delay_jump_reroutes_via_n3() {
    let topo = Topology::from_json(SCENARIO1_TOPO).unwrap();
    let cfg = Scenario1Config::default();
    let started = Instant::now();
    let out = run_scenario1(&topo, &cfg).unwrap();
    let wall = started.elapsed();

    let host_ms: f64 = topo.hosts().iter().map(|h| h.link_delay.as_secs_f64() * 1e3).sum();
    let hop = |a: u64, b: u64| topo.link(topo.link_between(NodeId(a), NodeId(b)).unwrap()).prop_delay.as_secs_f64() * 1e3;
    let slow = 2.0 * (host_ms + cfg.new_delay.as_secs_f64() * 1e3);
    let via_n3 = 2.0 * (host_ms + hop(1, 3) + hop(3, 2));
    let half = (slow + via_n3) / 2.0;
    let change_s = cfg.change_at.unwrap().as_secs_f64();

    let rtts: Vec<(f64, f64)> = out.series.clone();
    let first_after = rtts.iter().find(|(t, _)| *t >= change_s).map(|p| p.1).unwrap_or(f64::NAN);
    let step_up = (first_after - slow).abs() < 1.0;
    let partial = rtts.iter().any(|(t, r)| *t > change_s && (r - half).abs() < 1.0);
    let last = rtts.last().map(|p| p.1).unwrap_or(f64::NAN);
    let settled = (last - via_n3).abs() < 1.0;

    let report: serde_json::Value = serde_json::from_str(&out.report_json).unwrap();
    let changes = report["changes"].as_array().unwrap();
    let first_flow = changes.first().and_then(|c| c["flow"].as_str()).unwrap_or("");
    let reverse_first = first_flow.starts_with("H2->H1");
    let finals: Vec<&str> = report["final_paths"].as_array().unwrap().iter().map(|p| p["path"].as_str().unwrap()).collect();
    let via = finals.len() == 2 && finals.iter().all(|p| p.split('>').any(|n| n == "N3"));
    let fast = wall < Duration::from_secs(5);

    verdict(
        1,
        step_up && partial && reverse_first && settled && via && fast,
        format!(
            "jump {first_after:.3}/{slow:.3} ms, partial at {half:.3} ms: {partial}, first switch {first_flow}, final {last:.3}/{via_n3:.3} ms, paths {finals:?}, wall {wall:.2?}"
        ),
    );
}

// ---- 2 and 3: GEANT against global monitoring ----

fn geant_run() -> &'static Scenario2Output {
    static RUN: OnceLock<Scenario2Output> = OnceLock::new();
    RUN.get_or_init(|| {
        let topo = Topology::from_json(GEANT_TOPO).unwrap();
        run_scenario2(&topo, &Scenario2Config::default()).unwrap()
    })
}

#[test]
fn criterion_2_monitoring_economy() {
    let topo = Topology::from_json(GEANT_TOPO).unwrap();
    let r = &geant_run().report;
    let per_round = r.experiments.iter().all(|e| e.optimal.rounds > 0 && e.optimal.monitoring_units == 74 * e.optimal.rounds as u64);
    let below = r.experiments.iter().all(|e| e.cre.monitoring_units < e.optimal.monitoring_units);
    verdict(
        2,
        topo.links().len() == 74 && r.experiments.len() == 10 && per_round && below && r.monitoring_ratio >= 4.0,
        format!(
            "ratio {:.2} (optimal {:.1} / cre {:.1}), 74 units per optimal round: {per_round}",
            r.monitoring_ratio, r.mean_opt_monitoring, r.mean_cre_monitoring
        ),
    );
}

#[test]
fn criterion_3_optimality_gap() {
    let r = &geant_run().report;
    let gaps: Vec<String> = r.experiments.iter().map(|e| format!("{:.2}", e.gap.rtt_gap_pct)).collect();
    let nonneg = r.experiments.iter().all(|e| e.gap.rtt_gap_pct >= -1e-9);
    verdict(
        3,
        nonneg && r.mean_gap_pct <= 5.0 && r.zero_gap_count >= 3,
        format!("mean gap {:.2}% (limit 5%), {} of 10 at 0% (need 3), per experiment {gaps:?}", r.mean_gap_pct, r.zero_gap_count),
    );
}

// ---- 4: oracle vs exhaustive enumeration ----

fn all_simple_paths(t: &Topology, s: NodeId, d: NodeId) -> Vec<Vec<LinkId>> {
    fn go(t: &Topology, at: NodeId, d: NodeId, seen: &mut BTreeSet<NodeId>, links: &mut Vec<LinkId>, out: &mut Vec<Vec<LinkId>>) {
        if at == d {
            out.push(links.clone());
            return;
        }
        let next: Vec<(LinkId, NodeId)> = t.out_links(at).map(|l| (l.id, l.dst.node)).collect();
        for (id, n) in next {
            if seen.insert(n) {
                links.push(id);
                go(t, n, d, seen, links, out);
                links.pop();
                seen.remove(&n);
            }
        }
    }
    let mut out = Vec::new();
    go(t, s, d, &mut BTreeSet::from([s]), &mut Vec::new(), &mut out);
    out
}

#[test]
fn criterion_4_oracle_matches_enumeration() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut agree = 0;
    let mut reachable = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=7u64);
        let mut b = Topology::builder();
        for i in 1..=n {
            b.node(i);
        }
        let mut delays = Vec::new();
        for a in 1..=n {
            for c in 1..=n {
                if a != c && rng.gen_bool(0.4) {
                    b.link(a, c, millis(1.0), 1);
                    delays.push(rng.gen_range(0.1..50.0));
                }
            }
        }
        let t = b.build().unwrap();
        let snap: Snapshot = t.links().iter().map(|l| (l.id, delays[l.id.0])).collect();
        let (s, d) = (NodeId(1), NodeId(n));
        let best =
            all_simple_paths(&t, s, d).into_iter().map(|p| (p.iter().map(|l| snap[l]).sum::<f64>(), p)).min_by(|a, b| a.0.total_cmp(&b.0));
        let fast = optimal_path(&t, &snap, s, d).ok();
        let same = match (&best, &fast) {
            (None, None) => true,
            (Some((c, links)), Some((p, cost))) => {
                reachable += 1;
                (c - cost).abs() < 1e-9 && &p.links == links
            }
            _ => false,
        };
        agree += same as usize;
    }
    let wall = started.elapsed();
    verdict(4, agree == 200 && wall < Duration::from_secs(10), format!("{agree}/200 agree ({reachable} reachable), wall {wall:.2?}"));
}

// ---- 5: RNN numerics ----

fn random_rnn(rng: &mut ChaCha8Rng) -> RnnState {
    let n = rng.gen_range(2..=8usize);
    let mut w = || (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect::<Vec<f64>>()).collect::<Vec<_>>();
    let (wp, wm) = (w(), w());
    let lp = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    let lm = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    let ports = (1..=n as u32).map(PortNo).collect();
    RnnState::from_parts(FlowKey::new("A", "B", 1), NodeId(1), ports, wp, wm, lp, lm, &RnnParams::default()).unwrap()
}

#[test]
fn criterion_5_rnn_numerics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_residual = 0.0f64;
    let mut worst_row = 0.0f64;
    for _ in 0..1000 {
        let mut rnn = random_rnn(&mut rng);
        worst_residual = worst_residual.max(rnn.residual());
        let before = rnn.row_sums();
        let chosen = rng.gen_range(0..rnn.len());
        let reward = rng.gen_range(0.01..10.0);
        let gamma = rng.gen_range(0.01..10.0);
        rnn.update_weights(chosen, reward, gamma).unwrap();
        rnn.renormalize();
        for (a, b) in rnn.row_sums().iter().zip(&before) {
            if *b > 0.0 {
                worst_row = worst_row.max((a - b).abs() / b);
            }
        }
    }
    let sym = RnnState::new(FlowKey::new("A", "B", 1), NodeId(1), &[PortNo(1), PortNo(2), PortNo(3)], &RnnParams::default()).unwrap();
    let q = sym.q[0];
    let expected = 0.280776;
    verdict(
        5,
        worst_residual < 1e-9 && worst_row < 1e-9 && (q - expected).abs() < 1e-6,
        format!("max residual {worst_residual:.2e}, max row drift {worst_row:.2e}, symmetric q {q:.7} vs {expected}"),
    );
}

// ---- 6: reinforcement ----

#[test]
fn criterion_6_repeated_success_wins_argmax() {
    let p = RnnParams::default();
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=8u32);
        let ports: Vec<PortNo> = (1..=n).map(PortNo).collect();
        let mut rnn = RnnState::new(FlowKey::new("A", "B", 1), NodeId(1), &ports, &p).unwrap();
        let target = rng.gen_range(0..n as usize);
        for _ in 0..50 {
            let reward = rng.gen_range(0.1..10.0);
            let gamma = rng.gen_range(0.0..=reward);
            rnn.reinforce(target, reward, gamma, &p).unwrap();
        }
        let exploit = rnn.select(Mode::Exploit, &BTreeSet::new(), &mut rng).unwrap();
        hits += (rnn.argmax() == target && exploit == target) as usize;
    }
    verdict(6, hits == 100, format!("{hits}/100 trials end with the rewarded neuron on top"));
}

// ---- 7: PTM safety ----

fn random_topology(rng: &mut ChaCha8Rng) -> Topology {
    let n = rng.gen_range(3..=8u64);
    let mut b = Topology::builder();
    for i in 1..=n {
        b.node(i);
    }
    let mut pairs = BTreeSet::new();
    for i in 2..=n {
        pairs.insert((rng.gen_range(1..i), i));
    }
    for _ in 0..rng.gen_range(1..=n) {
        let (a, c) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        if a != c {
            pairs.insert((a.min(c), a.max(c)));
        }
    }
    for (a, c) in pairs {
        b.duplex(a, c, millis(rng.gen_range(1.0..20.0)), 100_000_000);
    }
    b.host("A", 1, millis(1.0), 100_000_000).host("B", n, millis(1.0), 100_000_000);
    b.build().unwrap()
}

fn node_paths(t: &Topology, s: NodeId, d: NodeId) -> Vec<Path> {
    all_simple_paths(t, s, d)
        .into_iter()
        .map(|links| {
            let mut nodes = vec![s];
            nodes.extend(links.iter().map(|l| t.link(*l).dst.node));
            t.path_from_nodes(&nodes).unwrap()
        })
        .collect()
}

const DRAIN: u64 = 1 << 40;

struct Changer {
    topo: Topology,
    flow: FlowKey,
    plan: Vec<Path>,
    cfg: PtmConfig,
    installed: Option<InstalledPath>,
    runner: Option<PlanRunner>,
    log: Vec<cre_core::ptm::FlowModEntry>,
    done: usize,
    errors: usize,
}

impl Changer {
    fn finish(&mut self) {
        let r = self.runner.take().unwrap();
        self.errors += r.errors.len();
        self.installed = Some(r.plan().result.clone());
        self.done += 1;
    }
}

impl ControllerApp for Changer {
    fn on_message(&mut self, ctl: &mut Ctl<'_>, _from: NodeId, msg: ControlMsg) {
        if let Some(r) = self.runner.as_mut() {
            if r.on_message(ctl, &msg, &mut self.log) == Some(RunState::Done) {
                self.finish();
            }
        }
    }

    fn on_timer(&mut self, ctl: &mut Ctl<'_>, token: u64) {
        if token == DRAIN {
            if let Some(r) = self.runner.as_mut() {
                if r.on_timer(ctl, token, &mut self.log) == Some(RunState::Done) {
                    self.finish();
                }
            }
            return;
        }
        let target = &self.plan[token as usize];
        let plan = match &self.installed {
            None => install_new_path(&self.topo, &self.flow, target, ctl.now(), &self.cfg).unwrap(),
            Some(old) => change_path(&self.topo, old, target, ctl.now(), &self.cfg).unwrap(),
        };
        self.runner = Some(PlanRunner::start(plan, DRAIN, ctl, &mut self.log));
    }
}

#[test]
fn criterion_7_path_changes_are_lossless() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = PtmConfig { drain: millis(200.0), ..PtmConfig::default() };
    let (mut changes, mut topologies) = (0usize, 0usize);
    let (mut lost, mut dup, mut looped, mut pins, mut errors, mut stray) = (0u64, 0u64, 0u64, 0u64, 0usize, 0u64);
    let spacing = 0.3;
    while changes < 1000 {
        let t = random_topology(&mut rng);
        let n = t.node_count() as u64;
        let candidates = node_paths(&t, NodeId(1), NodeId(n));
        let mut plan = vec![candidates[rng.gen_range(0..candidates.len())].clone()];
        let steps = (1000 - changes).min(10);
        while plan.len() <= steps && candidates.len() > 1 {
            let next = &candidates[rng.gen_range(0..candidates.len())];
            if next != plan.last().unwrap() {
                plan.push(next.clone());
            }
        }
        let flow = FlowKey::new("A", "B", 1);
        let mut net = Network::new(t.clone(), NetConfig { seed: rng.gen(), ..NetConfig::default() });
        let k = plan.len();
        for i in 0..k {
            net.set_timer(SimTime::from_secs_f64(i as f64 * spacing), i as u64).unwrap();
        }
        let end = k as f64 * spacing + 1.0;
        let count = ((end - 0.6) / 0.01) as u64;
        net.add_traffic(TrafficSpec {
            flow: flow.clone(),
            start: SimTime::from_millis_f64(50.0),
            interval: millis(10.0),
            count,
            size_bytes: 200,
            ping: false,
        })
        .unwrap();
        let mut app = Changer { topo: t, flow, plan, cfg, installed: None, runner: None, log: vec![], done: 0, errors: 0 };
        net.run_until(&mut app, SimTime::from_secs_f64(end));
        let s = net.stats();
        lost += s.injected - s.delivered;
        dup += s.duplicates;
        looped += s.loops;
        pins += s.packet_ins;
        stray += s.misdelivered + s.dropped_no_route + s.dropped_link;
        errors += app.errors + s.flowmod_errors as usize;
        if app.done != k {
            errors += 1;
        }
        changes += k - 1;
        topologies += 1;
    }
    verdict(
        7,
        lost + dup + looped + pins + stray == 0 && errors == 0,
        format!("{changes} changes on {topologies} topologies: lost {lost}, duplicated {dup}, looped {looped}, packet-ins {pins}, misrouted {stray}, rule errors {errors}"),
    );
}

// ---- 8: monitoring cache ----

struct Script {
    mon: Monitor,
    steps: Vec<(LinkId, Metric)>,
}

impl ControllerApp for Script {
    fn on_message(&mut self, ctl: &mut Ctl<'_>, from: NodeId, msg: ControlMsg) {
        self.mon.handle_message(ctl, from, &msg);
    }

    fn on_timer(&mut self, ctl: &mut Ctl<'_>, token: u64) {
        if self.mon.handle_timer(ctl.now(), token).is_some() {
            return;
        }
        let (l, m) = self.steps[token as usize];
        self.mon.request(ctl, l, m);
    }
}

fn replay(steps: Vec<(LinkId, Metric)>) -> (u64, u64) {
    let t = Topology::from_json(SCENARIO1_TOPO).unwrap();
    let mut net = Network::new(t.clone(), NetConfig::default());
    let cfg = MonitorConfig { t_e: Duration::from_secs(1), ..MonitorConfig::default() };
    let n = steps.len();
    let mut app = Script { mon: Monitor::new(&t, cfg), steps };
    for i in 0..n {
        net.set_timer(SimTime::from_secs_f64(0.3 * i as f64), i as u64).unwrap();
    }
    net.run_until(&mut app, SimTime::from_secs_f64(2.0));
    (app.mon.units_total(), net.stats().ctrl_msgs_to_switch)
}

#[test]
fn criterion_8_cache_serves_repeat_requests() {
    let t = Topology::from_json(SCENARIO1_TOPO).unwrap();
    let l = t.link_between(NodeId(1), NodeId(2)).unwrap();
    let (delay_units, delay_msgs) = replay(vec![(l, Metric::Delay), (l, Metric::Delay)]);
    let (_, one_delay_msgs) = replay(vec![(l, Metric::Delay)]);
    let (stats_units, stats_msgs) = replay(vec![(l, Metric::Quality), (l, Metric::Utilization)]);
    let (_, one_stats_msgs) = replay(vec![(l, Metric::Quality)]);
    verdict(
        8,
        delay_units == 1 && delay_msgs == one_delay_msgs && stats_units == 1 && stats_msgs == one_stats_msgs && stats_msgs == 2,
        format!(
            "two delay requests: {delay_units} measurement, {delay_msgs} msgs (single {one_delay_msgs}); quality then utilization: {stats_units} stats round, {stats_msgs} msgs (single {one_stats_msgs})"
        ),
    );
}

// ---- 9: determinism ----

#[test]
fn criterion_9_same_seed_same_bytes() {
    let topo = Topology::from_json(SCENARIO1_TOPO).unwrap();
    let mut cfg = Scenario1Config::default();
    cfg.engine.seed = 42;
    cfg.engine.cram.explore_prob = 0.2;
    let a = run_scenario1(&topo, &cfg).unwrap();
    let b = run_scenario1(&topo, &cfg).unwrap();
    let geant = Topology::from_json(GEANT_TOPO).unwrap();
    let s2 = Scenario2Config { experiments: 2, ..Scenario2Config::default() };
    let c = run_scenario2(&geant, &s2).unwrap();
    let d = run_scenario2(&geant, &s2).unwrap();
    let same1 = series_csv(&a.series) == series_csv(&b.series) && a.report_json == b.report_json && a.events_csv == b.events_csv;
    let same2 = series_csv(&c.first.series) == series_csv(&d.first.series)
        && c.first.report_json == d.first.report_json
        && c.table_csv == d.table_csv;
    let dir_a = tempfile_dir("a");
    let dir_b = tempfile_dir("b");
    a.write_to(&dir_a).unwrap();
    b.write_to(&dir_b).unwrap();
    let files_same =
        ["series.csv", "report.json"].iter().all(|f| std::fs::read(dir_a.join(f)).unwrap() == std::fs::read(dir_b.join(f)).unwrap());
    let _ = std::fs::remove_dir_all(dir_a.parent().unwrap());
    verdict(
        9,
        same1 && same2 && files_same,
        format!("scenario 1 identical: {same1}, files identical: {files_same}, scenario 2 identical: {same2}"),
    );
}

fn tempfile_dir(tag: &str) -> std::path::PathBuf {
    let base = std::env::temp_dir().join(format!("cre-accept-{}", std::process::id()));
    base.join(tag)
}
