use super::*;
use crate::simnet::{NetConfig, ScenarioEvent, TrafficSpec};
use crate::time::millis;

fn triangle() -> Topology {
    Topology::from_json(crate::topo::SCENARIO1_TOPO).unwrap()
}

fn pings(net: &mut Network, count: u64) {
    net.add_traffic(TrafficSpec {
        flow: FlowKey::new("H1", "H2", 1),
        start: SimTime::ZERO,
        interval: Duration::from_secs(1),
        count,
        size_bytes: 64,
        ping: true,
    })
    .unwrap();
}

fn run(topo: Topology, cfg: EngineConfig, jump_at: Option<f64>, secs: f64) -> (Network, Engine) {
    let mut net = Network::new(topo.clone(), NetConfig::default());
    let mut eng = Engine::new(topo.clone(), cfg).unwrap();
    eng.attach(&mut net);
    pings(&mut net, secs as u64);
    if let Some(t) = jump_at {
        for (a, b) in [(1, 2), (2, 1)] {
            let link = topo.link_between(NodeId(a), NodeId(b)).unwrap();
            net.schedule(SimTime::from_secs_f64(t), ScenarioEvent::SetLinkDelay { link, delay: millis(200.0) }).unwrap();
        }
    }
    net.run_until(&mut eng, SimTime::from_secs_f64(secs));
    (net, eng)
}

fn fwd() -> FlowKey {
    FlowKey::new("H1", "H2", 1)
}

fn final_nodes(eng: &Engine, f: &FlowKey) -> Vec<u64> {
    eng.session(f).unwrap().current.as_ref().unwrap().path.nodes.iter().map(|n| n.0).collect()
}

#[test]
fn stable_network_keeps_the_bootstrap_path() {
    let cfg = EngineConfig { period: Duration::from_secs(1), ..EngineConfig::default() };
    let (net, eng) = run(triangle(), cfg, None, 20.0);
    assert_eq!(eng.sessions().len(), 2);
    assert_eq!(final_nodes(&eng, &fwd()), vec![1, 2]);
    assert_eq!(final_nodes(&eng, &fwd().reversed()), vec![2, 1]);
    // only the two bootstrap installs wrote rules: 2 NFEs each
    assert_eq!(eng.flowmod_log().len(), 4);
    let rtts: Vec<f64> = net.pings().iter().map(|p| p.rtt.as_secs_f64() * 1e3).collect();
    assert_eq!(rtts.len(), 20);
    assert!(rtts[0] > rtts[1], "first ping pays for the setup");
    for r in &rtts[1..] {
        assert!((r - 70.0).abs() < 1.0, "{r}");
    }
    assert_eq!(net.stats().flowmod_errors, 0);
    let csv = eng.events_csv();
    assert!(csv.starts_with("time_ms,flow,event,path,objective_ms,reward,gamma\n"));
    assert!(csv.contains(",H1->H2#1,installed,N1>N2,"));
}

#[test]
fn delay_jump_moves_both_directions_via_n3() {
    let cfg = EngineConfig { period: Duration::from_secs(1), ..EngineConfig::default() };
    let (net, eng) = run(triangle(), cfg, Some(9.0), 40.0);
    assert_eq!(final_nodes(&eng, &fwd()), vec![1, 3, 2]);
    assert_eq!(final_nodes(&eng, &fwd().reversed()), vec![2, 3, 1]);
    let last = net.pings().last().unwrap().rtt.as_secs_f64() * 1e3;
    assert!((last - 140.0).abs() < 1.0, "{last}");
    assert_eq!(net.stats().flowmod_errors, 0);
    assert_eq!(net.stats().injected, net.stats().delivered);
}

#[test]
fn monitoring_only_touches_candidate_links() {
    let cfg = EngineConfig { period: Duration::from_secs(1), ..EngineConfig::default() };
    let (_, eng) = run(triangle(), cfg, None, 10.0);
    // each tick of each flow measures its one-link path
    let measured: usize = eng.events().iter().filter(|e| e.event == "measure").map(|e| e.path.as_ref().unwrap().hop_count()).sum();
    assert!(eng.monitor().units_total() as usize <= measured);
    assert!(eng.monitor().units_total() > 0);
}

#[test]
fn global_baseline_probes_every_link_each_round() {
    let cfg = EngineConfig {
        period: Duration::from_secs(1),
        routing: Routing::Global,
        monitor: MonitorConfig { t_e: Duration::ZERO, ..MonitorConfig::default() },
        ..EngineConfig::default()
    };
    let (net, eng) = run(triangle(), cfg, Some(9.0), 15.0);
    for r in eng.monitor().rounds() {
        assert_eq!(r.units, 6);
    }
    assert_eq!(final_nodes(&eng, &fwd()), vec![1, 3, 2]);
    // the first sweep after the jump (t = 10 s) moves both flows
    let changes: Vec<f64> = eng.events().iter().filter(|e| e.event == "changed").map(|e| e.time.as_secs_f64()).collect();
    assert_eq!(changes.len(), 2);
    assert!(changes.iter().all(|t| (10.0..11.5).contains(t)), "{changes:?}");
    let last = net.pings().last().unwrap().rtt.as_secs_f64() * 1e3;
    assert!((last - 140.0).abs() < 1.0);
}

#[test]
fn co_located_hosts_are_not_monitored() {
    let mut b = Topology::builder();
    b.node(1).node(2).duplex(1, 2, millis(1.0), 1_000_000);
    b.host("A", 1, millis(1.0), 1_000_000).host("B", 1, millis(1.0), 1_000_000);
    let t = b.build().unwrap();
    let mut net = Network::new(t.clone(), NetConfig::default());
    let mut eng = Engine::new(t, EngineConfig::default()).unwrap();
    eng.attach(&mut net);
    net.add_traffic(TrafficSpec {
        flow: FlowKey::new("A", "B", 7),
        start: SimTime::ZERO,
        interval: millis(100.0),
        count: 50,
        size_bytes: 100,
        ping: false,
    })
    .unwrap();
    net.run_until(&mut eng, SimTime::from_secs_f64(12.0));
    assert_eq!(net.stats().delivered, 50);
    assert_eq!(eng.monitor().units_total(), 0);
    assert_eq!(eng.flowmod_log().len(), 1);
    assert!(eng.events().iter().all(|e| e.event != "measure"));
}

#[test]
fn racing_packet_ins_share_one_install() {
    let t = triangle();
    let mut net = Network::new(t.clone(), NetConfig::default());
    let mut eng = Engine::new(t, EngineConfig::default()).unwrap();
    eng.attach(&mut net);
    net.add_traffic(TrafficSpec { flow: fwd(), start: SimTime::ZERO, interval: millis(1.0), count: 20, size_bytes: 100, ping: false })
        .unwrap();
    net.run_until(&mut eng, SimTime::from_secs_f64(1.0));
    assert_eq!(net.stats().delivered, 20);
    assert_eq!(eng.events().iter().filter(|e| e.event == "install").count(), 1);
    assert_eq!(eng.flowmod_log().len(), 2);
}

#[test]
fn same_seed_same_log() {
    let cfg = EngineConfig {
        period: Duration::from_secs(1),
        cram: CramConfig { explore_prob: 0.3, ..CramConfig::default() },
        ..EngineConfig::default()
    };
    let (_, a) = run(triangle(), cfg.clone(), Some(9.0), 30.0);
    let (_, b) = run(triangle(), cfg, Some(9.0), 30.0);
    assert_eq!(a.events_csv(), b.events_csv());
}

#[test]
fn config_validation() {
    let ok = EngineConfig::default();
    assert_eq!(ok.validate(), Ok(()));
    let bad = EngineConfig { period: Duration::ZERO, ..ok.clone() };
    assert_eq!(bad.validate(), Err(ConfigError::NotPositive("monitoring period")));
    let bad = EngineConfig { cram: CramConfig { beta: 1.0, ..CramConfig::default() }, ..ok.clone() };
    assert!(matches!(bad.validate(), Err(ConfigError::OutOfRange { name: "beta", .. })));
    let bad = EngineConfig { cram: CramConfig { explore_prob: 1.5, ..CramConfig::default() }, ..ok };
    assert!(Engine::new(triangle(), bad).is_err());
}
