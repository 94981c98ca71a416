//! The two reference experiments: the triangle delay jump and the GEANT
//! load test against the global-monitoring baseline.

use std::fmt::Write as _;
use std::io;
use std::path::Path as FsPath;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{Engine, EngineConfig, Routing};
use crate::error::{ConfigError, ReportError};
use crate::nmm::MonitorConfig;
use crate::oracle::{gap_report, GapReport, RunSummary};
use crate::simnet::{FlowKey, NetConfig, Network, PingSample, ScenarioEvent, TrafficSpec};
use crate::time::{millis, SimTime};
use crate::topo::{HostId, LinkId, NodeId, Topology};

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario1Config {
    pub engine: EngineConfig,
    pub duration: Duration,
    pub ping_interval: Duration,
    /// When the N1-N2 links slow down; `None` runs the control experiment.
    pub change_at: Option<Duration>,
    pub new_delay: Duration,
}

impl Default for Scenario1Config {
    fn default() -> Self {
        Scenario1Config {
            engine: EngineConfig::default(),
            duration: Duration::from_secs(30),
            ping_interval: Duration::from_secs(1),
            change_at: Some(Duration::from_secs(9)),
            new_delay: millis(200.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathChange {
    pub time_s: f64,
    pub flow: String,
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario1Report {
    pub seed: u64,
    pub pings: usize,
    pub monitoring_units: u64,
    pub changes: Vec<PathChange>,
    pub final_paths: Vec<PathChange>,
    pub final_rtt_ms: Option<f64>,
}

/// Everything a run leaves behind, already rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifacts {
    pub series: Vec<(f64, f64)>,
    pub events_csv: String,
    pub monitoring_csv: String,
    pub report_json: String,
}

impl RunArtifacts {
    /// Writes `series.csv`, `events.csv`, `monitoring.csv` and `report.json`.
    pub fn write_to(&self, dir: &FsPath) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        emit_series(&self.series, &dir.join("series.csv"))?;
        std::fs::write(dir.join("events.csv"), &self.events_csv)?;
        std::fs::write(dir.join("monitoring.csv"), &self.monitoring_csv)?;
        std::fs::write(dir.join("report.json"), &self.report_json)
    }
}

pub fn series_of(pings: &[PingSample], flow: &FlowKey) -> Vec<(f64, f64)> {
    pings.iter().filter(|p| &p.flow == flow).map(|p| (p.sent.as_secs_f64(), p.rtt.as_secs_f64() * 1e3)).collect()
}

pub fn series_csv(series: &[(f64, f64)]) -> String {
    let mut s = String::from("t_s,rtt_ms\n");
    for (t, r) in series {
        let _ = writeln!(s, "{t:.3},{r:.3}");
    }
    s
}

pub fn emit_series(series: &[(f64, f64)], path: &FsPath) -> io::Result<()> {
    std::fs::write(path, series_csv(series))
}

fn ping_flow(src: &HostId, dst: &HostId) -> FlowKey {
    FlowKey { src_host: src.clone(), dst_host: dst.clone(), flow_id: 1 }
}

fn add_pings(net: &mut Network, flow: &FlowKey, interval: Duration, duration: Duration) -> Result<(), crate::SimError> {
    let count = (duration.as_secs_f64() / interval.as_secs_f64()).floor() as u64;
    net.add_traffic(TrafficSpec { flow: flow.clone(), start: SimTime::ZERO, interval, count, size_bytes: 64, ping: true })
}

fn changes_of(eng: &Engine) -> Vec<PathChange> {
    eng.events()
        .iter()
        .filter(|e| e.event == "changed")
        .map(|e| PathChange {
            time_s: e.time.as_secs_f64(),
            flow: e.flow.to_string(),
            path: e.path.as_ref().map(|p| p.to_string()).unwrap_or_default(),
        })
        .collect()
}

fn final_paths(eng: &Engine) -> Vec<PathChange> {
    eng.sessions()
        .iter()
        .filter_map(|s| {
            let (t, p) = s.installs.last()?;
            Some(PathChange { time_s: t.as_secs_f64(), flow: s.flow.to_string(), path: p.to_string() })
        })
        .collect()
}

/// H1 pings H2 across the triangle while the direct links jump to a
/// higher delay.
pub fn run_scenario1(topo: &Topology, cfg: &Scenario1Config) -> Result<RunArtifacts, ConfigError> {
    let mut net = Network::new(topo.clone(), NetConfig { seed: cfg.engine.seed, ..NetConfig::default() });
    let mut eng = Engine::new(topo.clone(), cfg.engine.clone())?;
    eng.attach(&mut net);
    let flow = ping_flow(&HostId::new("H1"), &HostId::new("H2"));
    add_pings(&mut net, &flow, cfg.ping_interval, cfg.duration).map_err(|_| ConfigError::NotPositive("duration"))?;
    if let Some(at) = cfg.change_at {
        for (a, b) in [(1, 2), (2, 1)] {
            if let Some(link) = topo.link_between(NodeId(a), NodeId(b)) {
                let ev = ScenarioEvent::SetLinkDelay { link, delay: cfg.new_delay };
                net.schedule(SimTime::ZERO + at, ev).expect("scheduled before the run starts");
            }
        }
    }
    net.run_until(&mut eng, SimTime::ZERO + cfg.duration);
    let series = series_of(net.pings(), &flow);
    let report = Scenario1Report {
        seed: cfg.engine.seed,
        pings: series.len(),
        monitoring_units: eng.monitor().units_total(),
        changes: changes_of(&eng),
        final_paths: final_paths(&eng),
        final_rtt_ms: series.last().map(|s| s.1),
    };
    Ok(RunArtifacts {
        series,
        events_csv: eng.events_csv(),
        monitoring_csv: eng.monitor().monitoring_csv(),
        report_json: serde_json::to_string_pretty(&report).expect("plain data"),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario2Config {
    pub engine: EngineConfig,
    pub experiments: usize,
    pub duration: Duration,
    pub ping_interval: Duration,
    pub load_at: Duration,
    /// Delay multiplier applied to every link of the loaded path.
    pub load_factor: f64,
    /// Minimum hop distance between the chosen hosts' NFEs.
    pub min_hops: usize,
}

impl Default for Scenario2Config {
    fn default() -> Self {
        Scenario2Config {
            engine: EngineConfig::default(),
            experiments: 10,
            duration: Duration::from_secs(90),
            ping_interval: Duration::from_secs(1),
            load_at: Duration::from_secs(20),
            load_factor: 2.2,
            min_hops: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub src: String,
    pub dst: String,
    pub loaded_path: String,
    pub cre: RunSummary,
    pub optimal: RunSummary,
    pub cre_final_paths: Vec<PathChange>,
    pub optimal_final_paths: Vec<PathChange>,
    pub gap: GapReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario2Report {
    pub seed: u64,
    pub experiments: Vec<ExperimentReport>,
    pub mean_opt_monitoring: f64,
    pub mean_cre_monitoring: f64,
    pub monitoring_ratio: f64,
    pub mean_gap_pct: f64,
    pub zero_gap_count: usize,
    pub mean_delta_s: f64,
}

pub struct Scenario2Output {
    pub report: Scenario2Report,
    pub table_csv: String,
    /// Artifacts of the first experiment's CRE run.
    pub first: RunArtifacts,
}

struct Single {
    summary: RunSummary,
    finals: Vec<PathChange>,
    artifacts: RunArtifacts,
}

fn run_one(topo: &Topology, cfg: &Scenario2Config, engine: EngineConfig, flow: &FlowKey, loaded: &[LinkId]) -> Result<Single, ConfigError> {
    let mut net = Network::new(topo.clone(), NetConfig { seed: engine.seed, ..NetConfig::default() });
    let mut eng = Engine::new(topo.clone(), engine)?;
    eng.attach(&mut net);
    add_pings(&mut net, flow, cfg.ping_interval, cfg.duration).map_err(|_| ConfigError::NotPositive("duration"))?;
    for &link in loaded {
        net.schedule(SimTime::ZERO + cfg.load_at, ScenarioEvent::ScaleLinkDelay { link, factor: cfg.load_factor })
            .expect("scheduled before the run starts");
    }
    net.run_until(&mut eng, SimTime::ZERO + cfg.duration);
    let series = series_of(net.pings(), flow);
    let summary = RunSummary {
        monitoring_units: eng.monitor().units_total(),
        rounds: eng.monitor().rounds().len(),
        converged_at: eng.converged_at(),
        final_rtt_ms: series.last().map(|s| s.1),
    };
    let finals = final_paths(&eng);
    let report_json = serde_json::to_string_pretty(&summary).expect("plain data");
    Ok(Single {
        summary,
        finals,
        artifacts: RunArtifacts { series, events_csv: eng.events_csv(), monitoring_csv: eng.monitor().monitoring_csv(), report_json },
    })
}

/// Picks two hosts whose NFEs are at least `min_hops` apart.
pub fn pick_pair<R: Rng + ?Sized>(topo: &Topology, min_hops: usize, rng: &mut R) -> Option<(HostId, HostId)> {
    let hosts: Vec<_> = topo.hosts().to_vec();
    let mut pairs = Vec::new();
    for a in &hosts {
        let dist = topo.hop_distances_to(a.attach.node, |l| l.is_up());
        for b in &hosts {
            if dist.get(&b.attach.node).is_some_and(|d| *d >= min_hops.max(1)) {
                pairs.push((b.host_id.clone(), a.host_id.clone()));
            }
        }
    }
    pairs.choose(rng).cloned()
}

/// One experiment with the artifacts of both runs.
pub struct Experiment {
    pub report: ExperimentReport,
    pub cre: RunArtifacts,
    pub optimal: RunArtifacts,
}

/// Runs one experiment twice, with CRE and with the global baseline, on the
/// same host pair and load.
pub fn run_experiment(topo: &Topology, cfg: &Scenario2Config, seed: u64) -> Result<Experiment, ReportError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (src, dst) = pick_pair(topo, cfg.min_hops, &mut rng).ok_or(ReportError::EmptyLogs)?;
    let (s, d) = (topo.host(&src).expect("picked").attach.node, topo.host(&dst).expect("picked").attach.node);
    let boot = topo.hop_count_shortest_path(s, d).map_err(|_| ReportError::EmptyLogs)?;
    let mut loaded = boot.links.clone();
    for w in boot.nodes.windows(2) {
        loaded.extend(topo.link_between(w[1], w[0]));
    }
    let flow = ping_flow(&src, &dst);
    let cre_cfg = EngineConfig { seed, routing: Routing::Cognitive, ..cfg.engine.clone() };
    let opt_cfg = EngineConfig {
        seed,
        routing: Routing::Global,
        monitor: MonitorConfig { t_e: Duration::ZERO, ..cfg.engine.monitor },
        ..cfg.engine.clone()
    };
    let cre = run_one(topo, cfg, cre_cfg, &flow, &loaded).map_err(|_| ReportError::EmptyLogs)?;
    let opt = run_one(topo, cfg, opt_cfg, &flow, &loaded).map_err(|_| ReportError::EmptyLogs)?;
    let gap = gap_report(&cre.summary, &opt.summary)?;
    Ok(Experiment {
        report: ExperimentReport {
            seed,
            src: src.to_string(),
            dst: dst.to_string(),
            loaded_path: boot.to_string(),
            cre: cre.summary,
            optimal: opt.summary,
            cre_final_paths: cre.finals,
            optimal_final_paths: opt.finals,
            gap,
        },
        cre: cre.artifacts,
        optimal: opt.artifacts,
    })
}

/// Seeds of the experiments of a batch, derived from the engine seed.
pub fn experiment_seeds(cfg: &Scenario2Config) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(cfg.engine.seed);
    (0..cfg.experiments).map(|_| master.gen()).collect()
}

pub fn run_scenario2(topo: &Topology, cfg: &Scenario2Config) -> Result<Scenario2Output, ReportError> {
    let mut rows = Vec::new();
    let mut first = None;
    for seed in experiment_seeds(cfg) {
        let exp = run_experiment(topo, cfg, seed)?;
        rows.push(exp.report);
        if first.is_none() {
            first = Some(exp.cre);
        }
    }
    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ExperimentReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_opt = mean(&|r| r.optimal.monitoring_units as f64);
    let mean_cre = mean(&|r| r.cre.monitoring_units as f64);
    let report = Scenario2Report {
        seed: cfg.engine.seed,
        mean_opt_monitoring: mean_opt,
        mean_cre_monitoring: mean_cre,
        monitoring_ratio: if mean_cre > 0.0 { mean_opt / mean_cre } else { f64::INFINITY },
        mean_gap_pct: mean(&|r| r.gap.rtt_gap_pct),
        zero_gap_count: rows.iter().filter(|r| r.gap.rtt_gap_pct.abs() < 1e-9).count(),
        mean_delta_s: mean(&|r| r.gap.convergence_delta_s),
        experiments: rows,
    };
    let table_csv = crate::oracle::table_csv(&report.experiments.iter().map(|r| r.gap.clone()).collect::<Vec<_>>());
    let mut first = first.ok_or(ReportError::EmptyLogs)?;
    first.report_json = serde_json::to_string_pretty(&report).expect("plain data");
    Ok(Scenario2Output { report, table_csv, first })
}
