use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use cre_core::scenario::{run_scenario1, run_scenario2, Scenario1Config, Scenario2Config};
use cre_core::topo::{GEANT_TOPO, SCENARIO1_TOPO};
use cre_core::Topology;

#[derive(Parser)]
#[command(name = "cre-sim", version, about = "Run cognitive routing experiments on an emulated SDN")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run scenario 1 (triangle delay jump) or 2 (GEANT load vs global monitoring).
    Run(RunArgs),
}

/// Every key can come from `--config`; flags win.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct RunArgs {
    /// TOML file with any of the keys below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Topology JSON; defaults to the shipped one for the scenario.
    #[arg(long)]
    topo: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Per-hop exploration probability.
    #[arg(long)]
    explore: Option<f64>,
    /// Recent-path window size.
    #[arg(long)]
    z: Option<usize>,
    /// Seconds a path stays installed before it may be replaced.
    #[arg(long)]
    min_hold: Option<f64>,
    /// Measurement cache lifetime in seconds.
    #[arg(long)]
    te: Option<f64>,
    /// Monitoring period in seconds.
    #[arg(long)]
    period: Option<f64>,
    /// Scenario 2 only.
    #[arg(long)]
    experiments: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overlay(self, base: RunArgs) -> RunArgs {
        RunArgs {
            config: self.config,
            topo: self.topo.or(base.topo),
            scenario: self.scenario.or(base.scenario),
            seed: self.seed.or(base.seed),
            alpha: self.alpha.or(base.alpha),
            beta: self.beta.or(base.beta),
            explore: self.explore.or(base.explore),
            z: self.z.or(base.z),
            min_hold: self.min_hold.or(base.min_hold),
            te: self.te.or(base.te),
            period: self.period.or(base.period),
            experiments: self.experiments.or(base.experiments),
            out: self.out.or(base.out),
        }
    }
}

fn secs(name: &str, v: f64) -> Result<Duration> {
    Duration::try_from_secs_f64(v).with_context(|| format!("--{name} must be a non-negative number of seconds, got {v}"))
}

fn apply(a: &RunArgs, e: &mut cre_core::engine::EngineConfig) -> Result<()> {
    if let Some(v) = a.seed {
        e.seed = v;
    }
    if let Some(v) = a.alpha {
        e.cram.alpha = v;
    }
    if let Some(v) = a.beta {
        e.cram.beta = v;
    }
    if let Some(v) = a.explore {
        e.cram.explore_prob = v;
    }
    if let Some(v) = a.z {
        e.cram.z = v;
    }
    if let Some(v) = a.min_hold {
        e.cram.min_hold = secs("min-hold", v)?;
    }
    if let Some(v) = a.te {
        e.monitor.t_e = secs("te", v)?;
    }
    if let Some(v) = a.period {
        e.period = secs("period", v)?;
    }
    e.validate()?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let args = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let base: RunArgs = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            args.overlay(base)
        }
        None => args,
    };
    let scenario = args.scenario.unwrap_or(1);
    if !(1..=2).contains(&scenario) {
        bail!("scenario must be 1 or 2, got {scenario}");
    }
    let topo = match &args.topo {
        Some(p) => Topology::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Topology::from_json(if scenario == 1 { SCENARIO1_TOPO } else { GEANT_TOPO })?,
    };
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    if scenario == 1 {
        let mut cfg = Scenario1Config::default();
        apply(&args, &mut cfg.engine)?;
        let art = run_scenario1(&topo, &cfg)?;
        art.write_to(&out).with_context(|| format!("writing {}", out.display()))?;
        let last = art.series.last().map(|s| s.1).unwrap_or(f64::NAN);
        println!("scenario 1: {} pings, final rtt {last:.3} ms -> {}", art.series.len(), out.display());
    } else {
        let mut cfg = Scenario2Config::default();
        apply(&args, &mut cfg.engine)?;
        if let Some(n) = args.experiments {
            if n == 0 {
                bail!("--experiments must be at least 1");
            }
            cfg.experiments = n;
        }
        let res = run_scenario2(&topo, &cfg)?;
        res.first.write_to(&out).with_context(|| format!("writing {}", out.display()))?;
        std::fs::write(out.join("table.csv"), &res.table_csv)?;
        let r = &res.report;
        println!(
            "scenario 2: {} experiments, monitoring ratio {:.2}, mean gap {:.2}%, {} at 0% -> {}",
            r.experiments.len(),
            r.monitoring_ratio,
            r.mean_gap_pct,
            r.zero_gap_count,
            out.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Run(a) => run(a),
    }
}
