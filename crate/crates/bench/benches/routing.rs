use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cre_core::cram::{RnnParams, RnnState};
use cre_core::oracle::{optimal_path, Snapshot};
use cre_core::scenario::{run_scenario1, Scenario1Config};
use cre_core::simnet::FlowKey;
use cre_core::topo::{GEANT_TOPO, SCENARIO1_TOPO};
use cre_core::{NodeId, PortNo, Topology};

fn rnn(n: usize, seed: u64) -> RnnState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = || (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..5.0)).collect()).collect();
    let (wp, wm) = (w(), w());
    let ports = (1..=n as u32).map(PortNo).collect();
    RnnState::from_parts(FlowKey::new("A", "B", 1), NodeId(1), ports, wp, wm, vec![1.0; n], vec![0.0; n], &RnnParams::default()).unwrap()
}

fn solve(c: &mut Criterion) {
    let p = RnnParams::default();
    let base = rnn(8, 1);
    c.bench_function("rnn_solve_8", |b| {
        b.iter_batched(|| base.clone(), |mut r| r.solve(p.fp_tol, p.fp_max_iter).unwrap(), BatchSize::SmallInput)
    });
}

fn reinforce(c: &mut Criterion) {
    let p = RnnParams::default();
    let base = rnn(8, 2);
    c.bench_function("rnn_reinforce_8", |b| {
        b.iter_batched(|| base.clone(), |mut r| r.reinforce(3, 2.0, 1.0, &p).unwrap(), BatchSize::SmallInput)
    });
}

fn dijkstra(c: &mut Criterion) {
    let t = Topology::from_json(GEANT_TOPO).unwrap();
    let snap: Snapshot = t.links().iter().map(|l| (l.id, l.prop_delay.as_secs_f64())).collect();
    let nodes: Vec<NodeId> = t.node_ids().collect();
    let (s, d) = (nodes[0], nodes[nodes.len() - 1]);
    c.bench_function("optimal_path_geant", |b| b.iter(|| optimal_path(&t, &snap, s, d).unwrap()));
}

fn scenario1(c: &mut Criterion) {
    let t = Topology::from_json(SCENARIO1_TOPO).unwrap();
    let cfg = Scenario1Config::default();
    c.bench_function("scenario1_run", |b| b.iter(|| run_scenario1(&t, &cfg).unwrap()));
}

criterion_group!(benches, solve, reinforce, dijkstra, scenario1);
criterion_main!(benches);
