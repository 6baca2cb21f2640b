use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pimcaps::arith::PeConfig;
use pimcaps::capsnet::{dynamic_routing_with, Exact, NetworkConfig, RoutingInstance};
use pimcaps::hmc::HmcConfig;
use pimcaps::par::Execution;
use pimcaps::planner::DistributionDim;
use pimcaps::sim::{run_rp, Scenario, SimOptions};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn routing(c: &mut Criterion) {
    let cfg = NetworkConfig::new(8, 288, 10, 8, 16, 3).unwrap();
    let inst = RoutingInstance::random(cfg, 1).unwrap();
    let mut group = c.benchmark_group("routing");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| dynamic_routing_with(exec, black_box(&inst.u), &inst.w, &cfg, &Exact).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let cfg = NetworkConfig::new(100, 1152, 10, 8, 16, 3).unwrap();
    let hmc = HmcConfig::default();
    let pe = PeConfig::default();
    let mut group = c.benchmark_group("simulation");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = SimOptions {
            exec,
            ..SimOptions::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| {
                run_rp(
                    black_box(&cfg),
                    DistributionDim::L,
                    Scenario::PimCapsNet,
                    &hmc,
                    &pe,
                    opts,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, routing, simulation);
criterion_main!(benches);
