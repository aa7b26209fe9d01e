use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use coagfrag_core::harness::{run_cesaro, test_invariance_onestep, CesaroConfig, InvarianceConfig};
use coagfrag_core::{Execution, KernelParams, SigmaSpec};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn cesaro(c: &mut Criterion) {
    let params = KernelParams::new(1.0, 1.0).unwrap();
    let cfg = CesaroConfig::new(params, SigmaSpec::Uniform, 20_000, 8, 1);
    let mut group = c.benchmark_group("cesaro_replicas");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(run_cesaro(&cfg, mode).unwrap()))
        });
    }
    group.finish();
}

fn invariance(c: &mut Criterion) {
    let cfg = InvarianceConfig::new(1.0, SigmaSpec::Uniform, 4096, 1).unwrap();
    let mut group = c.benchmark_group("invariance_samples");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| black_box(test_invariance_onestep(&cfg, mode).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, cesaro, invariance);
criterion_main!(benches);
