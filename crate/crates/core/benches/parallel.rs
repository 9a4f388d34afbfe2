use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use secure_fusion::analysis::{drive_sweep, probe_directions, recovery_probabilities};
use secure_fusion::fusion::FusionConfig;
use secure_fusion::linalg::DEFAULT_TOL;
use secure_fusion::system::{build_steady_kalman, simulate_trajectory, steady_covariances, SystemModel};
use secure_fusion::Execution;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn recovery(c: &mut Criterion) {
    let model = SystemModel::default_scenario();
    let sk = build_steady_kalman(&model, DEFAULT_TOL).unwrap();
    let cov = steady_covariances(&model, &sk, DEFAULT_TOL).unwrap();
    let lambdas = [1.0, 2.0, 5.0, 10.0];

    let mut group = c.benchmark_group("recovery_probabilities");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::new(name, 100_000), &exec, |b, &exec| {
            b.iter(|| recovery_probabilities(&cov, &lambdas, 100_000, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn sweep(c: &mut Criterion) {
    let model = SystemModel::default_scenario();
    let sk = build_steady_kalman(&model, DEFAULT_TOL).unwrap();
    let traj = simulate_trajectory(&model, &sk, 50, 3).unwrap();
    let locals = &traj.steps.last().unwrap().locals;
    let dirs = probe_directions(2, 48, 5);
    let cfg = FusionConfig::new(1.0).unwrap();
    let mags = [1e2, 1e4, 1e6];

    let mut group = c.benchmark_group("drive_sweep");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| drive_sweep(locals, 2, &cfg, &dirs, &mags, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, recovery, sweep);
criterion_main!(benches);
