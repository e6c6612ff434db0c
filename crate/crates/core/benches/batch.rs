//! Sequential vs rayon execution of the batch workloads: the corrector study
//! over wavenumbers and finite-difference gradient checks over directions.

use std::f64::consts::PI;
use std::hint::black_box;

use bangbang::experiment::random_direction;
use bangbang::model::LOGISTIC_POPULATION;
use bangbang::twoscale::residual_study_at;
use bangbang::*;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut modes = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    modes.push(("parallel", Execution::Parallel));
    modes
}

fn residual_study(c: &mut Criterion) {
    let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
    let disc = Discretization::new(128, 1.0, 1024).unwrap();
    let problem = ControlProblem::new(&model, &disc);
    let bundle = problem
        .bundle(&Control::uniform(&disc.space, PI).unwrap())
        .unwrap();
    let specs: Vec<PerturbationSpectrum> = [4, 6, 8, 10, 12, 14, 16]
        .iter()
        .map(|&k| PerturbationSpectrum::single_mode(&disc.space, k).unwrap())
        .collect();
    let mut group = c.benchmark_group("residual_study");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(residual_study_at(&problem, &bundle, &specs, 0.1, exec).unwrap()))
        });
    }
    group.finish();
}

fn gradient_checks(c: &mut Criterion) {
    let model = builtin_model(LOGISTIC_POPULATION, &ModelParams::default()).unwrap();
    let disc = Discretization::new(128, 1.0, 500).unwrap();
    let problem = ControlProblem::new(&model, &disc);
    let control = Control::uniform(&disc.space, PI).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let directions: Vec<Field> = (0..8)
        .map(|_| random_direction(&disc.space, &mut rng, 8))
        .collect();
    let mut group = c.benchmark_group("fd_gradient_batch");
    group.sample_size(10);
    for (name, exec) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                black_box(
                    exec.try_map(&directions, |h| problem.fd_first(control.field(), h, 1e-4))
                        .unwrap(),
                )
            })
        });
    }
    group.finish();
}

criterion_group!(benches, residual_study, gradient_checks);
criterion_main!(benches);
