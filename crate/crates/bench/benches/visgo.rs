use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssp_core::model::{make_random_ssp, step, CostPerturbation};
use ssp_core::visgo::{self, is_trigger, BonusMode, Counters, SkewedModel};

/// Counters after `steps` uniformly random transitions, snapshotted on the
/// usual doubling schedule.
fn filled_counters(num_states: usize, num_actions: usize, steps: usize) -> Counters {
    let mdp = make_random_ssp(num_states, num_actions, 0.05, 0.1, 1.0, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counters = Counters::new(num_states, num_actions);
    let mut s = 0;
    for i in 0..steps {
        let a = i % num_actions;
        let (c, next) = step(&mdp, &mut rng, s, a, CostPerturbation::none()).unwrap();
        if is_trigger(counters.record_step(s, a, c, next).unwrap()) {
            counters.snapshot(s, a);
        }
        s = if next == mdp.goal() { 0 } else { next };
    }
    counters
}

fn bench_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("visgo_solve");
    for &(ns, na) in &[(6usize, 3usize), (20, 4), (50, 5)] {
        let counters = filled_counters(ns, na, 200 * ns * na);
        let model = SkewedModel::from_counters(&counters, 3.0, 0.1, BonusMode::Standard);
        group.bench_with_input(BenchmarkId::from_parameter(format!("S{ns}_A{na}")), &model, |b, m| {
            b.iter(|| visgo::solve(black_box(m), 1e-6, None).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let counters = filled_counters(20, 4, 16_000);
    let model = SkewedModel::from_counters(&counters, 3.0, 0.1, BonusMode::Standard);
    let v = visgo::solve(&model, 1e-3, None).unwrap().v;
    c.bench_function("apply_operator_S20_A4", |b| b.iter(|| visgo::apply_operator(black_box(&model), black_box(&v))));
}

criterion_group!(benches, bench_solve, bench_sweep);
criterion_main!(benches);
