use std::hint::black_box;

use coinfer::agent::{actor_loss, critic_loss, sample_action, ActorCritic, Batch};
use coinfer::environment::SystemConfig;
use coinfer::exec::Exec;
use coinfer::harness::{run_baseline, ExperimentSpec, PolicyKind};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn sweep(c: &mut Criterion) {
    let mut spec = ExperimentSpec::new("table1", SystemConfig::table1(), PolicyKind::Random);
    spec.episodes = 1;
    spec.slots_per_episode = 50;
    spec.seeds = vec![0, 1];
    let mut group = c.benchmark_group("baseline_sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_baseline(black_box(&spec), exec, false).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ActorCritic::new(20, 5, &[128, 64], 0.0, &mut rng);
    let n = 256;
    let states: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut actions = Vec::with_capacity(n);
    let mut old = Vec::with_capacity(n);
    for s in &states {
        let (y, lp) = sample_action(&net, s, &mut rng).unwrap();
        actions.push(y);
        old.push(lp + rng.random_range(-0.1..0.1));
    }
    let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Batch {
        states: &states,
        actions: &actions,
        old_log_probs: &old,
        advantages: &adv,
    };
    let mut group = c.benchmark_group("minibatch_gradients");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let a = actor_loss(&net, batch, 0.2, exec).unwrap();
                let v = critic_loss(&net, &states, &adv, exec).unwrap();
                (a.loss, v.loss)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, gradients);
criterion_main!(benches);
