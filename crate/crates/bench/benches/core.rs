use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use tethernet_core::bayes_opt::{fit_surrogate, GpOptions};
use tethernet_core::policy_learn::{ppo_update, Adam, PolicyNet, PpoConfig, Transition};
use tethernet_core::simulator::Simulator;
use tethernet_core::{convex_hull_3d, Scenario, Vec3};

fn hull(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [68, 488] {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-1.0..1.0)))
            .collect();
        c.bench_function(&format!("hull_{n}_points"), |b| b.iter(|| convex_hull_3d(black_box(&pts)).unwrap()));
    }
}

fn episode_steps(c: &mut Criterion) {
    let scenario = Scenario::desk();
    let mut sim = Simulator::new(&scenario).unwrap();
    // advance into free flight so the tether and net are both active
    for _ in 0..500 {
        sim.step().unwrap();
    }
    c.bench_function("desk_100_steps", |b| {
        b.iter_batched(
            || sim.clone(),
            |mut s| {
                for _ in 0..100 {
                    s.step().unwrap();
                }
                s
            },
            BatchSize::LargeInput,
        )
    });
}

fn gp_fit(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<Vec<f64>> = (0..120).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
    let y: Vec<f64> = x.iter().map(|p| p.iter().map(|v| (v - 0.3) * (v - 0.3)).sum()).collect();
    let opts = GpOptions::default();
    c.bench_function("gp_fit_120x5", |b| {
        b.iter(|| {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            fit_surrogate(x.clone(), y.clone(), &opts, None, &mut r).unwrap()
        })
    });
}

fn ppo(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = PolicyNet::random(-0.5, &mut rng);
    let batch: Vec<Transition> = (0..32)
        .map(|_| Transition {
            state: rng.random_range(-1.0..1.0),
            raw: [0.1, -0.2, 0.3, 0.0, -0.1],
            log_prob_old: -4.0,
            reward: rng.random_range(-10.0..12.0),
        })
        .collect();
    c.bench_function("ppo_update_32", |b| {
        b.iter_batched(
            || (net.clone(), Adam::new(net.param_count()), ChaCha8Rng::seed_from_u64(5)),
            |(mut n, mut a, mut r)| ppo_update(&mut n, &mut a, &batch, &PpoConfig::default(), 1e-3, &mut r).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = hull, episode_steps, gp_fit, ppo
}
criterion_main!(benches);
