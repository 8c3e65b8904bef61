use std::hint::black_box;
use std::rc::Rc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarm_core::eval::step_actions;
use swarm_core::marl::{learners, TrainConfig, Trainer};
use swarm_core::nn::{AttentionLayer, AttentionShape, ParamStore, Segments, Tape, Tensor};
use swarm_core::policy::{observe, Arch, ArchConfig, Controller, Observation};
use swarm_core::sim::{reset, step, ScenarioConfig};
use swarm_core::Vec2;

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = AttentionShape {
        d_model: 32,
        heads: 4,
        d_ff: 64,
    };
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut store, "att", shape, &mut rng).unwrap();
    // 256 graphs of 7 nodes, the Spread-3 batch shape.
    let seg: Segments = Rc::new((0..256).map(|g| (7 * g, 7 * g + 7)).collect());
    let x = Tensor::new(
        vec![7 * 256, 32],
        (0..7 * 256 * 32).map(|k| (k as f64 * 0.01).sin()).collect(),
    )
    .unwrap();
    c.bench_function("attention forward 256x7", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            black_box(layer.forward(&mut tape, &store, xv, &seg).unwrap());
        })
    });
    c.bench_function("attention forward+backward 256x7", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.variable(x.clone());
            let y = layer.forward(&mut tape, &store, xv, &seg).unwrap();
            let l = tape.sum(y);
            black_box(tape.backward(l).unwrap());
        })
    });
}

fn simulation(c: &mut Criterion) {
    for (name, cfg) in [("spread-3", ScenarioConfig::spread(3)), ("tag", ScenarioConfig::tag())] {
        let s0 = reset(&cfg, 1).unwrap();
        let acts = vec![Vec2::new(0.3, -0.2); s0.num_agents()];
        c.bench_function(&format!("env step {name}"), |b| {
            b.iter(|| black_box(step(&cfg, &s0, &acts).unwrap()))
        });
    }
}

fn acting(c: &mut Criterion) {
    let cfg = ScenarioConfig::tag();
    let controllers: Vec<Controller> = learners(&cfg, Arch::Lego, ArchConfig::desk(), 0)
        .unwrap()
        .into_iter()
        .map(|p| p.controller)
        .collect();
    let refs: Vec<&Controller> = controllers.iter().collect();
    let states: Vec<_> = (0..25).map(|k| reset(&cfg, k).unwrap()).collect();
    c.bench_function("joint action tag x25 envs", |b| {
        b.iter_batched(
            || vec![ChaCha8Rng::seed_from_u64(0); 25],
            |mut rngs| black_box(step_actions(&refs, &states, &mut rngs).unwrap()),
            BatchSize::SmallInput,
        )
    });
    let s = &states[0];
    c.bench_function("observe tag lego", |b| {
        b.iter(|| {
            let o: Vec<Observation> = s
                .agent_indices()
                .map(|i| observe(Arch::Lego, &cfg.role_schema(), s, i, false).unwrap().0)
                .collect();
            black_box(o)
        })
    });
}

fn training(c: &mut Criterion) {
    let cfg = ScenarioConfig::spread(3);
    let tc = TrainConfig {
        total_steps: 625,
        ppo_epochs: 2,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("mappo");
    g.sample_size(10);
    g.bench_function("one update spread-3 lego (2 epochs)", |b| {
        b.iter_batched(
            || {
                Trainer::new(
                    tc.clone(),
                    cfg.clone(),
                    learners(&cfg, Arch::Lego, ArchConfig::desk(), 0).unwrap(),
                )
                .unwrap()
            },
            |mut t| {
                t.update().unwrap();
                black_box(t.steps_done())
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

criterion_group!(benches, attention, simulation, acting, training);
criterion_main!(benches);
