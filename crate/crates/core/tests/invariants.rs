use std::rc::Rc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarm_core::canonical::{canonicalize, center_of_mass, decanonicalize_action, frame_for};
use swarm_core::eval::{evaluate, zero_shot_scale, Provenance};
use swarm_core::graph::build_role_graphs;
use swarm_core::marl::{gae, learners, normalize_advantages};
use swarm_core::nn::{attention_layer_forward, AttentionLayer, AttentionShape, ParamStore, Segments, Tape, Tensor};
use swarm_core::policy::{observe, Arch, ArchConfig, Controller, PolicySpec, RolePolicy};
use swarm_core::sim::{
    boundary_penalty, contact_force, reset, spread_rewards, step, tag_rewards, visible_entities, Physics, Role,
    ScenarioConfig, WorldState,
};
use swarm_core::{Isometry2, Mat2, Vec2};

fn vec2() -> impl Strategy<Value = Vec2> {
    (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y)| Vec2::new(x, y))
}

/// Rotation by `theta`, optionally after a reflection, plus a translation.
fn isometry() -> impl Strategy<Value = Isometry2> {
    (-std::f64::consts::PI..std::f64::consts::PI, any::<bool>(), vec2()).prop_map(|(theta, reflect, t)| {
        let r = Mat2::rotation(theta);
        let lin = if reflect { r.mul_mat(&Mat2::reflect_x()) } else { r };
        Isometry2::new(lin, t * 3.0)
    })
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    prop_oneof![
        (1usize..7).prop_map(ScenarioConfig::spread),
        (1usize..4, 1usize..4, 0usize..4).prop_map(|(p, e, o)| ScenarioConfig::tag_with(p, e, o)),
    ]
}

/// A reset state in which every movable entity has a velocity of at least 0.05.
fn moving_state(cfg: &ScenarioConfig, seed: u64, speeds: &[Vec2]) -> WorldState {
    let mut s = reset(cfg, seed).unwrap();
    for (e, v) in s.entities.iter_mut().filter(|e| e.movable).zip(speeds.iter().cycle()) {
        e.velocity = if v.norm() < 0.05 { Vec2::new(0.05, 0.1) } else { *v };
    }
    s
}

fn speeds() -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec(vec2(), 1..8)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn simulation_is_deterministic(cfg in scenario(), seed in any::<u64>(), acts in prop::collection::vec(vec2(), 1..40)) {
        let run = || {
            let mut s = reset(&cfg, seed).unwrap();
            let mut out = Vec::new();
            for t in 0..cfg.horizon.min(30) {
                let a: Vec<Vec2> = (0..s.num_agents()).map(|k| acts[(t + k) % acts.len()]).collect();
                let tr = step(&cfg, &s, &a).unwrap();
                out.push(tr.rewards.clone());
                s = tr.state;
            }
            (s, out)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn free_decay_scales_speed(seed in any::<u64>(), v in vec2()) {
        let cfg = ScenarioConfig::spread(1);
        let mut s = reset(&cfg, seed).unwrap();
        s.entities[0].velocity = v;
        let next = step(&cfg, &s, &[Vec2::ZERO]).unwrap().state;
        let k = 1.0 - Physics::default().damping;
        prop_assert_eq!(next.entities[0].velocity, v * k);
        prop_assert!((next.entities[0].velocity.norm() - k * v.norm()).abs() <= 1e-15 * v.norm().max(1.0));
    }

    #[test]
    fn contact_forces_cancel(pa in vec2(), d in vec2(), ra in 0.01f64..0.4, rb in 0.01f64..0.4) {
        let cfg = ScenarioConfig::tag();
        let mut a = cfg.template(Role::Pursuer);
        let mut b = cfg.template(Role::Evader);
        a.position = pa;
        b.position = pa + d * 0.3;
        a.radius = ra;
        b.radius = rb;
        let phys = Physics::default();
        let sum = contact_force(&a, &b, &phys) + contact_force(&b, &a, &phys);
        prop_assert_eq!(sum, Vec2::ZERO);
    }

    #[test]
    fn static_entities_never_move(cfg in scenario(), seed in any::<u64>(), acts in prop::collection::vec(vec2(), 1..20)) {
        let mut s = reset(&cfg, seed).unwrap();
        let start = s.clone();
        loop {
            let a: Vec<Vec2> = (0..s.num_agents()).map(|k| acts[(s.time_step + k) % acts.len()]).collect();
            let tr = step(&cfg, &s, &a).unwrap();
            s = tr.state;
            if tr.done {
                break;
            }
        }
        for (e, e0) in s.entities.iter().zip(&start.entities) {
            if !e.movable {
                prop_assert_eq!(e.position, e0.position);
            }
        }
    }

    #[test]
    fn rewards_ignore_rigid_motions(n in 1usize..6, seed in any::<u64>(), g in isometry()) {
        let s = reset(&ScenarioConfig::spread(n), seed).unwrap();
        prop_assert!(max_diff(&spread_rewards(&s), &spread_rewards(&s.transformed(&g))) < 1e-12);

        // Tag contact terms, with the square-arena boundary term added back.
        let t = reset(&ScenarioConfig::tag(), seed).unwrap();
        let contact = |w: &WorldState| -> Vec<f64> {
            let b = w.bounds;
            w.agent_indices()
                .zip(tag_rewards(w))
                .map(|(i, r)| {
                    let p = w.entities[i].position;
                    r + boundary_penalty(p.x / b) + boundary_penalty(p.y / b)
                })
                .collect()
        };
        prop_assert!(max_diff(&contact(&t), &contact(&t.transformed(&g))) < 1e-12);
    }

    #[test]
    fn canonical_observation_is_invariant(cfg in scenario(), seed in any::<u64>(), v in speeds(), g in isometry()) {
        let s = moving_state(&cfg, seed, &v);
        let m = s.transformed(&g);
        let com = center_of_mass(&s);
        for i in s.agent_indices() {
            // With the centre of mass on the heading line the handedness is a convention, and
            // reflections cannot preserve it.
            let e = &s.entities[i];
            if (e.velocity.perp().dot(com - e.position) / e.velocity.norm()).abs() < 1e-9 {
                continue;
            }
            let vis = visible_entities(&s, i);
            prop_assert_eq!(&vis, &visible_entities(&m, i));
            let (f0, f1) = (frame_for(&s, i), frame_for(&m, i));
            let (a, b) = (canonicalize(&s, i, &vis, &f0), canonicalize(&m, i, &vis, &f1));
            prop_assert!((a.self_speed - b.self_speed).norm() < 1e-12);
            for (x, y) in a.neighbors.iter().zip(&b.neighbors) {
                prop_assert_eq!(x.index, y.index);
                prop_assert!((x.position - y.position).norm() < 1e-12);
                prop_assert!((x.velocity - y.velocity).norm() < 1e-12);
            }
            // The frame follows the transformation.
            prop_assert!(f1.rotation.max_abs_diff(&g.linear.mul_mat(&f0.rotation)) < 1e-12);
            // Relative distances are kept.
            for x in &a.neighbors {
                let true_d = s.entities[x.index].position.distance(s.entities[i].position);
                prop_assert!((x.position.norm() - true_d).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decanonicalisation_inverts_the_frame(cfg in scenario(), seed in any::<u64>(), v in speeds(), a in vec2()) {
        let s = moving_state(&cfg, seed, &v);
        for i in s.agent_indices() {
            let f = frame_for(&s, i);
            let back = decanonicalize_action(&f, f.rotation.tmul_vec(a));
            prop_assert!((back - a).norm() < 1e-9);
        }
    }

    #[test]
    fn role_graphs_cover_visible_entities(cfg in scenario(), seed in any::<u64>(), v in speeds()) {
        let s = moving_state(&cfg, seed, &v);
        let schema = cfg.role_schema();
        for i in s.agent_indices() {
            let vis = visible_entities(&s, i);
            let f = frame_for(&s, i);
            let g = build_role_graphs(&canonicalize(&s, i, &vis, &f), &schema).unwrap();
            prop_assert_eq!(g.node_count(), vis.len());
            prop_assert_eq!(g.buckets.len(), schema.len());
            prop_assert!(g.buckets.iter().flatten().all(|row| row.len() == 4));
        }
    }

    #[test]
    fn reindexing_within_a_role_permutes_one_bucket(seed in any::<u64>(), v in speeds()) {
        let cfg = ScenarioConfig::spread(4);
        let s = moving_state(&cfg, seed, &v);
        let landmarks = s.indices_of(Role::Landmark);
        let mut swapped = s.clone();
        swapped.entities.swap(landmarks[0], landmarks[2]);
        let schema = cfg.role_schema();
        let graphs = |w: &WorldState| {
            let vis = visible_entities(w, 0);
            build_role_graphs(&canonicalize(w, 0, &vis, &frame_for(w, 0)), &schema).unwrap()
        };
        let (a, b) = (graphs(&s), graphs(&swapped));
        for (k, role) in schema.iter().enumerate() {
            if *role == Role::Landmark {
                let mut x = a.buckets[k].clone();
                let mut y = b.buckets[k].clone();
                x.sort_by(|p, q| p.partial_cmp(q).unwrap());
                y.sort_by(|p, q| p.partial_cmp(q).unwrap());
                prop_assert_eq!(x, y);
            } else {
                prop_assert_eq!(&a.buckets[k], &b.buckets[k]);
            }
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), n in 1usize..7, perm_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttentionShape { d_model: 8, heads: 2, d_ff: 16 };
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "a", shape, &mut rng).unwrap();
        let x: Vec<Vec<f64>> = (0..n).map(|r| (0..8).map(|c| ((r * 8 + c) as f64 * 0.37 + seed as f64 * 1e-3).sin()).collect()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut prng);
        let px: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let y = attention_layer_forward(&Tensor::from_rows(&x).unwrap(), &layer, &store).unwrap();
        let py = attention_layer_forward(&Tensor::from_rows(&px).unwrap(), &layer, &store).unwrap();
        for (new, &old) in order.iter().enumerate() {
            prop_assert!(max_diff(py.row(new), y.row(old)) < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), sizes in prop::collection::vec(0usize..6, 1..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttentionShape { d_model: 4, heads: 2, d_ff: 8 };
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "a", shape, &mut rng).unwrap();
        let total: usize = sizes.iter().sum();
        let mut segs = Vec::new();
        let mut at = 0;
        for s in &sizes {
            segs.push((at, at + s));
            at += s;
        }
        let seg: Segments = Rc::new(segs);
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..total * 4).map(|k| (k as f64 * 1.7).cos() * 30.0).collect();
        let x = tape.constant(Tensor::new(vec![total, 4], data).unwrap());
        let q = layer.query.forward(&mut tape, &store, x).unwrap();
        let k = layer.key.forward(&mut tape, &store, x).unwrap();
        let v = layer.value.forward(&mut tape, &store, x).unwrap();
        let att = tape.attention(q, k, v, &seg, 2).unwrap();
        let probs = tape.attention_weights(att).unwrap();
        let mut pos = 0;
        for s in &sizes {
            for _ in 0..2 * s {
                let row_sum: f64 = probs[pos..pos + s].iter().sum();
                prop_assert!((row_sum - 1.0).abs() < 1e-12);
                prop_assert!(probs[pos..pos + s].iter().all(|p| p.is_finite()));
                pos += s;
            }
        }
    }

    #[test]
    fn zeroed_output_weights_give_identity(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttentionShape { d_model: 6, heads: 3, d_ff: 12 };
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "a", shape, &mut rng).unwrap();
        store.get_mut(layer.ff_out.weight).data_mut().fill(0.0);
        store.get_mut(layer.ff_out.bias.unwrap()).data_mut().fill(0.0);
        let x = Tensor::new(vec![n, 6], (0..n * 6).map(|k| (k as f64).sin()).collect()).unwrap();
        let y = attention_layer_forward(&x, &layer, &store).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn norm_cap_commutes_with_rotation(a in vec2(), theta in -3.2f64..3.2, reflect in any::<bool>(), cap in 0.1f64..2.0) {
        let r = Mat2::rotation(theta);
        let l = if reflect { r.mul_mat(&Mat2::reflect_x()) } else { r };
        let a = a * 2.0;
        prop_assert!((l.mul_vec(a).cap_norm(cap) - l.mul_vec(a.cap_norm(cap))).norm() < 1e-12);
    }

    #[test]
    fn advantages_normalise(xs in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
        let mut a = xs.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let m = a.iter().sum::<f64>() / n;
        let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(m.abs() < 1e-6);
        prop_assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn monte_carlo_advantages(rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, prop::bool::weighted(0.1)), 1..50), boot in -5.0f64..5.0, gamma in 0.5f64..1.0) {
        let r: Vec<f64> = rv.iter().map(|x| x.0).collect();
        let v: Vec<f64> = rv.iter().map(|x| x.1).collect();
        let d: Vec<bool> = rv.iter().map(|x| x.2).collect();
        let (adv, ret) = gae(&r, &v, &d, boot, gamma, 1.0).unwrap();
        for t in 0..r.len() {
            // Discounted sum until the episode ends or the data runs out.
            let mut g = 0.0;
            let mut disc = 1.0;
            let mut k = t;
            loop {
                g += disc * r[k];
                disc *= gamma;
                if d[k] {
                    break;
                }
                k += 1;
                if k == r.len() {
                    g += disc * boot;
                    break;
                }
            }
            prop_assert!((ret[t] - g).abs() < 1e-10);
            prop_assert!((adv[t] - (g - v[t])).abs() < 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn policies_act_on_any_team_size(n in 1usize..9, seed in any::<u64>()) {
        let trained_on = ScenarioConfig::spread(3);
        let spec = PolicySpec::for_scenario(Role::Agent, Arch::Lego, ArchConfig::desk(), &trained_on);
        let policy = RolePolicy::new(spec, seed).unwrap();
        let cfg = ScenarioConfig::spread(n);
        let s = reset(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in s.agent_indices() {
            let (obs, frame) = observe(Arch::Lego, &cfg.role_schema(), &s, i, false).unwrap();
            let a = policy.act(&obs, &frame, &mut rng, true).unwrap();
            prop_assert!(a.global_action.is_finite());
            prop_assert!(a.global_action.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn reports_are_reproducible_and_scaling_is_pure(seed in 0u64..1000) {
        let cfg = ScenarioConfig::spread(2);
        let controllers: Vec<Controller> = learners(&cfg, Arch::Lego, ArchConfig::desk(), seed)
            .unwrap()
            .into_iter()
            .map(|p| p.controller)
            .collect();
        let before = controllers.clone();
        let prov = Provenance::new(&controllers, cfg.descriptor(), 0);
        let a = evaluate(&controllers, &cfg, 2, &[seed, seed + 1], prov.clone()).unwrap();
        let b = evaluate(&controllers, &cfg, 2, &[seed, seed + 1], prov.clone()).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.aggregates_consistent());
        zero_shot_scale(&controllers, &cfg, &[3], 1, &[seed], &prov).unwrap();
        prop_assert_eq!(controllers, before);
    }
}
