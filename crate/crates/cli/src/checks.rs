//! Randomised property suites with independent oracles.
//!
//! Every property reports the largest deviation it observed against its tolerance. The
//! oracles here deliberately avoid the code paths they check: finite differences instead of
//! the tape, a dense point sampler instead of the segment–disk test, explicit summations
//! instead of the advantage recursion, and plain loops instead of the attention kernel.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swarm_core::eval::step_actions;
use swarm_core::marl::{gae, normalize_advantages};
use swarm_core::nn::{
    attention_layer_forward, mean_adjacency_edges, Activation, AttentionLayer, AttentionShape, GcnLayer, Linear, Mlp,
    ParamStore, Segments, Tape, Tensor, Var,
};
use swarm_core::policy::{observe, Arch, ArchConfig, Controller, Observation, PolicySpec, RolePolicy};
use swarm_core::sim::{
    contact_force, reset, spread_rewards, step, visible_mask, EntityState, Physics, Role, ScenarioConfig, WorldState,
};
use swarm_core::{Isometry2, Mat2, Vec2};

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

impl PropertyResult {
    /// Passes when the deviation is strictly below the tolerance.
    pub fn below(name: &str, max_deviation: f64, tolerance: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            max_deviation,
            tolerance,
            samples,
            passed: max_deviation < tolerance,
        }
    }

    /// Passes only when the deviation is exactly zero.
    pub fn exact(name: &str, max_deviation: f64, samples: usize) -> Self {
        Self {
            name: name.to_string(),
            max_deviation,
            tolerance: 0.0,
            samples,
            passed: max_deviation == 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = format!("suite {} (seed {})\n", self.suite, self.seed);
        for p in &self.properties {
            out.push_str(&format!(
                "  {:<4} {:<34} max deviation {:.3e} (tolerance {:.1e}, {} samples)\n",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.max_deviation,
                p.tolerance,
                p.samples
            ));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Equivariance,
    Gradients,
    Physics,
    Gae,
    Attention,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Equivariance,
        Suite::Gradients,
        Suite::Physics,
        Suite::Gae,
        Suite::Attention,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Suite::Equivariance => "equivariance",
            Suite::Gradients => "gradients",
            Suite::Physics => "physics",
            Suite::Gae => "gae",
            Suite::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.tag() == s)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport, CliError> {
    let properties = match suite {
        Suite::Equivariance => equivariance(seed, 100, 20)?,
        Suite::Gradients => gradients(seed)?,
        Suite::Physics => physics(seed, 1000)?,
        Suite::Gae => gae_suite(seed, 100)?,
        Suite::Attention => attention_oracle(seed)?,
    };
    Ok(SuiteReport {
        suite: suite.tag().to_string(),
        seed,
        properties,
    })
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Adds `N(0, std²)` noise to every parameter so that outputs are far from the tiny
/// initial actions and the norm cap is sometimes active.
pub fn perturb(store: &mut ParamStore, std: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for x in store.get_mut(id).data_mut() {
            *x += std * gauss(rng);
        }
    }
}

/// LEGO controllers for every role with perturbed parameters.
pub fn perturbed_lego(scenario: &ScenarioConfig, seed: u64) -> Result<Vec<Controller>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenario
        .controllable_roles()
        .into_iter()
        .map(|role| {
            let spec = PolicySpec::for_scenario(role, Arch::Lego, ArchConfig::desk(), scenario);
            let mut p = RolePolicy::new(spec, rng.next_u64()).map_err(CliError::Core)?;
            perturb(&mut p.store, 0.3, &mut rng);
            Ok(Controller::Policy(p))
        })
        .collect()
}

/// A reset state whose movable entities all have random non-zero velocities.
pub fn random_moving_state(scenario: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<WorldState, CliError> {
    let mut s = reset(scenario, rng.next_u64()).map_err(CliError::Core)?;
    for e in s.entities.iter_mut().filter(|e| e.movable) {
        e.velocity = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    Ok(s)
}

/// Cycles through pure rotations, pure translations, reflections and general compositions.
pub fn random_transform(kind: usize, rng: &mut ChaCha8Rng) -> Isometry2 {
    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let t = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let rot = Mat2::rotation(theta);
    let reflect_axis = Mat2::rotation(theta / 2.0)
        .mul_mat(&Mat2::reflect_x())
        .mul_mat(&Mat2::rotation(-theta / 2.0));
    match kind % 4 {
        0 => Isometry2::new(rot, Vec2::ZERO),
        1 => Isometry2::new(Mat2::IDENTITY, t),
        2 => Isometry2::new(reflect_axis, Vec2::ZERO),
        _ => {
            let lin = if rng.random_bool(0.5) {
                rot.mul_mat(&Mat2::reflect_x())
            } else {
                rot
            };
            Isometry2::new(lin, t)
        }
    }
}

fn graph_of(obs: &Observation) -> &swarm_core::RoleGraphs {
    match obs {
        Observation::Graph(g) => g,
        _ => unreachable!("LEGO observations are graphs"),
    }
}

fn max_graph_diff(a: &Observation, b: &Observation) -> f64 {
    let (a, b) = (graph_of(a), graph_of(b));
    if a.bucket_sizes() != b.bucket_sizes() {
        return f64::INFINITY;
    }
    a.buckets
        .iter()
        .flatten()
        .zip(b.buckets.iter().flatten())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn joint(controllers: &[&Controller], state: &WorldState) -> Result<Vec<Vec2>, CliError> {
    let mut rngs = [ChaCha8Rng::seed_from_u64(0)];
    Ok(step_actions(controllers, std::slice::from_ref(state), &mut rngs)
        .map_err(CliError::Core)?
        .remove(0))
}

fn encoding(policy: &RolePolicy, obs: &Observation) -> Result<Vec<f64>, CliError> {
    let mut tape = Tape::new();
    let s = policy.encode(&mut tape, &[obs]).map_err(CliError::Core)?;
    Ok(tape.value(s).data().to_vec())
}

/// Action equivariance, observation invariance and permutation properties over random
/// states and transforms of Spread and Tag.
pub fn equivariance(seed: u64, states: usize, transforms: usize) -> Result<Vec<PropertyResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut act_dev, mut obs_dev, mut node_perm_dev, mut relabel_dev, mut cap_dev) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut act_n, mut obs_n, mut perm_n, mut relabel_n) = (0, 0, 0, 0);
    for scenario in [ScenarioConfig::spread(3), ScenarioConfig::tag()] {
        let controllers = perturbed_lego(&scenario, rng.next_u64())?;
        let refs: Vec<&Controller> = controllers.iter().collect();
        let schema = scenario.role_schema();
        for _ in 0..states {
            let state = random_moving_state(&scenario, &mut rng)?;
            let base = joint(&refs, &state)?;
            let base_obs: Vec<Observation> = state
                .agent_indices()
                .map(|i| observe(Arch::Lego, &schema, &state, i, false).map(|o| o.0))
                .collect::<Result<_, _>>()
                .map_err(CliError::Core)?;
            for k in 0..transforms {
                let g = random_transform(k, &mut rng);
                let moved = state.transformed(&g);
                let acts = joint(&refs, &moved)?;
                for (a, b) in acts.iter().zip(&base) {
                    act_dev = act_dev.max((*a - g.linear.mul_vec(*b)).norm());
                    act_n += 1;
                }
                for (i, o) in moved.agent_indices().zip(&base_obs) {
                    let m = observe(Arch::Lego, &schema, &moved, i, false)
                        .map_err(CliError::Core)?
                        .0;
                    obs_dev = obs_dev.max(max_graph_diff(&m, o));
                    obs_n += 1;
                }
                let a = Vec2::new(gauss(&mut rng), gauss(&mut rng)) * 2.0;
                cap_dev = cap_dev.max((g.linear.mul_vec(a).cap_norm(1.0) - g.linear.mul_vec(a.cap_norm(1.0))).norm());
            }

            // Shuffling nodes inside every bucket leaves each agent's encoding unchanged.
            for (i, o) in state.agent_indices().zip(&base_obs) {
                let Controller::Policy(p) = refs.iter().find(|c| c.role() == state.entities[i].role).expect("role")
                else {
                    unreachable!()
                };
                let mut shuffled = graph_of(o).clone();
                for b in shuffled.buckets.iter_mut() {
                    b.shuffle(&mut rng);
                }
                let e0 = encoding(p, o)?;
                let e1 = encoding(p, &Observation::Graph(shuffled))?;
                node_perm_dev = node_perm_dev.max(e0.iter().zip(&e1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
                perm_n += 1;
            }

            // Relabelling agents within each role permutes the joint action the same way.
            let mut perm: Vec<usize> = (0..state.entities.len()).collect();
            for role in scenario.controllable_roles() {
                let idx = state.indices_of(role);
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                for (a, b) in idx.iter().zip(shuffled) {
                    perm[*a] = b;
                }
            }
            let mut relabelled = state.clone();
            for (new, &old) in perm.iter().enumerate() {
                relabelled.entities[new] = state.entities[old].clone();
            }
            let acts = joint(&refs, &relabelled)?;
            for (new, &old) in perm.iter().enumerate().take(acts.len()) {
                relabel_dev = relabel_dev.max((acts[new] - base[old]).norm());
                relabel_n += 1;
            }
        }
    }
    Ok(vec![
        PropertyResult::below("action equivariance", act_dev, 1e-10, act_n),
        PropertyResult::below("observation invariance", obs_dev, 1e-6, obs_n),
        PropertyResult::below("within-role node permutation", node_perm_dev, 1e-12, perm_n),
        PropertyResult::below("agent relabelling", relabel_dev, 1e-10, relabel_n),
        PropertyResult::below("norm cap commutes with rotation", cap_dev, 1e-12, act_n),
    ])
}

/// Builds the loss on a fresh tape; returns it with the parameter gradients.
type LossFn<'a> = dyn Fn(&ParamStore, &mut Tape) -> Result<Var, CliError> + 'a;

fn loss_value(store: &ParamStore, f: &LossFn) -> Result<f64, CliError> {
    let mut tape = Tape::new();
    let l = f(store, &mut tape)?;
    Ok(tape.value(l).item())
}

/// Largest relative error `|a − n| / max(|a|, |n|, 1e-6)` between the tape gradient and a
/// central difference with step `1e-5`, over parameters whose name passes `select`.
/// Tensors with more than `max_coords` entries are checked on a random subset.
fn fd_check(
    store: &ParamStore,
    f: &LossFn,
    select: impl Fn(&str) -> bool,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize), CliError> {
    let h = 1e-5;
    let mut tape = Tape::new();
    let l = f(store, &mut tape)?;
    let grads = tape.backward(l).map_err(CliError::Core)?.for_store(store);
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut probe = store.clone();
    for ((id, name, t), g) in store.iter().zip(&grads) {
        if !select(name) {
            continue;
        }
        let mut coords: Vec<usize> = (0..t.len()).collect();
        if coords.len() > max_coords {
            coords.shuffle(rng);
            coords.truncate(max_coords);
        }
        for c in coords {
            let x0 = t.data()[c];
            probe.get_mut(id).data_mut()[c] = x0 + h;
            let up = loss_value(&probe, f)?;
            probe.get_mut(id).data_mut()[c] = x0 - h;
            let down = loss_value(&probe, f)?;
            probe.get_mut(id).data_mut()[c] = x0;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[c];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
    }
    Ok((worst, count))
}

fn random_tensor(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| std * gauss(rng)).collect()).expect("shape")
}

/// Contracts `out` with fixed random weights so that the loss is a generic scalar of order 1.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var, CliError> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).map_err(CliError::Core)?;
    Ok(tape.sum(prod))
}

/// Finite-difference checks of every layer type in float64.
pub fn gradients(seed: u64) -> Result<Vec<PropertyResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-4;
    let mut results = Vec::new();

    // Attention block on three graphs, one of them empty.
    {
        let shape = AttentionShape {
            d_model: 8,
            heads: 2,
            d_ff: 12,
        };
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "att", shape, &mut rng).map_err(CliError::Core)?;
        perturb(&mut store, 0.2, &mut rng);
        let x = store
            .add("x", random_tensor(&[7, 8], 1.0, &mut rng))
            .map_err(CliError::Core)?;
        let seg: Segments = Rc::new(vec![(0, 3), (3, 3), (3, 7)]);
        let w = random_tensor(&[7, 8], 0.2, &mut rng);
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let xv = tape.param(s, x);
            let out = layer.forward(tape, s, xv, &seg).map_err(CliError::Core)?;
            weighted_sum(tape, out, &w)
        };
        let (att, n1) = fd_check(&store, &f, |n| !n.contains(".ff_"), 64, &mut rng)?;
        results.push(PropertyResult::below("attention", att, tol, n1));
        let (ffn, n2) = fd_check(&store, &f, |n| n.contains(".ff_"), 64, &mut rng)?;
        results.push(PropertyResult::below("feedforward", ffn, tol, n2));
    }

    // Tanh MLP.
    {
        let mut store = ParamStore::new();
        let mlp =
            Mlp::new(&mut store, "mlp", &[5, 7, 6, 3], Activation::Tanh, 1.0, &mut rng).map_err(CliError::Core)?;
        perturb(&mut store, 0.2, &mut rng);
        let x = store
            .add("x", random_tensor(&[4, 5], 1.0, &mut rng))
            .map_err(CliError::Core)?;
        let w = random_tensor(&[4, 3], 0.3, &mut rng);
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let xv = tape.param(s, x);
            let out = mlp.forward(tape, s, xv).map_err(CliError::Core)?;
            weighted_sum(tape, out, &w)
        };
        let (e, n) = fd_check(&store, &f, |_| true, 64, &mut rng)?;
        results.push(PropertyResult::below("mlp", e, tol, n));
    }

    // Two GCN layers on a random symmetric graph with self-loops.
    {
        let mut store = ParamStore::new();
        let l1 = GcnLayer::new(&mut store, "gcn0", 5, 6, &mut rng).map_err(CliError::Core)?;
        let l2 = GcnLayer::new(&mut store, "gcn1", 6, 4, &mut rng).map_err(CliError::Core)?;
        perturb(&mut store, 0.2, &mut rng);
        let n = 6;
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            adj[i * n + i] = 1.0;
            for j in 0..i {
                if rng.random_bool(0.5) {
                    adj[i * n + j] = 1.0;
                    adj[j * n + i] = 1.0;
                }
            }
        }
        let edges = Rc::new(
            mean_adjacency_edges(&Tensor::matrix(n, n, adj).map_err(CliError::Core)?, 0).map_err(CliError::Core)?,
        );
        let x = store
            .add("x", random_tensor(&[n, 5], 1.0, &mut rng))
            .map_err(CliError::Core)?;
        let w = random_tensor(&[n, 4], 0.3, &mut rng);
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let xv = tape.param(s, x);
            let h = l1.forward(tape, s, xv, &edges).map_err(CliError::Core)?;
            let out = l2.forward(tape, s, h, &edges).map_err(CliError::Core)?;
            weighted_sum(tape, out, &w)
        };
        let (e, c) = fd_check(&store, &f, |_| true, 64, &mut rng)?;
        results.push(PropertyResult::below("gcn", e, tol, c));
    }

    // Diagonal Gaussian log-density and entropy.
    {
        let mut store = ParamStore::new();
        let mean = store
            .add("mean", random_tensor(&[5, 2], 0.5, &mut rng))
            .map_err(CliError::Core)?;
        let log_std = store
            .add("log_std", random_tensor(&[2], 0.3, &mut rng))
            .map_err(CliError::Core)?;
        let actions = Rc::new(random_tensor(&[5, 2], 1.0, &mut rng));
        let w = random_tensor(&[5], 0.3, &mut rng);
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let m = tape.param(s, mean);
            let ls = tape.param(s, log_std);
            let lp = tape.gaussian_log_prob(m, ls, actions.clone()).map_err(CliError::Core)?;
            let a = weighted_sum(tape, lp, &w)?;
            let h = tape.sum(ls);
            let h = tape.scale(h, 0.7);
            tape.add(a, h).map_err(CliError::Core)
        };
        let (e, c) = fd_check(&store, &f, |_| true, 64, &mut rng)?;
        results.push(PropertyResult::below("gaussian log-prob and entropy", e, tol, c));
    }

    // Full policy: role graphs with empty buckets, pooled encoders, actor and critic heads.
    {
        let scenario = ScenarioConfig::tag();
        let spec = PolicySpec::for_scenario(
            Role::Pursuer,
            Arch::Lego,
            ArchConfig {
                d_model: 8,
                heads: 2,
                d_ff: 12,
                layers: 2,
                hidden: 8,
                ..ArchConfig::default()
            },
            &scenario,
        );
        let mut policy = RolePolicy::new(spec, rng.next_u64()).map_err(CliError::Core)?;
        perturb(&mut policy.store, 0.2, &mut rng);
        let mut obs = Vec::new();
        let mut crit = Vec::new();
        while obs.len() < 6 {
            let s = random_moving_state(&scenario, &mut rng)?;
            for i in s.indices_of(Role::Pursuer) {
                obs.push(
                    observe(Arch::Lego, &scenario.role_schema(), &s, i, false)
                        .map_err(CliError::Core)?
                        .0,
                );
                crit.push(
                    observe(Arch::Lego, &scenario.role_schema(), &s, i, true)
                        .map_err(CliError::Core)?
                        .0,
                );
            }
        }
        let acts: Vec<Vec2> = (0..obs.len())
            .map(|_| Vec2::new(gauss(&mut rng), gauss(&mut rng)))
            .collect();
        let w = random_tensor(&[obs.len()], 0.3, &mut rng);
        let u = random_tensor(&[obs.len(), 1], 0.3, &mut rng);
        let base = policy.clone();
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let mut p = base.clone();
            p.store = s.clone();
            let orefs: Vec<&Observation> = obs.iter().collect();
            let crefs: Vec<&Observation> = crit.iter().collect();
            let (lp, v, h) = p
                .evaluate_actions(tape, &orefs, Some(&crefs), &acts)
                .map_err(CliError::Core)?;
            let a = weighted_sum(tape, lp, &w)?;
            let b = weighted_sum(tape, v, &u)?;
            let h = tape.scale(h, 0.1);
            let ab = tape.add(a, b).map_err(CliError::Core)?;
            tape.add(ab, h).map_err(CliError::Core)
        };
        let (e, c) = fd_check(&policy.store, &f, |_| true, 24, &mut rng)?;
        results.push(PropertyResult::below("pooled encoder end-to-end", e, tol, c));
    }

    // Linear layer alone, as the building block of all others.
    {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 4, 3, true, 1.0, &mut rng).map_err(CliError::Core)?;
        perturb(&mut store, 0.2, &mut rng);
        let x = Tensor::from_rows(&[[0.3, -1.0, 0.5, 2.0], [1.0, 0.0, -0.2, 0.1]]).map_err(CliError::Core)?;
        let w = random_tensor(&[2, 3], 0.5, &mut rng);
        let f = |s: &ParamStore, tape: &mut Tape| -> Result<Var, CliError> {
            let xv = tape.constant(x.clone());
            let out = lin.forward(tape, s, xv).map_err(CliError::Core)?;
            weighted_sum(tape, out, &w)
        };
        let (e, c) = fd_check(&store, &f, |_| true, 64, &mut rng)?;
        results.push(PropertyResult::below("linear", e, tol, c));
    }
    Ok(results)
}

/// Occlusion by dense sampling: 1000 evenly spaced points of the closed sight line, endpoints
/// included, each tested against every obstacle disk.
pub fn dense_visibility(state: &WorldState, observer: usize) -> Vec<bool> {
    let p0 = state.entities[observer].position;
    let obstacles: Vec<&EntityState> = state.entities.iter().filter(|e| e.role == Role::Obstacle).collect();
    state
        .entities
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if j == observer || e.role == Role::Obstacle {
                return true;
            }
            let d = e.position - p0;
            !(0..1000).any(|k| {
                let t = k as f64 / 999.0;
                let q = p0 + d * t;
                obstacles.iter().any(|o| q.distance(o.position) < o.radius)
            })
        })
        .collect()
}

/// Integrator, contact, visibility and reward checks.
pub fn physics(seed: u64, configs: usize) -> Result<Vec<PropertyResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phys = Physics::default();

    // Free decay: a lone Spread agent (landmarks never collide) under zero force.
    let single = ScenarioConfig::spread(1);
    let mut decay_dev = 0.0f64;
    let mut norm_dev = 0.0f64;
    for _ in 0..200 {
        let mut s = reset(&single, rng.next_u64()).map_err(CliError::Core)?;
        let v = Vec2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        s.entities[0].velocity = v;
        let p = s.entities[0].position;
        let next = step(&single, &s, &[Vec2::ZERO]).map_err(CliError::Core)?.state;
        let v_expect = v * (1.0 - phys.damping);
        let p_expect = p + v_expect * phys.dt;
        decay_dev = decay_dev
            .max((next.entities[0].velocity - v_expect).norm())
            .max((next.entities[0].position - p_expect).norm());
        norm_dev = norm_dev.max((next.entities[0].velocity.norm() - (1.0 - phys.damping) * v.norm()).abs() / v.norm());
    }

    // Contact antisymmetry on random pairs, many of them overlapping or coincident.
    let mut anti_dev = 0.0f64;
    let template = ScenarioConfig::tag().template(Role::Pursuer);
    for k in 0..configs {
        let mut a = template.clone();
        let mut b = template.clone();
        a.radius = rng.random_range(0.02..0.3);
        b.radius = rng.random_range(0.02..0.3);
        a.position = Vec2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        b.position = if k % 50 == 0 {
            a.position
        } else {
            a.position + Vec2::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6))
        };
        let f_ab = contact_force(&a, &b, &phys);
        let f_ba = contact_force(&b, &a, &phys);
        anti_dev = anti_dev.max((f_ab + f_ba).norm());
    }

    // Obstacles never move and speed caps hold over random-action Tag episodes.
    let tag = ScenarioConfig::tag();
    let (mut immovable_dev, mut speed_excess) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let mut s = reset(&tag, rng.next_u64()).map_err(CliError::Core)?;
        let start: Vec<Vec2> = s.entities.iter().map(|e| e.position).collect();
        loop {
            let acts: Vec<Vec2> = (0..s.num_agents())
                .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let tr = step(&tag, &s, &acts).map_err(CliError::Core)?;
            for (e, p0) in tr.state.entities.iter().zip(&start) {
                if !e.movable {
                    immovable_dev = immovable_dev.max((e.position - *p0).norm()).max(e.velocity.norm());
                }
                if let Some(m) = e.max_speed {
                    speed_excess = speed_excess.max(e.velocity.norm() - m);
                }
            }
            if tr.done {
                break;
            }
            s = tr.state;
        }
    }

    // Visibility against the dense sampler on random cluttered configurations.
    let mut disagreements = 0usize;
    let mut pairs = 0usize;
    for _ in 0..configs {
        let obstacles = rng.random_range(1..4);
        let cfg = ScenarioConfig::tag_with(3, 2, obstacles);
        let mut s = reset(&cfg, rng.next_u64()).map_err(CliError::Core)?;
        for e in s.entities.iter_mut() {
            if e.role == Role::Obstacle {
                e.radius = rng.random_range(0.05..0.35);
            }
        }
        for i in s.agent_indices().collect::<Vec<_>>() {
            let fast = visible_mask(&s, i);
            let slow = dense_visibility(&s, i);
            disagreements += fast.iter().zip(&slow).filter(|(a, b)| a != b).count();
            pairs += fast.len();
        }
    }

    // Spread reward isotropy.
    let spread = ScenarioConfig::spread(4);
    let mut iso_dev = 0.0f64;
    for k in 0..configs / 10 {
        let s = reset(&spread, rng.next_u64()).map_err(CliError::Core)?;
        let g = random_transform(k, &mut rng);
        let a = spread_rewards(&s);
        let b = spread_rewards(&s.transformed(&g));
        iso_dev = iso_dev.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }

    Ok(vec![
        PropertyResult::exact("free decay", decay_dev, 200),
        PropertyResult::below("free decay speed ratio", norm_dev, 1e-15, 200),
        PropertyResult::exact("contact antisymmetry", anti_dev, configs),
        PropertyResult::exact("immovable entities", immovable_dev, 5),
        PropertyResult::exact("speed cap", speed_excess.max(0.0), 5),
        PropertyResult::exact("visibility vs dense sampler", disagreements as f64, pairs),
        PropertyResult::below("spread reward isotropy", iso_dev, 1e-12, configs / 10),
    ])
}

/// Discounted return by explicit summation up to the first episode end (or the bootstrap).
pub fn brute_force_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut g = 0.0;
            let mut terminated = false;
            let mut k = t;
            while k < n {
                g += gamma.powi((k - t) as i32) * rewards[k];
                if dones[k] {
                    terminated = true;
                    break;
                }
                k += 1;
            }
            if !terminated {
                g += gamma.powi((n - t) as i32) * bootstrap;
            }
            g
        })
        .collect()
}

/// Advantage estimates by the double sum over TD errors, weighting the k-th by `(γλ)^k`.
pub fn double_sum_advantages(r: &[f64], v: &[f64], d: &[bool], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |k: usize| {
        if d[k] {
            0.0
        } else if k + 1 < n {
            v[k + 1]
        } else {
            boot
        }
    };
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for k in t..n {
                acc += (gamma * lambda).powi((k - t) as i32) * (r[k] + gamma * next_v(k) - v[k]);
                if d[k] {
                    break;
                }
            }
            acc
        })
        .collect()
}

pub fn gae_suite(seed: u64, sequences: usize) -> Result<Vec<PropertyResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mc_dev, mut lam_dev, mut norm_dev) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..sequences {
        let n = rng.random_range(1..60);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.08)).collect();
        let boot = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.8..1.0);
        let (adv, ret) = gae(&r, &v, &d, boot, gamma, 1.0).map_err(CliError::Core)?;
        let g = brute_force_returns(&r, &d, boot, gamma);
        for t in 0..n {
            mc_dev = mc_dev.max((adv[t] - (g[t] - v[t])).abs()).max((ret[t] - g[t]).abs());
        }
        let lambda = rng.random_range(0.0..1.0);
        let (adv, _) = gae(&r, &v, &d, boot, gamma, lambda).map_err(CliError::Core)?;
        for (a, b) in adv.iter().zip(double_sum_advantages(&r, &v, &d, boot, gamma, lambda)) {
            lam_dev = lam_dev.max((a - b).abs());
        }
        if n > 1 {
            let mut a = adv.clone();
            normalize_advantages(&mut a);
            let m = a.iter().sum::<f64>() / n as f64;
            let s = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            if adv.iter().any(|x| (x - adv[0]).abs() > 1e-9) {
                norm_dev = norm_dev.max(m.abs()).max((s - 1.0).abs());
            }
        }
    }
    Ok(vec![
        PropertyResult::below("lambda=1 equals return minus value", mc_dev, 1e-10, sequences),
        PropertyResult::below("general lambda equals double sum", lam_dev, 1e-10, sequences),
        PropertyResult::below("normalised advantages standard", norm_dev, 1e-6, sequences),
    ])
}

fn matvec_rows(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| row.iter().zip(w).map(|(a, wr)| a * wr[j]).sum())
                .collect()
        })
        .collect()
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Direct evaluation of one attention block with plain loops:
/// `out_u = x_u + W2 relu(W1 (⊕_h Σ_v softmax_v(q_u·k_v/√d_h) v_v) + b1) + b2`.
#[allow(clippy::too_many_arguments)]
pub fn attention_by_hand(
    x: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    heads: usize,
    w1: &[Vec<f64>],
    b1: &[f64],
    w2: &[Vec<f64>],
    b2: &[f64],
) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = wq[0].len();
    let dh = d / heads;
    let (q, k, v) = (matvec_rows(x, wq), matvec_rows(x, wk), matvec_rows(x, wv));
    let mut mixed = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for u in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|w| cols.clone().map(|c| q[u][c] * k[w][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            for w in 0..n {
                let alpha = logits[w].exp() / denom;
                for c in cols.clone() {
                    mixed[u][c] += alpha * v[w][c];
                }
            }
        }
    }
    let hidden: Vec<Vec<f64>> = matvec_rows(&mixed, w1)
        .into_iter()
        .map(|r| r.iter().zip(b1).map(|(a, b)| (a + b).max(0.0)).collect())
        .collect();
    matvec_rows(&hidden, w2)
        .into_iter()
        .zip(x)
        .map(|(r, xr)| r.iter().zip(b2).zip(xr).map(|((a, b), c)| a + b + c).collect())
        .collect()
}

fn set_linear(store: &mut ParamStore, lin: &Linear, w: &[Vec<f64>], b: Option<&[f64]>) {
    let flat: Vec<f64> = w.iter().flatten().copied().collect();
    store.get_mut(lin.weight).data_mut().copy_from_slice(&flat);
    if let (Some(id), Some(b)) = (lin.bias, b) {
        store.get_mut(id).data_mut().copy_from_slice(b);
    }
}

fn max_rows_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    b.iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, x)| (a.get(r, c) - x).abs()))
        .fold(0.0, f64::max)
}

/// The attention block against [`attention_by_hand`]: a two-node, one-head example with
/// hand-set weights, and random multi-head instances.
pub fn attention_oracle(seed: u64) -> Result<Vec<PropertyResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let shape = AttentionShape {
        d_model: 2,
        heads: 1,
        d_ff: 2,
    };
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut store, "hand", shape, &mut rng).map_err(CliError::Core)?;
    let wq = vec![vec![1.0, 0.5], vec![-0.5, 2.0]];
    let wk = vec![vec![0.3, 0.0], vec![1.0, -1.0]];
    let wv = vec![vec![2.0, 1.0], vec![0.0, 1.0]];
    let w1 = vec![vec![1.0, -1.0], vec![0.5, 0.25]];
    let b1 = vec![0.1, -0.2];
    let w2 = vec![vec![0.7, 0.0], vec![-0.3, 1.5]];
    let b2 = vec![0.05, 0.0];
    set_linear(&mut store, &layer.query, &wq, None);
    set_linear(&mut store, &layer.key, &wk, None);
    set_linear(&mut store, &layer.value, &wv, None);
    set_linear(&mut store, &layer.ff_in, &w1, Some(&b1));
    set_linear(&mut store, &layer.ff_out, &w2, Some(&b2));
    let x = vec![vec![1.0, 2.0], vec![-0.5, 0.25]];
    let got = attention_layer_forward(&Tensor::from_rows(&x).map_err(CliError::Core)?, &layer, &store)
        .map_err(CliError::Core)?;
    let hand = attention_by_hand(&x, &wq, &wk, &wv, 1, &w1, &b1, &w2, &b2);
    let hand_dev = max_rows_diff(&got, &hand);

    let mut rand_dev = 0.0f64;
    for _ in 0..20 {
        let shape = AttentionShape {
            d_model: 8,
            heads: 2,
            d_ff: 16,
        };
        let mut store = ParamStore::new();
        let layer = AttentionLayer::new(&mut store, "r", shape, &mut rng).map_err(CliError::Core)?;
        perturb(&mut store, 0.3, &mut rng);
        let n = rng.random_range(1..7);
        let x = random_tensor(&[n, 8], 1.0, &mut rng);
        let got = attention_layer_forward(&x, &layer, &store).map_err(CliError::Core)?;
        let rows = |l: &Linear| tensor_rows(store.get(l.weight));
        let bias = |l: &Linear| store.get(l.bias.expect("bias")).data().to_vec();
        let hand = attention_by_hand(
            &tensor_rows(&x),
            &rows(&layer.query),
            &rows(&layer.key),
            &rows(&layer.value),
            2,
            &rows(&layer.ff_in),
            &bias(&layer.ff_in),
            &rows(&layer.ff_out),
            &bias(&layer.ff_out),
        );
        rand_dev = rand_dev.max(max_rows_diff(&got, &hand));
    }
    Ok(vec![
        PropertyResult::below("hand-set two-node layer", hand_dev, 1e-10, 1),
        PropertyResult::below("random multi-head layers", rand_dev, 1e-10, 20),
    ])
}
