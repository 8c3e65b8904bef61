use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{rewards, EntityState, InitDistribution, Physics, ScenarioConfig, WorldState};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: WorldState,
    /// One entry per controllable agent.
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Mixes a base seed with a stream index (SplitMix64 finaliser) so that episode seeds are
/// well spread even for consecutive indices.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn reset(config: &ScenarioConfig, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = config.bounds;
    let entities = config
        .entity_roles()
        .into_iter()
        .map(|role| {
            let mut e = config.template(role);
            let (lo, hi) = match (role.is_controllable(), config.init) {
                (true, InitDistribution::LeftSide) => (-b, 0.0),
                (true, InitDistribution::RightSide) => (0.0, b),
                _ => (-b, b),
            };
            let x = rng.random_range(lo..=hi);
            let y = rng.random_range(-b..=b);
            e.position = Vec2::new(x, y);
            e
        })
        .collect();
    Ok(WorldState {
        entities,
        time_step: 0,
        bounds: b,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Soft repulsive contact force acting on `a` due to `b`.
///
/// Magnitude `k·m·ln(1 + exp((r_a + r_b − d)/m))` along the centre line, cut to zero once the
/// gap exceeds the activation band. Coincident centres push `a` along −x and `b` along +x with
/// the `d = 0` magnitude.
pub fn contact_force(a: &EntityState, b: &EntityState, physics: &Physics) -> Vec2 {
    if !(a.collide && b.collide) {
        return Vec2::ZERO;
    }
    let delta = a.position - b.position;
    let dist = delta.norm();
    let min_dist = a.radius + b.radius;
    if dist >= min_dist + physics.contact_band {
        return Vec2::ZERO;
    }
    let m = physics.contact_margin;
    let magnitude = physics.contact_stiffness * m * softplus((min_dist - dist) / m);
    if dist == 0.0 {
        // Fixed fallback axis; the ordering rule keeps the pair antisymmetric.
        let sign = if fallback_order(a, b) { -1.0 } else { 1.0 };
        return Vec2::new(sign * magnitude, 0.0);
    }
    delta * (magnitude / dist)
}

/// Deterministic tie-break for coincident centres. Strict weak ordering on entity contents.
fn fallback_order(a: &EntityState, b: &EntityState) -> bool {
    let key = |e: &EntityState| {
        (
            e.role,
            e.radius.to_bits(),
            e.velocity.x.to_bits(),
            e.velocity.y.to_bits(),
        )
    };
    key(a) < key(b)
}

/// Advances the world by one step. `actions` holds one force per controllable agent.
pub fn step(config: &ScenarioConfig, state: &WorldState, actions: &[Vec2]) -> Result<Transition> {
    let n_agents = state.num_agents();
    if actions.len() != n_agents {
        return Err(Error::Contract(format!(
            "expected {n_agents} actions, got {}",
            actions.len()
        )));
    }
    if let Some(i) = actions.iter().position(|a| !a.is_finite()) {
        return Err(Error::Contract(format!("action {i} is not finite")));
    }
    if state.time_step >= config.horizon {
        return Err(Error::Contract(format!(
            "episode already finished at step {}",
            state.time_step
        )));
    }
    let physics = &config.physics;
    let n = state.entities.len();

    let mut forces = vec![Vec2::ZERO; n];
    for (agent, action) in state.agent_indices().zip(actions) {
        forces[agent] = *action * state.entities[agent].accel;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let f = contact_force(&state.entities[i], &state.entities[j], physics);
            if f != Vec2::ZERO {
                forces[i] += f;
                forces[j] -= f;
            }
        }
    }

    let mut next = state.clone();
    for (e, f) in next.entities.iter_mut().zip(&forces) {
        if !e.movable {
            e.velocity = Vec2::ZERO;
            continue;
        }
        let mut v = e.velocity * (1.0 - physics.damping) + *f * (physics.dt / physics.mass);
        if let Some(max) = e.max_speed {
            v = v.cap_norm(max);
        }
        e.velocity = v;
        e.position += v * physics.dt;
    }
    next.time_step += 1;

    let rewards = rewards(config, &next);
    let done = next.time_step == config.horizon;
    Ok(Transition {
        state: next,
        rewards,
        done,
    })
}
