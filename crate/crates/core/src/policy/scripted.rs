use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::sim::{visible_mask, Role, WorldState};

/// Hand-written behaviours used as frozen opponents and as the random baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    /// Isotropic Gaussian force with standard deviation `std`, norm-capped at 1.
    Random {
        std: f64,
    },
    /// Full force toward the nearest visible evader.
    Pursue,
    /// Away from visible pursuers (inverse-distance weighted) with a pull back toward the centre.
    Flee,
    Idle,
}

impl Behaviour {
    /// The untrained Gaussian policy: near-zero mean, `exp(-0.5)` standard deviation.
    pub fn random_default() -> Self {
        Behaviour::Random { std: (-0.5f64).exp() }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Behaviour::Random { .. } => "random",
            Behaviour::Pursue => "pursue",
            Behaviour::Flee => "flee",
            Behaviour::Idle => "idle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Self::random_default()),
            "pursue" => Some(Behaviour::Pursue),
            "flee" => Some(Behaviour::Flee),
            "idle" => Some(Behaviour::Idle),
            _ => None,
        }
    }

    /// World-frame action of `agent`. Only `Random` consumes randomness.
    pub fn action<R: Rng + ?Sized>(&self, state: &WorldState, agent: usize, rng: &mut R) -> Vec2 {
        let me = state.entities[agent].position;
        match *self {
            Behaviour::Random { std } => {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                (Vec2::new(x, y) * std).cap_norm(1.0)
            }
            Behaviour::Idle => Vec2::ZERO,
            Behaviour::Pursue => {
                let mask = visible_mask(state, agent);
                state
                    .entities
                    .iter()
                    .enumerate()
                    .filter(|(j, e)| mask[*j] && e.role == Role::Evader)
                    .map(|(_, e)| e.position - me)
                    .min_by(|a, b| a.norm().total_cmp(&b.norm()))
                    .map(unit)
                    .unwrap_or(Vec2::ZERO)
            }
            Behaviour::Flee => {
                let mask = visible_mask(state, agent);
                let mut push = Vec2::ZERO;
                for (j, e) in state.entities.iter().enumerate() {
                    if mask[j] && e.role == Role::Pursuer {
                        let d = me - e.position;
                        push += unit(d) * (1.0 / d.norm().max(0.05));
                    }
                }
                (unit(push) - me * 0.5).cap_norm(1.0)
            }
        }
    }
}

fn unit(v: Vec2) -> Vec2 {
    let n = v.norm();
    if n > 1e-12 {
        v * (1.0 / n)
    } else {
        Vec2::ZERO
    }
}
