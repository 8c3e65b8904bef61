//! Deterministic 2D particle world with the Spread and Tag-occlusion scenarios.
//!
//! Every entity is a disk. Controllable agents are stored first, followed by landmarks
//! (Spread) or obstacles (Tag). Dynamics are a damped semi-implicit Euler integrator with
//! soft pairwise contacts; all randomness comes from the reset seed.

mod config;
mod physics;
mod rewards;
mod visibility;

use serde::{Deserialize, Serialize};

pub use config::{InitDistribution, Physics, ScenarioConfig, ScenarioKind};
pub use physics::{contact_force, derive_seed, reset, step, Transition};
pub use rewards::{boundary_penalty, rewards, spread_rewards, tag_rewards, CAPTURE_REWARD};
pub use visibility::{segment_hits_disk, visible_entities, visible_mask};

use crate::geometry::{Isometry2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The observing agent itself; only appears while building role graphs.
    SelfAgent,
    Agent,
    Pursuer,
    Evader,
    Obstacle,
    Landmark,
}

impl Role {
    pub fn is_controllable(self) -> bool {
        matches!(self, Role::Agent | Role::Pursuer | Role::Evader)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Role::SelfAgent => "self",
            Role::Agent => "agent",
            Role::Pursuer => "pursuer",
            Role::Evader => "evader",
            Role::Obstacle => "obstacle",
            Role::Landmark => "landmark",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        [
            Role::SelfAgent,
            Role::Agent,
            Role::Pursuer,
            Role::Evader,
            Role::Obstacle,
            Role::Landmark,
        ]
        .into_iter()
        .find(|r| r.tag() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub role: Role,
    pub movable: bool,
    pub collide: bool,
    /// `None` means unbounded.
    pub max_speed: Option<f64>,
    /// Force gain applied to the commanded action.
    pub accel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub entities: Vec<EntityState>,
    pub time_step: usize,
    pub bounds: f64,
}

impl WorldState {
    /// Indices of controllable agents (always a prefix of `entities`).
    pub fn agent_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role.is_controllable())
            .map(|(i, _)| i)
    }

    pub fn num_agents(&self) -> usize {
        self.entities.iter().filter(|e| e.role.is_controllable()).count()
    }

    pub fn indices_of(&self, role: Role) -> Vec<usize> {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies a rigid motion (possibly improper) to every position and velocity.
    pub fn transformed(&self, g: &Isometry2) -> WorldState {
        let mut out = self.clone();
        for e in &mut out.entities {
            e.position = g.apply_point(e.position);
            e.velocity = g.apply_vector(e.velocity);
        }
        out
    }
}
