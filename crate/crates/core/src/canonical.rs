//! Agent-centric frames.
//!
//! Each agent gets an orthonormal frame whose x-axis follows its velocity and whose y-axis
//! points towards the side of the team's centre of mass. Expressing the neighbourhood in that
//! frame removes any dependence on the global rotation, translation or reflection of the
//! scene; actions produced in the frame are mapped back with the frame's rotation.

use serde::{Deserialize, Serialize};

use crate::geometry::{Mat2, Vec2};
use crate::sim::{EntityState, Role, WorldState};

/// Speeds at or below this are treated as zero when choosing the frame's x-axis.
pub const ZERO_SPEED_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalFrame {
    /// Columns are the local x and y axes expressed in world coordinates.
    pub rotation: Mat2,
    pub origin: Vec2,
    /// +1 or −1, equal to `det(rotation)`.
    pub handedness: f64,
}

impl CanonicalFrame {
    pub fn identity(origin: Vec2) -> Self {
        Self {
            rotation: Mat2::IDENTITY,
            origin,
            handedness: 1.0,
        }
    }

    pub fn to_local_point(&self, p: Vec2) -> Vec2 {
        self.rotation.tmul_vec(p - self.origin)
    }

    pub fn to_local_vector(&self, v: Vec2) -> Vec2 {
        self.rotation.tmul_vec(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub role: Role,
    pub position: Vec2,
    pub velocity: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalObservation {
    /// Always `[‖v_i‖, 0]`.
    pub self_speed: Vec2,
    /// Visible entities other than the observer, in entity-index order.
    pub neighbors: Vec<Neighbor>,
}

fn sign_nonneg(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub fn build_frame(agent: &EntityState, center_of_mass: Vec2, global_x: Vec2) -> CanonicalFrame {
    let speed = agent.velocity.norm();
    let x_axis = if speed > ZERO_SPEED_EPS {
        agent.velocity * (1.0 / speed)
    } else {
        global_x
    };
    let to_com = center_of_mass - agent.position;
    let j_x = x_axis.perp();
    // y must make an acute angle with the direction to the centre of mass.
    let side = sign_nonneg(j_x.dot(to_com));
    let y_axis = j_x * side;
    let rotation = Mat2::from_cols(x_axis, y_axis);
    CanonicalFrame {
        rotation,
        origin: agent.position,
        handedness: side,
    }
}

/// Mean position of the controllable agents.
pub fn center_of_mass(state: &WorldState) -> Vec2 {
    let mut sum = Vec2::ZERO;
    let mut n = 0usize;
    for i in state.agent_indices() {
        sum += state.entities[i].position;
        n += 1;
    }
    if n == 0 {
        Vec2::ZERO
    } else {
        sum * (1.0 / n as f64)
    }
}

/// Frame of `agent` in `state`, using the world x-axis as the zero-velocity fallback.
pub fn frame_for(state: &WorldState, agent: usize) -> CanonicalFrame {
    build_frame(&state.entities[agent], center_of_mass(state), Vec2::X)
}

pub fn canonicalize(
    state: &WorldState,
    observer: usize,
    visible: &[usize],
    frame: &CanonicalFrame,
) -> CanonicalObservation {
    let me = &state.entities[observer];
    let neighbors = visible
        .iter()
        .copied()
        .filter(|&j| j != observer)
        .map(|j| {
            let e = &state.entities[j];
            Neighbor {
                index: j,
                role: e.role,
                position: frame.to_local_point(e.position),
                velocity: frame.to_local_vector(e.velocity),
            }
        })
        .collect();
    CanonicalObservation {
        self_speed: Vec2::new(me.velocity.norm(), 0.0),
        neighbors,
    }
}

pub fn decanonicalize_action(frame: &CanonicalFrame, local_action: Vec2) -> Vec2 {
    frame.rotation.mul_vec(local_action)
}
