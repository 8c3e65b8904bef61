use serde::{Deserialize, Serialize};

use super::{EntityState, Role};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Spread,
    TagOcclusion,
}

impl ScenarioKind {
    pub fn tag(self) -> &'static str {
        match self {
            ScenarioKind::Spread => "spread",
            ScenarioKind::TagOcclusion => "tag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spread" => Some(ScenarioKind::Spread),
            "tag" | "tag_occlusion" | "tag-occlusion" => Some(ScenarioKind::TagOcclusion),
            _ => None,
        }
    }
}

/// Where controllable agents are placed at reset. Landmarks and obstacles are always uniform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDistribution {
    Uniform,
    LeftSide,
    RightSide,
}

impl InitDistribution {
    pub fn tag(self) -> &'static str {
        match self {
            InitDistribution::Uniform => "uniform",
            InitDistribution::LeftSide => "left",
            InitDistribution::RightSide => "right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "uniform" => Some(InitDistribution::Uniform),
            "left" | "left_side" => Some(InitDistribution::LeftSide),
            "right" | "right_side" => Some(InitDistribution::RightSide),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub dt: f64,
    pub damping: f64,
    pub mass: f64,
    pub contact_stiffness: f64,
    pub contact_margin: f64,
    /// Extra distance beyond the sum of radii at which the soft contact switches off entirely.
    pub contact_band: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            dt: 0.1,
            damping: 0.25,
            mass: 1.0,
            contact_stiffness: 100.0,
            contact_margin: 1e-3,
            contact_band: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Cooperative agents (Spread).
    pub agents: usize,
    pub landmarks: usize,
    pub pursuers: usize,
    pub evaders: usize,
    pub obstacles: usize,
    pub horizon: usize,
    pub physics: Physics,
    pub init: InitDistribution,
    /// Half-width of the square arena.
    pub bounds: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn spread(n: usize) -> Self {
        Self {
            kind: ScenarioKind::Spread,
            agents: n,
            landmarks: n,
            pursuers: 0,
            evaders: 0,
            obstacles: 0,
            horizon: 25,
            physics: Physics::default(),
            init: InitDistribution::Uniform,
            bounds: 1.0,
            seed: 0,
        }
    }

    pub fn tag() -> Self {
        Self::tag_with(3, 2, 2)
    }

    pub fn tag_with(pursuers: usize, evaders: usize, obstacles: usize) -> Self {
        Self {
            kind: ScenarioKind::TagOcclusion,
            agents: 0,
            landmarks: 0,
            pursuers,
            evaders,
            obstacles,
            horizon: 100,
            physics: Physics::default(),
            init: InitDistribution::Uniform,
            bounds: 1.0,
            seed: 0,
        }
    }

    pub fn with_init(mut self, init: InitDistribution) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScenarioKind::Spread => {
                if self.agents == 0 {
                    return Err(Error::Config("spread needs at least one agent".into()));
                }
                if self.agents != self.landmarks {
                    return Err(Error::Config(format!(
                        "spread needs as many landmarks as agents ({} agents, {} landmarks)",
                        self.agents, self.landmarks
                    )));
                }
                if self.pursuers + self.evaders + self.obstacles != 0 {
                    return Err(Error::Config("spread takes no pursuers, evaders or obstacles".into()));
                }
            }
            ScenarioKind::TagOcclusion => {
                if self.pursuers == 0 || self.evaders == 0 {
                    return Err(Error::Config(format!(
                        "tag needs at least one pursuer and one evader ({} pursuers, {} evaders)",
                        self.pursuers, self.evaders
                    )));
                }
                if self.agents + self.landmarks != 0 {
                    return Err(Error::Config("tag takes no agents or landmarks".into()));
                }
            }
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let p = &self.physics;
        if !(p.dt > 0.0 && p.mass > 0.0 && (0.0..1.0).contains(&p.damping)) {
            return Err(Error::Config("physics needs dt > 0, mass > 0, 0 <= damping < 1".into()));
        }
        if !(p.contact_margin > 0.0 && p.contact_band >= 0.0 && p.contact_stiffness >= 0.0) {
            return Err(Error::Config("contact constants must be non-negative".into()));
        }
        if self.bounds.is_nan() || self.bounds <= 0.0 {
            return Err(Error::Config("bounds must be positive".into()));
        }
        Ok(())
    }

    /// Roles of all entities in storage order: controllable agents first.
    pub fn entity_roles(&self) -> Vec<Role> {
        let mut roles = Vec::new();
        match self.kind {
            ScenarioKind::Spread => {
                roles.extend(std::iter::repeat_n(Role::Agent, self.agents));
                roles.extend(std::iter::repeat_n(Role::Landmark, self.landmarks));
            }
            ScenarioKind::TagOcclusion => {
                roles.extend(std::iter::repeat_n(Role::Pursuer, self.pursuers));
                roles.extend(std::iter::repeat_n(Role::Evader, self.evaders));
                roles.extend(std::iter::repeat_n(Role::Obstacle, self.obstacles));
            }
        }
        roles
    }

    pub fn num_controllable(&self) -> usize {
        match self.kind {
            ScenarioKind::Spread => self.agents,
            ScenarioKind::TagOcclusion => self.pursuers + self.evaders,
        }
    }

    /// Roles that act, in storage order.
    pub fn controllable_roles(&self) -> Vec<Role> {
        match self.kind {
            ScenarioKind::Spread => vec![Role::Agent],
            ScenarioKind::TagOcclusion => vec![Role::Pursuer, Role::Evader],
        }
    }

    /// Bucket order used by role graphs: the self node first, then every scenario role.
    pub fn role_schema(&self) -> Vec<Role> {
        match self.kind {
            ScenarioKind::Spread => vec![Role::SelfAgent, Role::Agent, Role::Landmark],
            ScenarioKind::TagOcclusion => {
                vec![Role::SelfAgent, Role::Pursuer, Role::Evader, Role::Obstacle]
            }
        }
    }

    /// Entity at rest with the per-role size, speed and collision constants.
    pub fn template(&self, role: Role) -> EntityState {
        let (radius, movable, collide, max_speed, accel) = match (self.kind, role) {
            (ScenarioKind::Spread, Role::Agent) => (0.15, true, true, None, 5.0),
            (_, Role::Landmark) => (0.05, false, false, None, 0.0),
            (_, Role::Pursuer) => (0.075, true, true, Some(1.0), 3.0),
            (_, Role::Evader) => (0.05, true, true, Some(1.3), 4.0),
            (_, Role::Obstacle) => (0.2, false, true, None, 0.0),
            (_, Role::Agent) => (0.15, true, true, None, 5.0),
            (_, Role::SelfAgent) => (0.0, false, false, None, 0.0),
        };
        EntityState {
            position: Vec2::ZERO,
            velocity: Vec2::ZERO,
            radius,
            role,
            movable,
            collide,
            max_speed,
            accel,
        }
    }

    /// Short human-readable descriptor such as `spread-n3-uniform`.
    pub fn descriptor(&self) -> String {
        match self.kind {
            ScenarioKind::Spread => format!("spread-n{}-{}", self.agents, self.init.tag()),
            ScenarioKind::TagOcclusion => format!(
                "tag-p{}-e{}-o{}-{}",
                self.pursuers,
                self.evaders,
                self.obstacles,
                self.init.tag()
            ),
        }
    }
}
