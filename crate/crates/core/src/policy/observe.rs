use serde::{Deserialize, Serialize};

use super::Arch;
use crate::canonical::{canonicalize, frame_for, CanonicalFrame};
use crate::error::Result;
use crate::geometry::Vec2;
use crate::graph::{build_role_graphs, RoleGraphs};
use crate::sim::{visible_mask, Role, ScenarioConfig, WorldState};

/// Network input for one agent at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    /// Role-partitioned canonical node sets.
    Graph(RoleGraphs),
    /// Fixed-width vector (MLP baselines).
    Flat(Vec<f64>),
    /// Homogeneous node list with raw features (GCN baseline).
    Nodes(Vec<Vec<f64>>),
}

/// Width of the flat observation: own velocity and position, position and velocity of every
/// other controllable agent, position of every landmark or obstacle.
pub fn flat_width(config: &ScenarioConfig) -> usize {
    let agents = config.num_controllable();
    let statics = config.entity_roles().len() - agents;
    4 + 4 * (agents - 1) + 2 * statics
}

/// Node feature width of the GCN baseline: position, velocity, self flag, role one-hot.
pub fn gcn_feature_width(schema: &[Role]) -> usize {
    4 + 1 + scenario_roles(schema).len()
}

fn scenario_roles(schema: &[Role]) -> Vec<Role> {
    schema.iter().copied().filter(|&r| r != Role::SelfAgent).collect()
}

/// Builds the observation of `agent` and the frame its action is expressed in.
///
/// `full_visibility` ignores occlusion (used for the centralised critic input).
pub fn observe(
    arch: Arch,
    schema: &[Role],
    state: &WorldState,
    agent: usize,
    full_visibility: bool,
) -> Result<(Observation, CanonicalFrame)> {
    let mask = if full_visibility {
        vec![true; state.entities.len()]
    } else {
        visible_mask(state, agent)
    };
    let me = &state.entities[agent];
    match arch {
        Arch::Lego => {
            let frame = frame_for(state, agent);
            let visible: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
            let obs = canonicalize(state, agent, &visible, &frame);
            Ok((Observation::Graph(build_role_graphs(&obs, schema)?), frame))
        }
        Arch::Mlp | Arch::MlpLocal => {
            let frame = if arch == Arch::MlpLocal {
                frame_for(state, agent)
            } else {
                CanonicalFrame::identity(me.position)
            };
            let mut v = Vec::with_capacity(4 + 4 * state.entities.len());
            if arch == Arch::MlpLocal {
                v.extend_from_slice(&[me.velocity.norm(), 0.0, 0.0, 0.0]);
            } else {
                v.extend_from_slice(&[me.velocity.x, me.velocity.y, me.position.x, me.position.y]);
            }
            // Raw observations give other entities relative to the observer, as in MPE.
            let to_local = |p: Vec2| {
                if arch == Arch::MlpLocal {
                    frame.to_local_point(p)
                } else {
                    p - me.position
                }
            };
            let to_local_v = |u| {
                if arch == Arch::MlpLocal {
                    frame.to_local_vector(u)
                } else {
                    u
                }
            };
            for (j, e) in state.entities.iter().enumerate() {
                if j == agent {
                    continue;
                }
                let seen = mask[j];
                let p = to_local(e.position);
                if e.role.is_controllable() {
                    let u = to_local_v(e.velocity);
                    if seen {
                        v.extend_from_slice(&[p.x, p.y, u.x, u.y]);
                    } else {
                        v.extend_from_slice(&[0.0; 4]);
                    }
                } else if seen {
                    v.extend_from_slice(&[p.x, p.y]);
                } else {
                    v.extend_from_slice(&[0.0; 2]);
                }
            }
            Ok((Observation::Flat(v), frame))
        }
        Arch::Gcn => {
            let roles = scenario_roles(schema);
            let width = gcn_feature_width(schema);
            let nodes = state
                .entities
                .iter()
                .enumerate()
                .filter(|&(j, _)| mask[j])
                .map(|(j, e)| {
                    let mut f = vec![0.0; width];
                    let rel = e.position - me.position;
                    f[..4].copy_from_slice(&[rel.x, rel.y, e.velocity.x, e.velocity.y]);
                    f[4] = if j == agent { 1.0 } else { 0.0 };
                    if let Some(k) = roles.iter().position(|&r| r == e.role) {
                        f[5 + k] = 1.0;
                    }
                    f
                })
                .collect();
            Ok((Observation::Nodes(nodes), CanonicalFrame::identity(me.position)))
        }
    }
}

/// Whether an observation needs a separate full-visibility copy for the critic.
pub fn scenario_has_occlusion(config: &ScenarioConfig) -> bool {
    config.obstacles > 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::reset;

    #[test]
    fn mlp_width_matches_count() {
        let cfg = ScenarioConfig::spread(3);
        let s = reset(&cfg, 0).unwrap();
        let (obs, _) = observe(Arch::Mlp, &cfg.role_schema(), &s, 0, false).unwrap();
        let Observation::Flat(v) = obs else { panic!() };
        assert_eq!(v.len(), 4 + 4 * 2 + 2 * 3);
        assert_eq!(v.len(), flat_width(&cfg));
        let (obs, _) = observe(Arch::MlpLocal, &cfg.role_schema(), &s, 1, false).unwrap();
        let Observation::Flat(v) = obs else { panic!() };
        assert_eq!(v.len(), flat_width(&cfg));
    }

    #[test]
    fn raw_layout_is_self_absolute_others_relative() {
        let cfg = ScenarioConfig::spread(3);
        let s = reset(&cfg, 4).unwrap();
        let (obs, _) = observe(Arch::Mlp, &cfg.role_schema(), &s, 0, false).unwrap();
        let Observation::Flat(v) = obs else { panic!() };
        let me = &s.entities[0];
        assert_eq!(v[..4], [me.velocity.x, me.velocity.y, me.position.x, me.position.y]);
        let other = s.entities[1].position - me.position;
        assert_eq!(v[4..6], [other.x, other.y]);
        let landmark = s.entities[3].position - me.position;
        assert_eq!(v[12..14], [landmark.x, landmark.y]);
    }

    #[test]
    fn gcn_nodes_flag_self() {
        let cfg = ScenarioConfig::tag();
        let s = reset(&cfg, 0).unwrap();
        let (obs, frame) = observe(Arch::Gcn, &cfg.role_schema(), &s, 3, true).unwrap();
        let Observation::Nodes(n) = obs else { panic!() };
        assert_eq!(n.len(), 7);
        assert_eq!(n.iter().filter(|f| f[4] == 1.0).count(), 1);
        assert_eq!(n[3][4], 1.0);
        assert_eq!(n[3][5 + 1], 1.0, "evader one-hot");
        assert_eq!(frame.rotation, crate::geometry::Mat2::IDENTITY);
    }
}
