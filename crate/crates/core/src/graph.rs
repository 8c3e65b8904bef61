//! Role-partitioned node sets built from a canonical observation.
//!
//! Every bucket is a dense subgraph (all pairs connected, self-loops included), so a bucket
//! is fully described by its node feature rows.

use serde::{Deserialize, Serialize};

use crate::canonical::CanonicalObservation;
use crate::error::{Error, Result};
use crate::sim::Role;

pub const NODE_FEATURES: usize = 4;

pub type NodeFeature = [f64; NODE_FEATURES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleGraphs {
    pub schema: Vec<Role>,
    /// `buckets[k]` holds the nodes whose role is `schema[k]`.
    pub buckets: Vec<Vec<NodeFeature>>,
}

impl RoleGraphs {
    pub fn bucket(&self, role: Role) -> Option<&[NodeFeature]> {
        self.schema
            .iter()
            .position(|&r| r == role)
            .map(|k| self.buckets[k].as_slice())
    }

    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    pub fn node_count(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

pub fn build_role_graphs(obs: &CanonicalObservation, role_schema: &[Role]) -> Result<RoleGraphs> {
    let self_slot = role_schema
        .iter()
        .position(|&r| r == Role::SelfAgent)
        .ok_or_else(|| Error::Contract("role schema has no self bucket".into()))?;
    let mut buckets = vec![Vec::new(); role_schema.len()];
    buckets[self_slot].push([obs.self_speed.norm(), 0.0, 0.0, 0.0]);
    for n in &obs.neighbors {
        let slot = role_schema.iter().position(|&r| r == n.role).ok_or_else(|| {
            Error::Contract(format!(
                "entity {} has role {:?}, absent from schema {:?}",
                n.index, n.role, role_schema
            ))
        })?;
        buckets[slot].push([n.position.x, n.position.y, n.velocity.x, n.velocity.y]);
    }
    Ok(RoleGraphs {
        schema: role_schema.to_vec(),
        buckets,
    })
}
