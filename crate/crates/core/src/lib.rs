//! Equivariant multi-agent policies for 2D particle swarms.
//!
//! The pipeline per agent is: build an agent-centric frame ([`canonical`]), express the
//! visible neighbourhood in it, split it into per-role dense graphs ([`graph`]), encode each
//! graph with residual self-attention and pool ([`nn`], [`policy`]), then rotate the local
//! action back into the world. [`marl`] trains these policies with multi-agent PPO on the
//! scenarios in [`sim`]; [`eval`] holds the evaluation protocols.

pub mod canonical;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod marl;
pub mod nn;
pub mod policy;
pub mod sim;

pub use canonical::{CanonicalFrame, CanonicalObservation};
pub use error::{Error, Result};
pub use geometry::{Isometry2, Mat2, Vec2};
pub use graph::RoleGraphs;
pub use nn::{ParamStore, Tensor};
pub use policy::{Arch, ArchConfig, RolePolicy};
pub use sim::{Role, ScenarioConfig, ScenarioKind, WorldState};
