//! Per-step JSON-lines episode records and their re-simulation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swarm_core::eval::play_episode;
use swarm_core::policy::Controller;
use swarm_core::sim::{visible_entities, ScenarioConfig};

use crate::checkpoint::{sha256_hex, Checkpoint};
use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// State at the start of the step, in entity order.
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// World-frame action of every controllable agent.
    pub actions: Vec<[f64; 2]>,
    pub rewards: Vec<f64>,
    /// Entities each controllable agent sees.
    pub visible: Vec<Vec<usize>>,
}

/// Sidecar describing how to regenerate a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub scenario: ScenarioConfig,
    pub episode_seed: u64,
    pub steps: usize,
}

pub fn meta_path(trajectory: &Path) -> PathBuf {
    trajectory.with_extension("meta.json")
}

/// Plays one episode and renders it as JSON lines.
pub fn record_episode(
    controllers: &[Controller],
    scenario: &ScenarioConfig,
    episode_seed: u64,
) -> Result<String, CliError> {
    let mut out = String::new();
    let mut err = None;
    play_episode(controllers, scenario, episode_seed, |state, actions, tr| {
        let rec = StepRecord {
            t: state.time_step,
            positions: state.entities.iter().map(|e| e.position.to_array()).collect(),
            velocities: state.entities.iter().map(|e| e.velocity.to_array()).collect(),
            actions: actions.iter().map(|a| a.to_array()).collect(),
            rewards: tr.rewards.clone(),
            visible: state.agent_indices().map(|i| visible_entities(state, i)).collect(),
        };
        match serde_json::to_string(&rec) {
            Ok(line) => {
                out.push_str(&line);
                out.push('\n');
            }
            Err(e) => err = Some(e),
        }
    })
    .map_err(CliError::Core)?;
    if let Some(e) = err {
        return Err(CliError::Config(format!("cannot serialise trajectory: {e}")));
    }
    Ok(out)
}

/// Writes `<path>` and its sidecar.
pub fn export(
    path: &Path,
    checkpoint_path: &Path,
    checkpoint: &Checkpoint,
    scenario: &ScenarioConfig,
    episode_seed: u64,
) -> Result<(), CliError> {
    let text = record_episode(&checkpoint.controllers, scenario, episode_seed)?;
    let meta = TrajectoryMeta {
        checkpoint: std::fs::canonicalize(checkpoint_path).map_err(|e| CliError::io(checkpoint_path, e))?,
        checkpoint_sha256: sha256_hex(&checkpoint.to_bytes()),
        scenario: scenario.clone(),
        episode_seed,
        steps: text.lines().count(),
    };
    crate::write_atomic(path, text.as_bytes())?;
    let meta_json = serde_json::to_string_pretty(&meta).expect("meta serialises");
    crate::write_atomic(&meta_path(path), meta_json.as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOutcome {
    pub steps: usize,
    /// Index of the first line that differs, if any.
    pub first_difference: Option<usize>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.first_difference.is_none()
    }
}

/// Re-simulates the episode described by the sidecar and compares it byte for byte.
pub fn replay(path: &Path) -> Result<ReplayOutcome, CliError> {
    let stored = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mp = meta_path(path);
    let meta: TrajectoryMeta = serde_json::from_str(&std::fs::read_to_string(&mp).map_err(|e| CliError::io(&mp, e))?)
        .map_err(|e| CliError::Config(format!("unreadable trajectory sidecar: {e}")))?;
    let ckpt = Checkpoint::load(&meta.checkpoint)?;
    if sha256_hex(&ckpt.to_bytes()) != meta.checkpoint_sha256 {
        return Err(CliError::Checksum(format!(
            "{} changed since the trajectory was exported",
            meta.checkpoint.display()
        )));
    }
    let fresh = record_episode(&ckpt.controllers, &meta.scenario, meta.episode_seed)?;
    let first_difference = if fresh == stored {
        None
    } else {
        Some(
            fresh
                .lines()
                .zip(stored.lines())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| fresh.lines().count().min(stored.lines().count())),
        )
    };
    Ok(ReplayOutcome {
        steps: stored.lines().count(),
        first_difference,
    })
}
