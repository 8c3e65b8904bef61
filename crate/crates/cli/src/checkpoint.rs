//! Binary policy checkpoints.
//!
//! Layout: the magic line, a little-endian `u32` manifest length, the JSON manifest, every
//! tensor as 32-bit little-endian floats in manifest order, and a SHA-256 digest of all
//! preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use swarm_core::policy::{Behaviour, Controller, PolicySpec, RolePolicy};
use swarm_core::sim::{Role, ScenarioConfig};
use swarm_core::Tensor;

use crate::CliError;

const MAGIC: &[u8] = b"SWARMCKPT\n";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerEntry {
    Policy {
        spec: PolicySpec,
        tensors: Vec<TensorEntry>,
    },
    Scripted {
        role: Role,
        behaviour: Behaviour,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub scenario_descriptor: String,
    pub scenario: ScenarioConfig,
    pub step: usize,
    pub controllers: Vec<ControllerEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scenario: ScenarioConfig,
    pub step: usize,
    pub controllers: Vec<Controller>,
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            scenario_descriptor: self.scenario.descriptor(),
            scenario: self.scenario.clone(),
            step: self.step,
            controllers: self
                .controllers
                .iter()
                .map(|c| match c {
                    Controller::Policy(p) => ControllerEntry::Policy {
                        spec: p.spec.clone(),
                        tensors: p
                            .store
                            .iter()
                            .map(|(_, name, t)| TensorEntry {
                                name: name.to_string(),
                                shape: t.shape().to_vec(),
                            })
                            .collect(),
                    },
                    Controller::Scripted { role, behaviour } => ControllerEntry::Scripted {
                        role: *role,
                        behaviour: *behaviour,
                    },
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest()).expect("manifest serialises");
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + manifest.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for c in &self.controllers {
            if let Controller::Policy(p) = c {
                for (_, _, t) in p.store.iter() {
                    for &x in t.data() {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let corrupt = |m: &str| CliError::Checksum(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut pos = MAGIC.len();
        let len = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        let manifest: Manifest =
            serde_json::from_slice(body.get(pos..pos + len).ok_or_else(|| corrupt("truncated manifest"))?)
                .map_err(|e| corrupt(&format!("unreadable manifest: {e}")))?;
        pos += len;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint schema version {} is not supported",
                manifest.schema_version
            )));
        }
        let mut controllers = Vec::new();
        for entry in manifest.controllers {
            match entry {
                ControllerEntry::Scripted { role, behaviour } => {
                    controllers.push(Controller::Scripted { role, behaviour })
                }
                ControllerEntry::Policy { spec, tensors } => {
                    let mut policy = RolePolicy::new(spec, 0).map_err(CliError::Core)?;
                    let layout: Vec<TensorEntry> = policy
                        .store
                        .iter()
                        .map(|(_, n, t)| TensorEntry {
                            name: n.to_string(),
                            shape: t.shape().to_vec(),
                        })
                        .collect();
                    if layout != tensors {
                        return Err(CliError::Config(
                            "checkpoint tensor table does not match its declared architecture".into(),
                        ));
                    }
                    for entry in &tensors {
                        let n: usize = entry.shape.iter().product();
                        let raw = body
                            .get(pos..pos + 4 * n)
                            .ok_or_else(|| corrupt("truncated tensor data"))?;
                        pos += 4 * n;
                        let data = raw
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                            .collect();
                        let id = policy.store.id(&entry.name).expect("layout checked");
                        *policy.store.get_mut(id) = Tensor::new(entry.shape.clone(), data).map_err(CliError::Core)?;
                    }
                    controllers.push(Controller::Policy(policy));
                }
            }
        }
        if pos != body.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Self {
            scenario: manifest.scenario,
            step: manifest.step,
            controllers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        crate::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| CliError::io(path, e))?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use swarm_core::marl::learners;
    use swarm_core::policy::{Arch, ArchConfig};

    fn sample() -> Checkpoint {
        let scenario = ScenarioConfig::tag();
        let mut controllers: Vec<Controller> = learners(&scenario, Arch::Lego, ArchConfig::desk(), 3)
            .unwrap()
            .into_iter()
            .map(|p| p.controller)
            .collect();
        controllers[1] = Controller::Scripted {
            role: Role::Evader,
            behaviour: Behaviour::Flee,
        };
        Checkpoint {
            scenario,
            step: 1234,
            controllers,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let bytes = sample().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.step, 1234);
    }

    #[test]
    fn tensor_bytes_match_shapes() {
        let c = sample();
        let bytes = c.to_bytes();
        let m = c.manifest();
        let floats: usize = m
            .controllers
            .iter()
            .filter_map(|e| match e {
                ControllerEntry::Policy { tensors, .. } => Some(tensors),
                _ => None,
            })
            .flatten()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        let manifest_len = serde_json::to_vec(&m).unwrap().len();
        assert_eq!(bytes.len(), MAGIC.len() + 4 + manifest_len + 4 * floats + 32);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CliError::Checksum(_))));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CliError::Checksum(_))));
    }
}
