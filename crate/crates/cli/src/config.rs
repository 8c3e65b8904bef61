//! Flat `key = value` run configuration with `scenario.`, `train.` and `arch.` sections.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use swarm_core::marl::TrainConfig;
use swarm_core::policy::{Arch, ArchConfig, Behaviour};
use swarm_core::sim::{InitDistribution, Role, ScenarioConfig, ScenarioKind};

use crate::CliError;

/// How one controllable role is driven.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RoleChoice {
    Learn(Arch),
    Scripted(Behaviour),
}

impl RoleChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s.strip_prefix("scripted:") {
            Some(b) => Behaviour::parse(b).map(RoleChoice::Scripted),
            None => Arch::parse(s).map(RoleChoice::Learn),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            RoleChoice::Learn(a) => a.tag().to_string(),
            RoleChoice::Scripted(b) => format!("scripted:{}", b.tag()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    /// Default architecture for every role without an explicit entry.
    pub arch_type: Arch,
    pub roles: BTreeMap<String, RoleChoice>,
    /// Updates between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::spread(3),
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            arch_type: Arch::Lego,
            roles: BTreeMap::new(),
            checkpoint_every: 0,
        }
    }
}

const ROLE_KEYS: [&str; 3] = ["agent", "pursuer", "evader"];

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

/// Reads `key = value` lines. `#` starts a comment; duplicate keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if seen.insert(k.clone(), n + 1).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

impl RunConfig {
    /// Builds a config from pairs applied over the defaults. The scenario kind and team size
    /// are applied first because they choose the scenario defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, CliError> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let mut cfg = RunConfig::default();
        let kind = match get("scenario.kind") {
            Some(v) => {
                ScenarioKind::parse(v).ok_or_else(|| CliError::Config(format!("unknown scenario kind {v:?}")))?
            }
            None => ScenarioKind::Spread,
        };
        cfg.scenario = match kind {
            ScenarioKind::Spread => ScenarioConfig::spread(3),
            ScenarioKind::TagOcclusion => ScenarioConfig::tag(),
        };
        if let Some(v) = get("scenario.agents") {
            let n: usize = parse_value("scenario.agents", v)?;
            cfg.scenario.agents = n;
            if kind == ScenarioKind::Spread {
                cfg.scenario.landmarks = n;
            }
        }
        let mut unknown = Vec::new();
        for (k, v) in pairs {
            if k == "scenario.kind" || k == "scenario.agents" {
                continue;
            }
            if !cfg.apply(k, v)? {
                unknown.push(k.clone());
            }
        }
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Applies one key. Returns `Ok(false)` for keys it does not know.
    fn apply(&mut self, k: &str, v: &str) -> Result<bool, CliError> {
        let s = &mut self.scenario;
        let t = &mut self.train;
        let a = &mut self.arch;
        match k {
            "scenario.landmarks" => s.landmarks = parse_value(k, v)?,
            "scenario.pursuers" => s.pursuers = parse_value(k, v)?,
            "scenario.evaders" => s.evaders = parse_value(k, v)?,
            "scenario.obstacles" => s.obstacles = parse_value(k, v)?,
            "scenario.horizon" => s.horizon = parse_value(k, v)?,
            "scenario.init" => {
                s.init = InitDistribution::parse(v)
                    .ok_or_else(|| CliError::Config(format!("unknown init distribution {v:?}")))?
            }
            "scenario.bounds" => s.bounds = parse_value(k, v)?,
            "scenario.seed" => s.seed = parse_value(k, v)?,
            "scenario.dt" => s.physics.dt = parse_value(k, v)?,
            "scenario.damping" => s.physics.damping = parse_value(k, v)?,
            "scenario.mass" => s.physics.mass = parse_value(k, v)?,
            "scenario.contact_stiffness" => s.physics.contact_stiffness = parse_value(k, v)?,
            "scenario.contact_margin" => s.physics.contact_margin = parse_value(k, v)?,
            "scenario.contact_band" => s.physics.contact_band = parse_value(k, v)?,
            "train.total_steps" => t.total_steps = parse_value(k, v)?,
            "train.num_envs" => t.num_envs = parse_value(k, v)?,
            "train.rollout_length" => t.rollout_length = parse_value(k, v)?,
            "train.ppo_epochs" => t.ppo_epochs = parse_value(k, v)?,
            "train.minibatches" => t.minibatches = parse_value(k, v)?,
            "train.clip_eps" => t.clip_eps = parse_value(k, v)?,
            "train.lr" => t.lr = parse_value(k, v)?,
            "train.lr_decay" => t.lr_decay = parse_bool(k, v)?,
            "train.entropy_coef" => t.entropy_coef = parse_value(k, v)?,
            "train.value_coef" => t.value_coef = parse_value(k, v)?,
            "train.max_grad_norm" => t.max_grad_norm = parse_value(k, v)?,
            "train.gamma" => t.gamma = parse_value(k, v)?,
            "train.gae_lambda" => t.gae_lambda = parse_value(k, v)?,
            "train.value_norm" => t.value_norm = parse_bool(k, v)?,
            "train.clip_value_loss" => t.clip_value_loss = parse_bool(k, v)?,
            "train.eval_interval" => t.eval_interval = parse_value(k, v)?,
            "train.eval_episodes" => t.eval_episodes = parse_value(k, v)?,
            "train.seed" => t.seed = parse_value(k, v)?,
            "train.checkpoint_every" => self.checkpoint_every = parse_value(k, v)?,
            "arch.type" => {
                self.arch_type =
                    Arch::parse(v).ok_or_else(|| CliError::Config(format!("unknown architecture {v:?}")))?
            }
            "arch.d_model" => a.d_model = parse_value(k, v)?,
            "arch.heads" => a.heads = parse_value(k, v)?,
            "arch.d_ff" => a.d_ff = parse_value(k, v)?,
            "arch.layers" => a.layers = parse_value(k, v)?,
            "arch.hidden" => a.hidden = parse_value(k, v)?,
            "arch.log_std_init" => a.log_std_init = parse_value(k, v)?,
            "arch.action_cap" => a.action_cap = parse_value(k, v)?,
            _ => match k.strip_prefix("arch.") {
                Some(role) if ROLE_KEYS.contains(&role) => {
                    let choice = RoleChoice::parse(v)
                        .ok_or_else(|| CliError::Config(format!("unknown controller {v:?} for {k}")))?;
                    self.roles.insert(role.to_string(), choice);
                }
                _ => return Ok(false),
            },
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let controllable: Vec<&str> = self.scenario.controllable_roles().iter().map(|r| r.tag()).collect();
        for role in self.roles.keys() {
            if !controllable.contains(&role.as_str()) {
                return Err(CliError::Config(format!(
                    "arch.{role} given but {} has no such role",
                    self.scenario.descriptor()
                )));
            }
        }
        if self.arch.action_cap <= 0.0 {
            return Err(CliError::Config("arch.action_cap must be positive".into()));
        }
        Ok(())
    }

    /// Controller choice of every controllable role, in scenario order.
    pub fn role_choices(&self) -> Vec<(Role, RoleChoice)> {
        self.scenario
            .controllable_roles()
            .into_iter()
            .map(|r| {
                let c = self
                    .roles
                    .get(r.tag())
                    .copied()
                    .unwrap_or(RoleChoice::Learn(self.arch_type));
                (r, c)
            })
            .collect()
    }

    /// Every key with its resolved value; parsing the output yields an equal config.
    pub fn to_text(&self) -> String {
        let s = &self.scenario;
        let t = &self.train;
        let a = &self.arch;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scenario.kind", s.kind.tag().into());
        kv("scenario.agents", s.agents.to_string());
        kv("scenario.landmarks", s.landmarks.to_string());
        kv("scenario.pursuers", s.pursuers.to_string());
        kv("scenario.evaders", s.evaders.to_string());
        kv("scenario.obstacles", s.obstacles.to_string());
        kv("scenario.horizon", s.horizon.to_string());
        kv("scenario.init", s.init.tag().into());
        kv("scenario.bounds", s.bounds.to_string());
        kv("scenario.seed", s.seed.to_string());
        kv("scenario.dt", s.physics.dt.to_string());
        kv("scenario.damping", s.physics.damping.to_string());
        kv("scenario.mass", s.physics.mass.to_string());
        kv("scenario.contact_stiffness", s.physics.contact_stiffness.to_string());
        kv("scenario.contact_margin", s.physics.contact_margin.to_string());
        kv("scenario.contact_band", s.physics.contact_band.to_string());
        kv("train.total_steps", t.total_steps.to_string());
        kv("train.num_envs", t.num_envs.to_string());
        kv("train.rollout_length", t.rollout_length.to_string());
        kv("train.ppo_epochs", t.ppo_epochs.to_string());
        kv("train.minibatches", t.minibatches.to_string());
        kv("train.clip_eps", t.clip_eps.to_string());
        kv("train.lr", t.lr.to_string());
        kv("train.lr_decay", t.lr_decay.to_string());
        kv("train.entropy_coef", t.entropy_coef.to_string());
        kv("train.value_coef", t.value_coef.to_string());
        kv("train.max_grad_norm", t.max_grad_norm.to_string());
        kv("train.gamma", t.gamma.to_string());
        kv("train.gae_lambda", t.gae_lambda.to_string());
        kv("train.value_norm", t.value_norm.to_string());
        kv("train.clip_value_loss", t.clip_value_loss.to_string());
        kv("train.eval_interval", t.eval_interval.to_string());
        kv("train.eval_episodes", t.eval_episodes.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.checkpoint_every", self.checkpoint_every.to_string());
        kv("arch.type", self.arch_type.tag().into());
        for (role, c) in &self.roles {
            kv(&format!("arch.{role}"), c.tag());
        }
        kv("arch.d_model", a.d_model.to_string());
        kv("arch.heads", a.heads.to_string());
        kv("arch.d_ff", a.d_ff.to_string());
        kv("arch.layers", a.layers.to_string());
        kv("arch.hidden", a.hidden.to_string());
        kv("arch.log_std_init", a.log_std_init.to_string());
        kv("arch.action_cap", a.action_cap.to_string());
        out
    }
}
