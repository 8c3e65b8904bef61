//! Per-role actor–critic networks and action sampling.
//!
//! A [`RolePolicy`] is shared by every agent of one role. It encodes an [`Observation`] into a
//! fixed-width vector, maps that to the mean of a diagonal Gaussian over the local-frame
//! action and to a value estimate, and rotates the (norm-capped) local action into the world.

mod observe;
mod scripted;

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use observe::{flat_width, gcn_feature_width, observe, scenario_has_occlusion, Observation};
pub use scripted::Behaviour;

use crate::canonical::{decanonicalize_action, CanonicalFrame};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::graph::NODE_FEATURES;
use crate::nn::{
    dense_segment_edges, Activation, AttentionShape, GcnLayer, GraphEncoder, Linear, Mlp, ParamId, ParamStore,
    Segments, Tape, Tensor, Var,
};
use crate::sim::{Role, ScenarioConfig, WorldState};

pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Canonical frames, role graphs, attention encoder.
    Lego,
    /// Raw global observation, flat MLP.
    Mlp,
    /// Canonicalised observation, flat MLP.
    MlpLocal,
    /// Raw observation on a homogeneous graph, GCN encoder.
    Gcn,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Lego, Arch::Mlp, Arch::MlpLocal, Arch::Gcn];

    pub fn tag(self) -> &'static str {
        match self {
            Arch::Lego => "lego",
            Arch::Mlp => "mlp",
            Arch::MlpLocal => "mlp-local",
            Arch::Gcn => "gcn",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.tag() == s)
    }

    /// Whether the parameter shapes are independent of the number of entities.
    pub fn is_size_agnostic(self) -> bool {
        matches!(self, Arch::Lego | Arch::Gcn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub layers: usize,
    /// Width of the two hidden layers of the actor and critic heads.
    pub hidden: usize,
    pub log_std_init: f64,
    /// Radial cap on the local action.
    pub action_cap: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            d_ff: 128,
            layers: 2,
            hidden: 64,
            log_std_init: -0.5,
            action_cap: 1.0,
        }
    }
}

impl ArchConfig {
    /// Narrower preset that keeps single-core training runs to minutes.
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            d_ff: 64,
            layers: 2,
            hidden: 64,
            ..Self::default()
        }
    }

    pub fn attention_shape(&self) -> AttentionShape {
        AttentionShape {
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
        }
    }
}

/// Everything needed to rebuild a policy's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub role: Role,
    pub arch: Arch,
    pub config: ArchConfig,
    pub schema: Vec<Role>,
    /// Input width of the flat architectures; 0 for graph architectures.
    pub flat_dim: usize,
}

impl PolicySpec {
    pub fn for_scenario(role: Role, arch: Arch, config: ArchConfig, scenario: &ScenarioConfig) -> Self {
        let flat_dim = match arch {
            Arch::Mlp | Arch::MlpLocal => flat_width(scenario),
            Arch::Lego | Arch::Gcn => 0,
        };
        Self {
            role,
            arch,
            config,
            schema: scenario.role_schema(),
            flat_dim,
        }
    }

    /// Errors when the policy cannot consume observations of `scenario`.
    pub fn check_compatible(&self, scenario: &ScenarioConfig) -> Result<()> {
        if self.schema != scenario.role_schema() {
            return Err(Error::Incompatible(format!(
                "policy role schema {:?} differs from scenario schema {:?}",
                self.schema,
                scenario.role_schema()
            )));
        }
        if !scenario.controllable_roles().contains(&self.role) {
            return Err(Error::Incompatible(format!(
                "role {:?} does not act in {}",
                self.role,
                scenario.descriptor()
            )));
        }
        if !self.arch.is_size_agnostic() && self.flat_dim != flat_width(scenario) {
            return Err(Error::Incompatible(format!(
                "{} policy has fixed input width {}, scenario {} needs {}",
                self.arch.tag(),
                self.flat_dim,
                scenario.descriptor(),
                flat_width(scenario)
            )));
        }
        Ok(())
    }

    pub fn encoding_width(&self) -> usize {
        match self.arch {
            Arch::Lego => self.schema.len() * self.config.d_model,
            Arch::Gcn => self.config.d_model,
            Arch::Mlp | Arch::MlpLocal => self.flat_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Encoder {
    Graph(Vec<GraphEncoder>),
    Flat,
    Gcn { embed: Linear, layers: Vec<GcnLayer> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolePolicy {
    pub spec: PolicySpec,
    pub store: ParamStore,
    encoder: Encoder,
    actor: Mlp,
    critic: Mlp,
    log_std: ParamId,
}

/// Outcome of one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    /// `[B × 2]` local-frame action means.
    pub mean: Var,
    /// `[B × 1]` value estimates.
    pub value: Var,
    pub log_std: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    /// Norm-capped action in the agent frame.
    pub local_action: Vec2,
    /// `R_i · local_action`.
    pub global_action: Vec2,
    /// Pre-cap sample; the log-probability refers to this.
    pub raw_action: Vec2,
    pub log_prob: f64,
    pub value: f64,
}

pub fn gaussian_log_prob(mean: Vec2, log_std: [f64; 2], x: Vec2) -> f64 {
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI).ln();
    [(x.x, mean.x, log_std[0]), (x.y, mean.y, log_std[1])]
        .iter()
        .map(|&(a, m, ls)| {
            let z = (a - m) * (-ls).exp();
            -0.5 * z * z - ls - log_norm
        })
        .sum()
}

pub fn gaussian_entropy(log_std: [f64; 2]) -> f64 {
    log_std
        .iter()
        .map(|ls| 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() + ls)
        .sum()
}

impl RolePolicy {
    pub fn new(spec: PolicySpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = spec.config;
        let encoder = match spec.arch {
            Arch::Lego => {
                cfg.attention_shape().validate()?;
                let encs = spec
                    .schema
                    .iter()
                    .map(|r| {
                        GraphEncoder::new(
                            &mut store,
                            &format!("encoder.{}", r.tag()),
                            NODE_FEATURES,
                            cfg.attention_shape(),
                            cfg.layers,
                            &mut rng,
                        )
                    })
                    .collect::<Result<_>>()?;
                Encoder::Graph(encs)
            }
            Arch::Mlp | Arch::MlpLocal => {
                if spec.flat_dim == 0 {
                    return Err(Error::Config("flat policy needs a positive input width".into()));
                }
                Encoder::Flat
            }
            Arch::Gcn => {
                let width = gcn_feature_width(&spec.schema);
                let embed = Linear::new(&mut store, "encoder.embed", width, cfg.d_model, true, 1.0, &mut rng)?;
                let layers = (0..cfg.layers)
                    .map(|l| {
                        GcnLayer::new(
                            &mut store,
                            &format!("encoder.gcn{l}"),
                            cfg.d_model,
                            cfg.d_model,
                            &mut rng,
                        )
                    })
                    .collect::<Result<_>>()?;
                Encoder::Gcn { embed, layers }
            }
        };
        let width = spec.encoding_width();
        let actor = Mlp::new(
            &mut store,
            "actor",
            &[width, cfg.hidden, cfg.hidden, ACTION_DIM],
            Activation::Tanh,
            0.01,
            &mut rng,
        )?;
        let critic = Mlp::new(
            &mut store,
            "critic",
            &[width, cfg.hidden, cfg.hidden, 1],
            Activation::Tanh,
            1.0,
            &mut rng,
        )?;
        let log_std = store.add("log_std", Tensor::vector(vec![cfg.log_std_init; ACTION_DIM]))?;
        Ok(Self {
            spec,
            store,
            encoder,
            actor,
            critic,
            log_std,
        })
    }

    pub fn role(&self) -> Role {
        self.spec.role
    }

    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    pub fn log_std(&self) -> [f64; 2] {
        let d = self.store.get(self.log_std).data();
        [d[0], d[1]]
    }

    pub fn log_std_id(&self) -> ParamId {
        self.log_std
    }

    /// Encodes a batch of observations into `[B × encoding_width]`.
    pub fn encode(&self, tape: &mut Tape, obs: &[&Observation]) -> Result<Var> {
        let b = obs.len();
        match &self.encoder {
            Encoder::Graph(encoders) => {
                let mut parts = Vec::with_capacity(encoders.len());
                for (k, enc) in encoders.iter().enumerate() {
                    let mut rows: Vec<f64> = Vec::new();
                    let mut segments = Vec::with_capacity(b);
                    for o in obs {
                        let Observation::Graph(g) = o else {
                            return Err(Error::Contract("graph policy needs graph observations".into()));
                        };
                        if g.schema != self.spec.schema {
                            return Err(Error::Incompatible(format!(
                                "observation schema {:?} differs from policy schema {:?}",
                                g.schema, self.spec.schema
                            )));
                        }
                        let start = rows.len() / NODE_FEATURES;
                        for node in &g.buckets[k] {
                            rows.extend_from_slice(node);
                        }
                        segments.push((start, rows.len() / NODE_FEATURES));
                    }
                    let n = rows.len() / NODE_FEATURES;
                    let pooled = if n == 0 {
                        tape.constant(Tensor::zeros(&[b, self.spec.config.d_model]))
                    } else {
                        let nodes = tape.constant(Tensor::matrix(n, NODE_FEATURES, rows)?);
                        let seg: Segments = Rc::new(segments);
                        enc.forward(tape, &self.store, nodes, &seg)?
                    };
                    parts.push(pooled);
                }
                tape.concat_cols(&parts)
            }
            Encoder::Flat => {
                let mut data = Vec::with_capacity(b * self.spec.flat_dim);
                for o in obs {
                    let Observation::Flat(v) = o else {
                        return Err(Error::Contract("flat policy needs flat observations".into()));
                    };
                    if v.len() != self.spec.flat_dim {
                        return Err(Error::Shape(format!(
                            "observation width {} but policy expects {}",
                            v.len(),
                            self.spec.flat_dim
                        )));
                    }
                    data.extend_from_slice(v);
                }
                Ok(tape.constant(Tensor::matrix(b, self.spec.flat_dim, data)?))
            }
            Encoder::Gcn { embed, layers } => {
                let width = gcn_feature_width(&self.spec.schema);
                let mut data = Vec::new();
                let mut segments = Vec::with_capacity(b);
                for o in obs {
                    let Observation::Nodes(nodes) = o else {
                        return Err(Error::Contract("gcn policy needs node observations".into()));
                    };
                    let start = data.len() / width;
                    for f in nodes {
                        if f.len() != width {
                            return Err(Error::Shape(format!(
                                "node width {} but policy expects {width}",
                                f.len()
                            )));
                        }
                        data.extend_from_slice(f);
                    }
                    segments.push((start, data.len() / width));
                }
                let n = data.len() / width;
                let x = tape.constant(Tensor::matrix(n, width, data)?);
                let edges = Rc::new(dense_segment_edges(&segments));
                let mut h = embed.forward(tape, &self.store, x)?;
                h = tape.relu(h);
                for layer in layers {
                    h = layer.forward(tape, &self.store, h, &edges)?;
                }
                tape.segment_mean(h, &Rc::new(segments))
            }
        }
    }

    /// Actor mean from `actor_obs`; value from `critic_obs`, or from the actor encoding when
    /// `critic_obs` is `None`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        actor_obs: &[&Observation],
        critic_obs: Option<&[&Observation]>,
    ) -> Result<PolicyOutput> {
        if let Some(c) = critic_obs {
            if c.len() != actor_obs.len() {
                return Err(Error::Shape(format!(
                    "{} actor observations vs {} critic observations",
                    actor_obs.len(),
                    c.len()
                )));
            }
        }
        let enc = self.encode(tape, actor_obs)?;
        let mean = self.actor.forward(tape, &self.store, enc)?;
        let critic_enc = match critic_obs {
            Some(c) => self.encode(tape, c)?,
            None => enc,
        };
        let value = self.critic.forward(tape, &self.store, critic_enc)?;
        let log_std = tape.param(&self.store, self.log_std);
        Ok(PolicyOutput { mean, value, log_std })
    }

    /// Samples (or takes the mean of) the action distribution for a batch of agents.
    pub fn act_batch<R: Rng + ?Sized>(
        &self,
        actor_obs: &[&Observation],
        critic_obs: Option<&[&Observation]>,
        frames: &[CanonicalFrame],
        rng: &mut R,
        deterministic: bool,
    ) -> Result<Vec<ActionSample>> {
        if frames.len() != actor_obs.len() {
            return Err(Error::Shape("one frame per observation required".into()));
        }
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, actor_obs, critic_obs)?;
        let means = tape.value(out.mean);
        let values = tape.value(out.value);
        let log_std = self.log_std();
        let cap = self.spec.config.action_cap;
        let mut samples = Vec::with_capacity(frames.len());
        for (r, frame) in frames.iter().enumerate() {
            let mu = Vec2::new(means.get(r, 0), means.get(r, 1));
            let raw = if deterministic {
                mu
            } else {
                let e0: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                Vec2::new(mu.x + log_std[0].exp() * e0, mu.y + log_std[1].exp() * e1)
            };
            let local = raw.cap_norm(cap);
            samples.push(ActionSample {
                local_action: local,
                global_action: decanonicalize_action(frame, local),
                raw_action: raw,
                log_prob: gaussian_log_prob(mu, log_std, raw),
                value: values.get(r, 0),
            });
        }
        Ok(samples)
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        frame: &CanonicalFrame,
        rng: &mut R,
        deterministic: bool,
    ) -> Result<ActionSample> {
        Ok(self.act_batch(&[obs], None, &[*frame], rng, deterministic)?[0])
    }

    /// Value estimates for a batch, read from the critic observations when given.
    pub fn values(&self, actor_obs: &[&Observation], critic_obs: Option<&[&Observation]>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, critic_obs.unwrap_or(actor_obs))?;
        let v = self.critic.forward(&mut tape, &self.store, enc)?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Deterministic world-frame actions for a batch.
    pub fn mean_actions(&self, obs: &[&Observation], frames: &[CanonicalFrame]) -> Result<Vec<Vec2>> {
        let mut tape = Tape::new();
        let enc = self.encode(&mut tape, obs)?;
        let mean = self.actor.forward(&mut tape, &self.store, enc)?;
        let m = tape.value(mean);
        let cap = self.spec.config.action_cap;
        Ok(frames
            .iter()
            .enumerate()
            .map(|(r, f)| decanonicalize_action(f, Vec2::new(m.get(r, 0), m.get(r, 1)).cap_norm(cap)))
            .collect())
    }

    /// Log-probabilities `[B]`, values `[B × 1]` and the distribution entropy (scalar) for
    /// stored pre-cap local actions.
    pub fn evaluate_actions(
        &self,
        tape: &mut Tape,
        actor_obs: &[&Observation],
        critic_obs: Option<&[&Observation]>,
        raw_actions: &[Vec2],
    ) -> Result<(Var, Var, Var)> {
        if raw_actions.len() != actor_obs.len() {
            return Err(Error::Shape(format!(
                "{} observations vs {} actions",
                actor_obs.len(),
                raw_actions.len()
            )));
        }
        let out = self.forward(tape, actor_obs, critic_obs)?;
        let acts = Tensor::matrix(
            raw_actions.len(),
            ACTION_DIM,
            raw_actions.iter().flat_map(|a| a.to_array()).collect(),
        )?;
        let log_prob = tape.gaussian_log_prob(out.mean, out.log_std, Rc::new(acts))?;
        let s = tape.sum(out.log_std);
        let entropy = tape.add_scalar(s, ACTION_DIM as f64 * (0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln()));
        Ok((log_prob, out.value, entropy))
    }

    pub fn encoder_param_names(&self) -> Vec<String> {
        self.store
            .iter()
            .filter(|(_, n, _)| n.starts_with("encoder."))
            .map(|(_, n, _)| n.to_string())
            .collect()
    }
}

/// What drives one controllable role: a network or a hand-written behaviour.
#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Controller {
    Policy(RolePolicy),
    Scripted { role: Role, behaviour: Behaviour },
}

impl Controller {
    pub fn role(&self) -> Role {
        match self {
            Controller::Policy(p) => p.role(),
            Controller::Scripted { role, .. } => *role,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Controller::Policy(p) => p.arch().tag().to_string(),
            Controller::Scripted { behaviour, .. } => behaviour.tag().to_string(),
        }
    }

    pub fn policy(&self) -> Option<&RolePolicy> {
        match self {
            Controller::Policy(p) => Some(p),
            Controller::Scripted { .. } => None,
        }
    }

    pub fn check_compatible(&self, scenario: &ScenarioConfig) -> Result<()> {
        match self {
            Controller::Policy(p) => p.spec.check_compatible(scenario),
            Controller::Scripted { role, .. } => {
                if scenario.controllable_roles().contains(role) {
                    Ok(())
                } else {
                    Err(Error::Incompatible(format!(
                        "role {role:?} does not act in {}",
                        scenario.descriptor()
                    )))
                }
            }
        }
    }
}

/// Checks that `controllers` covers every controllable role of `scenario` exactly once and
/// returns them reordered to the scenario's role order.
pub fn arrange_controllers<'a>(
    controllers: &'a [Controller],
    scenario: &ScenarioConfig,
) -> Result<Vec<&'a Controller>> {
    let roles = scenario.controllable_roles();
    if controllers.len() != roles.len() {
        return Err(Error::Config(format!(
            "{} controllers for {} controllable roles",
            controllers.len(),
            roles.len()
        )));
    }
    roles
        .iter()
        .map(|r| {
            let c = controllers
                .iter()
                .find(|c| c.role() == *r)
                .ok_or_else(|| Error::Config(format!("no controller for role {r:?}")))?;
            c.check_compatible(scenario)?;
            Ok(c)
        })
        .collect()
}

/// Deterministic world-frame actions of every controllable agent, in entity order.
pub fn joint_actions<R: Rng + ?Sized>(
    controllers: &[&Controller],
    states: &[WorldState],
    rng: &mut R,
) -> Result<Vec<Vec<Vec2>>> {
    let mut out: Vec<Vec<Vec2>> = states.iter().map(|s| vec![Vec2::ZERO; s.num_agents()]).collect();
    for c in controllers {
        let role = c.role();
        match c {
            Controller::Policy(p) => {
                let mut obs = Vec::new();
                let mut frames = Vec::new();
                let mut slots = Vec::new();
                for (e, s) in states.iter().enumerate() {
                    for i in s.indices_of(role) {
                        let (o, f) = observe(p.arch(), &p.spec.schema, s, i, false)?;
                        obs.push(o);
                        frames.push(f);
                        slots.push((e, i));
                    }
                }
                let refs: Vec<&Observation> = obs.iter().collect();
                for ((e, i), a) in slots.into_iter().zip(p.mean_actions(&refs, &frames)?) {
                    out[e][i] = a;
                }
            }
            Controller::Scripted { behaviour, .. } => {
                for (e, s) in states.iter().enumerate() {
                    for i in s.indices_of(role) {
                        out[e][i] = behaviour.action(s, i, rng);
                    }
                }
            }
        }
    }
    Ok(out)
}
