//! Multi-agent PPO with per-role parameter sharing.
//!
//! Rollouts run all environments in lockstep so that every agent of a role is served by one
//! batched forward pass. Each learning role owns its optimiser, value normaliser and batch;
//! no gradient crosses role boundaries.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::mean_episode_rewards;
use crate::geometry::Vec2;
use crate::nn::{clip_grad_norm, Adam, Tape, Tensor};
use crate::policy::{
    arrange_controllers, observe, scenario_has_occlusion, Arch, ArchConfig, Controller, Observation, PolicySpec,
    RolePolicy,
};
use crate::sim::{derive_seed, reset, step, Role, ScenarioConfig, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Environment steps (summed over parallel environments).
    pub total_steps: usize,
    pub num_envs: usize,
    /// Steps per environment between updates.
    pub rollout_length: usize,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub clip_eps: f64,
    pub lr: f64,
    pub lr_decay: bool,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_norm: bool,
    pub clip_value_loss: bool,
    /// Updates between deterministic evaluations; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            num_envs: 25,
            rollout_length: 25,
            ppo_epochs: 10,
            minibatches: 4,
            clip_eps: 0.2,
            lr: 5e-4,
            lr_decay: true,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_norm: true,
            clip_value_loss: false,
            eval_interval: 0,
            eval_episodes: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.clip_eps <= 0.0 {
            return bad("clip_eps must be positive");
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad("lr must be positive");
        }
        if self.num_envs == 0 || self.rollout_length == 0 || self.ppo_epochs == 0 || self.minibatches == 0 {
            return bad("num_envs, rollout_length, ppo_epochs and minibatches must be positive");
        }
        if self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> usize {
        self.num_envs * self.rollout_length
    }

    pub fn num_updates(&self) -> usize {
        self.total_steps.div_ceil(self.steps_per_update())
    }
}

/// A controller plus whether its parameters are trained.
#[derive(Clone, Debug, PartialEq)]
pub struct Participant {
    pub controller: Controller,
    pub learn: bool,
}

impl Participant {
    pub fn learner(policy: RolePolicy) -> Self {
        Self {
            controller: Controller::Policy(policy),
            learn: true,
        }
    }

    pub fn frozen(controller: Controller) -> Self {
        Self {
            controller,
            learn: false,
        }
    }
}

/// Fresh learners of one architecture for every controllable role.
pub fn learners(scenario: &ScenarioConfig, arch: Arch, config: ArchConfig, seed: u64) -> Result<Vec<Participant>> {
    scenario
        .controllable_roles()
        .into_iter()
        .enumerate()
        .map(|(k, role)| {
            let spec = PolicySpec::for_scenario(role, arch, config, scenario);
            spec.check_compatible(scenario)?;
            Ok(Participant::learner(RolePolicy::new(
                spec,
                derive_seed(seed, 1000 + k as u64),
            )?))
        })
        .collect()
}

/// Transitions of one role. Entry `(t, s)` lives at `t * streams + s`, where a stream is one
/// agent in one environment (`s = env * agents_of_role + k`).
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBatch {
    pub role: Role,
    pub steps: usize,
    pub streams: usize,
    pub actor_obs: Vec<Observation>,
    pub critic_obs: Option<Vec<Observation>>,
    /// Pre-cap local-frame actions.
    pub raw_actions: Vec<Vec2>,
    pub log_probs: Vec<f64>,
    /// Unnormalised value estimates.
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Value of the state after the last step, per stream.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    fn new(role: Role, steps: usize, streams: usize, critic: bool) -> Self {
        let n = steps * streams;
        Self {
            role,
            steps,
            streams,
            actor_obs: Vec::with_capacity(n),
            critic_obs: critic.then(|| Vec::with_capacity(n)),
            raw_actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            bootstrap: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Generalised advantage estimates for one stream. `dones[t]` marks that the episode ended
/// with step `t`, which cuts both the bootstrap and the recursion.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae lengths: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Fills `advantages` and `returns` of a batch, stream by stream.
pub fn compute_gae(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<()> {
    let (t_len, s_len) = (batch.steps, batch.streams);
    if batch.len() != t_len * s_len || batch.values.len() != batch.len() || batch.bootstrap.len() != s_len {
        return Err(Error::Shape(format!(
            "batch of {} entries, {} values, {} bootstrap values for {t_len} steps × {s_len} streams",
            batch.len(),
            batch.values.len(),
            batch.bootstrap.len()
        )));
    }
    batch.advantages = vec![0.0; batch.len()];
    batch.returns = vec![0.0; batch.len()];
    for s in 0..s_len {
        let idx: Vec<usize> = (0..t_len).map(|t| t * s_len + s).collect();
        let r: Vec<f64> = idx.iter().map(|&i| batch.rewards[i]).collect();
        let v: Vec<f64> = idx.iter().map(|&i| batch.values[i]).collect();
        let d: Vec<bool> = idx.iter().map(|&i| batch.dones[i]).collect();
        let (a, ret) = gae(&r, &v, &d, batch.bootstrap[s], gamma, lambda)?;
        for (k, &i) in idx.iter().enumerate() {
            batch.advantages[i] = a[k];
            batch.returns[i] = ret[k];
        }
    }
    Ok(())
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Running, debiased mean and variance of value targets; the critic regresses normalised
/// returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueNorm {
    pub beta: f64,
    mean: f64,
    mean_sq: f64,
    debias: f64,
}

impl Default for ValueNorm {
    fn default() -> Self {
        Self {
            beta: 0.99999,
            mean: 0.0,
            mean_sq: 0.0,
            debias: 0.0,
        }
    }
}

impl ValueNorm {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        self.mean = self.beta * self.mean + (1.0 - self.beta) * m;
        self.mean_sq = self.beta * self.mean_sq + (1.0 - self.beta) * m2;
        self.debias = self.beta * self.debias + (1.0 - self.beta);
    }

    pub fn mean_std(&self) -> (f64, f64) {
        if self.debias <= 0.0 {
            return (0.0, 1.0);
        }
        let mean = self.mean / self.debias;
        let var = (self.mean_sq / self.debias - mean * mean).max(1e-2);
        (mean, var.sqrt())
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let (m, s) = self.mean_std();
        (x - m) / s
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        let (m, s) = self.mean_std();
        y * s + m
    }
}

/// Averages over the minibatch steps of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Clipped-surrogate update of one role for `ppo_epochs` passes over shuffled minibatches.
/// Expects `batch.advantages` already normalised.
pub fn ppo_update(
    policy: &mut RolePolicy,
    optimizer: &mut Adam,
    value_norm: Option<&ValueNorm>,
    batch: &RolloutBatch,
    config: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let n = batch.len();
    if batch.advantages.len() != n || batch.returns.len() != n {
        return Err(Error::Contract(
            "advantages and returns must be computed before updating".into(),
        ));
    }
    let eps = config.clip_eps;
    let target = |i: usize| value_norm.map_or(batch.returns[i], |vn| vn.normalize(batch.returns[i]));
    let old_value = |i: usize| value_norm.map_or(batch.values[i], |vn| vn.normalize(batch.values[i]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0usize;
    let mb_size = n.div_ceil(config.minibatches).max(1);
    for _ in 0..config.ppo_epochs {
        order.shuffle(rng);
        for mb in order.chunks(mb_size) {
            let b = mb.len();
            let obs: Vec<&Observation> = mb.iter().map(|&i| &batch.actor_obs[i]).collect();
            let critic: Option<Vec<&Observation>> =
                batch.critic_obs.as_ref().map(|c| mb.iter().map(|&i| &c[i]).collect());
            let acts: Vec<Vec2> = mb.iter().map(|&i| batch.raw_actions[i]).collect();

            let mut tape = Tape::new();
            let (logp, value, entropy) = policy.evaluate_actions(&mut tape, &obs, critic.as_deref(), &acts)?;
            let old = tape.constant(Tensor::vector(mb.iter().map(|&i| batch.log_probs[i]).collect()));
            let adv = tape.constant(Tensor::vector(mb.iter().map(|&i| batch.advantages[i]).collect()));
            let log_ratio = tape.sub(logp, old)?;
            let ratio = tape.exp(log_ratio);
            let surr1 = tape.mul(ratio, adv)?;
            let clipped = tape.clamp(ratio, 1.0 - eps, 1.0 + eps);
            let surr2 = tape.mul(clipped, adv)?;
            let surr = tape.minimum(surr1, surr2)?;
            let surr_mean = tape.mean(surr);
            let policy_loss = tape.scale(surr_mean, -1.0);

            let tgt = tape.constant(Tensor::matrix(b, 1, mb.iter().map(|&i| target(i)).collect())?);
            let err = tape.sub(value, tgt)?;
            let mut sq = tape.mul(err, err)?;
            if config.clip_value_loss {
                let old_v = tape.constant(Tensor::matrix(b, 1, mb.iter().map(|&i| old_value(i)).collect())?);
                let dv = tape.sub(value, old_v)?;
                let dv = tape.clamp(dv, -eps, eps);
                let v_clip = tape.add(old_v, dv)?;
                let err_c = tape.sub(v_clip, tgt)?;
                let sq_c = tape.mul(err_c, err_c)?;
                sq = tape.maximum(sq, sq_c)?;
            }
            let sq_mean = tape.mean(sq);
            let value_loss = tape.scale(sq_mean, 0.5);

            let weighted_v = tape.scale(value_loss, config.value_coef);
            let weighted_h = tape.scale(entropy, -config.entropy_coef);
            let partial = tape.add(policy_loss, weighted_v)?;
            let loss = tape.add(partial, weighted_h)?;

            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite PPO loss for role {:?} (policy {}, value {}, entropy {}, log_std {:?})",
                    batch.role,
                    tape.value(policy_loss).item(),
                    tape.value(value_loss).item(),
                    tape.value(entropy).item(),
                    policy.log_std()
                )));
            }
            let grads = tape.backward(loss)?;
            let mut g = grads.for_store(&policy.store);
            let norm = clip_grad_norm(&mut g, config.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient norm for role {:?}",
                    batch.role
                )));
            }
            optimizer.step(&mut policy.store, &g, lr);

            let lr_vals = tape.value(log_ratio).data();
            stats.approx_kl += lr_vals.iter().map(|l| l.exp() - 1.0 - l).sum::<f64>() / b as f64;
            stats.clip_fraction += lr_vals.iter().filter(|l| (l.exp() - 1.0).abs() > eps).count() as f64 / b as f64;
            stats.policy_loss += tape.value(policy_loss).item();
            stats.value_loss += tape.value(value_loss).item();
            stats.entropy += tape.value(entropy).item();
            stats.grad_norm += norm;
            count += 1;
        }
    }
    let c = count.max(1) as f64;
    stats.policy_loss /= c;
    stats.value_loss /= c;
    stats.entropy /= c;
    stats.approx_kl /= c;
    stats.clip_fraction /= c;
    stats.grad_norm /= c;
    Ok(stats)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub step: usize,
    pub role: Role,
    pub controller: String,
    /// Mean undiscounted per-agent return of episodes that finished during this rollout.
    pub episode_reward: Option<f64>,
    pub episodes: usize,
    pub eval_reward: Option<f64>,
    pub stats: Option<UpdateStats>,
}

pub const METRICS_HEADER: &str = "update,step,role,controller,episode_reward,episodes,eval_reward,\
policy_loss,value_loss,entropy,approx_kl,clip_fraction,grad_norm";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let s = self.stats;
        let mut line = format!(
            "{},{},{},{},{},{},{}",
            self.update,
            self.step,
            self.role.tag(),
            self.controller,
            opt(self.episode_reward),
            self.episodes,
            opt(self.eval_reward)
        );
        for f in [
            s.map(|s| s.policy_loss),
            s.map(|s| s.value_loss),
            s.map(|s| s.entropy),
            s.map(|s| s.approx_kl),
            s.map(|s| s.clip_fraction),
            s.map(|s| s.grad_norm),
        ] {
            let _ = write!(line, ",{}", opt(f));
        }
        line
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Config("metrics log has an unexpected header".into()));
    }
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad number {s:?} in metrics log")))
        }
    };
    let int = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Config(format!("bad integer {s:?} in metrics log")))
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 13 {
                return Err(Error::Config(format!("metrics line has {} fields: {l}", f.len())));
            }
            let role = Role::parse(f[2]).ok_or_else(|| Error::Config(format!("unknown role {}", f[2])))?;
            let s: Vec<Option<f64>> = f[7..].iter().map(|x| num(x)).collect::<Result<_>>()?;
            let stats = match s.as_slice() {
                [Some(a), Some(b), Some(c), Some(d), Some(e), Some(g)] => Some(UpdateStats {
                    policy_loss: *a,
                    value_loss: *b,
                    entropy: *c,
                    approx_kl: *d,
                    clip_fraction: *e,
                    grad_norm: *g,
                }),
                _ => None,
            };
            Ok(MetricsRow {
                update: int(f[0])?,
                step: int(f[1])?,
                role,
                controller: f[3].to_string(),
                episode_reward: num(f[4])?,
                episodes: int(f[5])?,
                eval_reward: num(f[6])?,
                stats,
            })
        })
        .collect()
}

struct Slot {
    participant: Participant,
    optimizer: Option<Adam>,
    value_norm: Option<ValueNorm>,
}

/// Training state that persists across updates.
pub struct Trainer {
    config: TrainConfig,
    scenario: ScenarioConfig,
    slots: Vec<Slot>,
    envs: Vec<WorldState>,
    running_returns: Vec<Vec<f64>>,
    episodes_started: u64,
    rng: ChaCha8Rng,
    steps_done: usize,
    updates_done: usize,
    metrics: Vec<MetricsRow>,
}

struct RoleRollout {
    batch: Option<RolloutBatch>,
    finished: Vec<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig, scenario: ScenarioConfig, participants: Vec<Participant>) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let controllers: Vec<Controller> = participants.iter().map(|p| p.controller.clone()).collect();
        let order: Vec<Role> = arrange_controllers(&controllers, &scenario)?
            .into_iter()
            .map(|c| c.role())
            .collect();
        let mut slots = Vec::with_capacity(order.len());
        for role in order {
            let p = participants
                .iter()
                .find(|p| p.controller.role() == role)
                .cloned()
                .expect("arranged above");
            if p.learn && p.controller.policy().is_none() {
                return Err(Error::Config(format!("scripted controller for {role:?} cannot learn")));
            }
            let optimizer = match (&p.controller, p.learn) {
                (Controller::Policy(pol), true) => Some(Adam::new(&pol.store)),
                _ => None,
            };
            let value_norm = (p.learn && config.value_norm).then(ValueNorm::default);
            slots.push(Slot {
                participant: p,
                optimizer,
                value_norm,
            });
        }
        let mut trainer = Self {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0)),
            config,
            scenario,
            slots,
            envs: Vec::new(),
            running_returns: Vec::new(),
            episodes_started: 0,
            steps_done: 0,
            updates_done: 0,
            metrics: Vec::new(),
        };
        for _ in 0..trainer.config.num_envs {
            let s = trainer.fresh_episode()?;
            trainer.running_returns.push(vec![0.0; s.num_agents()]);
            trainer.envs.push(s);
        }
        Ok(trainer)
    }

    fn fresh_episode(&mut self) -> Result<WorldState> {
        let seed = derive_seed(self.config.seed ^ 0x5eed_e9f5, self.episodes_started);
        self.episodes_started += 1;
        reset(&self.scenario, seed)
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done >= self.config.total_steps
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn controllers(&self) -> Vec<Controller> {
        self.slots.iter().map(|s| s.participant.controller.clone()).collect()
    }

    fn collect(&mut self) -> Result<Vec<RoleRollout>> {
        let occl = scenario_has_occlusion(&self.scenario);
        let t_len = self.config.rollout_length;
        let role_indices: Vec<Vec<usize>> = self
            .slots
            .iter()
            .map(|s| self.envs[0].indices_of(s.participant.controller.role()))
            .collect();
        let mut out: Vec<RoleRollout> = self
            .slots
            .iter()
            .zip(&role_indices)
            .map(|(s, idx)| RoleRollout {
                batch: s.participant.learn.then(|| {
                    RolloutBatch::new(
                        s.participant.controller.role(),
                        t_len,
                        self.envs.len() * idx.len(),
                        occl,
                    )
                }),
                finished: Vec::new(),
            })
            .collect();

        for _ in 0..t_len {
            let mut actions: Vec<Vec<Vec2>> = self.envs.iter().map(|s| vec![Vec2::ZERO; s.num_agents()]).collect();
            for (k, slot) in self.slots.iter().enumerate() {
                let idx = &role_indices[k];
                match (&slot.participant.controller, out[k].batch.as_mut()) {
                    (Controller::Policy(p), Some(batch)) => {
                        let mut obs = Vec::with_capacity(self.envs.len() * idx.len());
                        let mut crit = Vec::new();
                        let mut frames = Vec::with_capacity(obs.capacity());
                        for s in &self.envs {
                            for &i in idx {
                                let (o, f) = observe(p.arch(), &p.spec.schema, s, i, false)?;
                                if occl {
                                    crit.push(observe(p.arch(), &p.spec.schema, s, i, true)?.0);
                                }
                                obs.push(o);
                                frames.push(f);
                            }
                        }
                        let refs: Vec<&Observation> = obs.iter().collect();
                        let crefs: Vec<&Observation> = crit.iter().collect();
                        let samples = p.act_batch(&refs, occl.then_some(&crefs[..]), &frames, &mut self.rng, false)?;
                        for (m, smp) in samples.iter().enumerate() {
                            let (e, a) = (m / idx.len(), idx[m % idx.len()]);
                            actions[e][a] = smp.global_action;
                            batch.raw_actions.push(smp.raw_action);
                            batch.log_probs.push(smp.log_prob);
                            let v = slot
                                .value_norm
                                .as_ref()
                                .map_or(smp.value, |vn| vn.denormalize(smp.value));
                            batch.values.push(v);
                        }
                        batch.actor_obs.extend(obs);
                        if let Some(c) = batch.critic_obs.as_mut() {
                            c.extend(crit);
                        }
                    }
                    (c, _) => {
                        let joint = crate::policy::joint_actions(&[c], &self.envs, &mut self.rng)?;
                        for (e, row) in joint.into_iter().enumerate() {
                            for &a in idx {
                                actions[e][a] = row[a];
                            }
                        }
                    }
                }
            }

            #[allow(clippy::needless_range_loop)]
            for e in 0..self.envs.len() {
                let tr = step(&self.scenario, &self.envs[e], &actions[e])?;
                for (a, r) in tr.rewards.iter().enumerate() {
                    self.running_returns[e][a] += r;
                }
                for (k, idx) in role_indices.iter().enumerate() {
                    if let Some(batch) = out[k].batch.as_mut() {
                        for &a in idx {
                            batch.rewards.push(tr.rewards[a]);
                            batch.dones.push(tr.done);
                        }
                    }
                }
                if tr.done {
                    for (k, idx) in role_indices.iter().enumerate() {
                        let mean = idx.iter().map(|&a| self.running_returns[e][a]).sum::<f64>() / idx.len() as f64;
                        out[k].finished.push(mean);
                    }
                    self.running_returns[e].iter_mut().for_each(|r| *r = 0.0);
                    self.envs[e] = self.fresh_episode()?;
                } else {
                    self.envs[e] = tr.state;
                }
            }
            self.steps_done += self.envs.len();
        }

        for (k, slot) in self.slots.iter().enumerate() {
            if let (Controller::Policy(p), Some(batch)) = (&slot.participant.controller, out[k].batch.as_mut()) {
                let mut obs = Vec::new();
                let mut crit = Vec::new();
                for s in &self.envs {
                    for &i in &role_indices[k] {
                        obs.push(observe(p.arch(), &p.spec.schema, s, i, false)?.0);
                        if occl {
                            crit.push(observe(p.arch(), &p.spec.schema, s, i, true)?.0);
                        }
                    }
                }
                let refs: Vec<&Observation> = obs.iter().collect();
                let crefs: Vec<&Observation> = crit.iter().collect();
                let v = p.values(&refs, occl.then_some(&crefs[..]))?;
                batch.bootstrap = v
                    .into_iter()
                    .map(|y| slot.value_norm.as_ref().map_or(y, |vn| vn.denormalize(y)))
                    .collect();
            }
        }
        Ok(out)
    }

    /// One rollout phase followed by one learning phase. Returns the metrics rows it appended.
    pub fn update(&mut self) -> Result<&[MetricsRow]> {
        let rollouts = self.collect()?;
        let num_updates = self.config.num_updates().max(1);
        let lr = if self.config.lr_decay {
            self.config.lr * (1.0 - self.updates_done as f64 / num_updates as f64).max(0.0)
        } else {
            self.config.lr
        };
        let first = self.metrics.len();
        let mut rows = Vec::with_capacity(self.slots.len());
        for (slot, mut ro) in self.slots.iter_mut().zip(rollouts) {
            let stats = match (&mut slot.participant.controller, ro.batch.as_mut()) {
                (Controller::Policy(policy), Some(batch)) => {
                    compute_gae(batch, self.config.gamma, self.config.gae_lambda)?;
                    if let Some(vn) = slot.value_norm.as_mut() {
                        vn.update(&batch.returns);
                    }
                    normalize_advantages(&mut batch.advantages);
                    let opt = slot.optimizer.as_mut().expect("learners own an optimiser");
                    Some(ppo_update(
                        policy,
                        opt,
                        slot.value_norm.as_ref(),
                        batch,
                        &self.config,
                        lr,
                        &mut self.rng,
                    )?)
                }
                _ => None,
            };
            let episode_reward =
                (!ro.finished.is_empty()).then(|| ro.finished.iter().sum::<f64>() / ro.finished.len() as f64);
            rows.push(MetricsRow {
                update: self.updates_done,
                step: self.steps_done,
                role: slot.participant.controller.role(),
                controller: slot.participant.controller.label(),
                episode_reward,
                episodes: ro.finished.len(),
                eval_reward: None,
                stats,
            });
        }
        self.updates_done += 1;
        let interval = self.config.eval_interval;
        if interval > 0 && (self.updates_done.is_multiple_of(interval) || self.is_finished()) {
            let seed = derive_seed(self.config.seed ^ 0xe7a1, self.updates_done as u64);
            let rewards = mean_episode_rewards(&self.controllers(), &self.scenario, self.config.eval_episodes, seed)?;
            for (row, r) in rows.iter_mut().zip(rewards) {
                row.eval_reward = Some(r);
            }
        }
        self.metrics.extend(rows);
        Ok(&self.metrics[first..])
    }

    /// Updates until the step budget is spent, calling `on_update` after each one.
    pub fn run(&mut self, mut on_update: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            self.update()?;
            on_update(self)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            controllers: self.slots.into_iter().map(|s| s.participant.controller).collect(),
            metrics: self.metrics,
            steps: self.steps_done,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// One per controllable role, in scenario role order.
    pub controllers: Vec<Controller>,
    pub metrics: Vec<MetricsRow>,
    pub steps: usize,
}

impl TrainOutcome {
    pub fn policy(&self, role: Role) -> Option<&RolePolicy> {
        self.controllers
            .iter()
            .find(|c| c.role() == role)
            .and_then(Controller::policy)
    }
}

pub fn train(config: &TrainConfig, scenario: &ScenarioConfig, participants: Vec<Participant>) -> Result<TrainOutcome> {
    let mut t = Trainer::new(config.clone(), scenario.clone(), participants)?;
    t.run(|_| Ok(()))?;
    Ok(t.finish())
}

/// Trains fresh learners of `arch` for every controllable role.
pub fn train_arch(
    config: &TrainConfig,
    scenario: &ScenarioConfig,
    arch: Arch,
    arch_config: ArchConfig,
) -> Result<TrainOutcome> {
    train(config, scenario, learners(scenario, arch, arch_config, config.seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Behaviour;
    use rand::Rng;

    /// Direct double sum: A_t = Σ_k (γλ)^k δ_{t+k}, truncated at the first done.
    fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        (0..n)
            .map(|t| {
                let mut acc = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    let next = if d[k] {
                        0.0
                    } else if k + 1 < n {
                        v[k + 1]
                    } else {
                        boot
                    };
                    acc += w * (r[k] + g * next - v[k]);
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                acc
            })
            .collect()
    }

    #[test]
    fn gae_terminal_one_step() {
        let (a, ret) = gae(&[2.0], &[0.5], &[true], 9.0, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![1.5]);
        assert_eq!(ret, vec![2.0]);
    }

    #[test]
    fn gae_myopic() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.1, 0.2, 0.3];
        let (a, _) = gae(&r, &v, &[false; 3], 4.0, 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], r[t] - v[t]);
        }
    }

    #[test]
    fn gae_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
            let (g, l) = (rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
            let (a, _) = gae(&r, &v, &d, 0.7, g, l).unwrap();
            for (x, y) in a.iter().zip(gae_oracle(&r, &v, &d, 0.7, g, l)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn gae_length_mismatch() {
        assert!(gae(&[1.0], &[], &[false], 0.0, 0.9, 0.9).is_err());
    }

    #[test]
    fn normalized_advantages_are_standard() {
        let mut a: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 3.0 + 2.0).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 100.0;
        let s = (a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 100.0).sqrt();
        assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn value_norm_round_trip() {
        let mut vn = ValueNorm::default();
        assert_eq!(vn.normalize(3.0), 3.0);
        vn.update(&[1.0, 2.0, 3.0, 10.0]);
        let x = 4.2;
        assert!((vn.denormalize(vn.normalize(x)) - x).abs() < 1e-12);
        let (m, _) = vn.mean_std();
        assert!((m - 4.0).abs() < 1e-9);
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            total_steps: 100,
            num_envs: 2,
            rollout_length: 25,
            ppo_epochs: 2,
            minibatches: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_counts() {
        let scenario = ScenarioConfig::spread(3);
        let mut t = Trainer::new(
            tiny(),
            scenario.clone(),
            learners(&scenario, Arch::Lego, ArchConfig::desk(), 0).unwrap(),
        )
        .unwrap();
        let ro = t.collect().unwrap();
        let b = ro[0].batch.as_ref().unwrap();
        assert_eq!(b.len(), 150);
        assert_eq!(b.actor_obs.len(), 150);
        assert_eq!(b.streams, 6);
        assert_eq!(ro[0].finished.len(), 2, "one full episode per env");
        assert!(b.dones[b.len() - 1]);
    }

    #[test]
    fn identical_seeds_identical_training() {
        let scenario = ScenarioConfig::spread(2);
        let run = || train_arch(&tiny(), &scenario, Arch::Lego, ArchConfig::desk()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
        assert_eq!(a.controllers, b.controllers);
    }

    #[test]
    fn unchanged_params_give_unit_ratio() {
        let scenario = ScenarioConfig::spread(3);
        let mut t = Trainer::new(
            tiny(),
            scenario.clone(),
            learners(&scenario, Arch::Lego, ArchConfig::desk(), 0).unwrap(),
        )
        .unwrap();
        let mut ro = t.collect().unwrap();
        let batch = ro[0].batch.as_mut().unwrap();
        compute_gae(batch, 0.99, 0.95).unwrap();
        normalize_advantages(&mut batch.advantages);
        let Controller::Policy(p) = &t.slots[0].participant.controller else {
            panic!()
        };
        let obs: Vec<&Observation> = batch.actor_obs.iter().collect();
        let mut tape = Tape::new();
        let (logp, _, _) = p.evaluate_actions(&mut tape, &obs, None, &batch.raw_actions).unwrap();
        let surrogate: f64 = tape
            .value(logp)
            .data()
            .iter()
            .zip(&batch.log_probs)
            .zip(&batch.advantages)
            .map(|((n, o), a)| (n - o).exp() * a)
            .sum::<f64>()
            / batch.len() as f64;
        assert!(surrogate.abs() < 1e-9);
    }

    #[test]
    fn clip_blocks_gradient() {
        let mut tape = Tape::new();
        let ratio = tape.variable(Tensor::vector(vec![1.5, 1.1]));
        let adv = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let s1 = tape.mul(ratio, adv).unwrap();
        let c = tape.clamp(ratio, 0.8, 1.2);
        let s2 = tape.mul(c, adv).unwrap();
        let m = tape.minimum(s1, s2).unwrap();
        let loss = tape.sum(m);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(ratio).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn tag_trains_two_roles_and_metrics_parse() {
        let scenario = ScenarioConfig::tag();
        let cfg = TrainConfig {
            total_steps: 50,
            num_envs: 2,
            ppo_epochs: 1,
            ..tiny()
        };
        let out = train_arch(&cfg, &scenario, Arch::Lego, ArchConfig::desk()).unwrap();
        assert_eq!(out.controllers.len(), 2);
        let text = metrics_csv(&out.metrics);
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed, out.metrics);
        assert!(parsed.windows(2).all(|w| w[0].step <= w[1].step));
    }

    #[test]
    fn scripted_participants_do_not_learn() {
        let scenario = ScenarioConfig::tag();
        let mut ps = learners(&scenario, Arch::Lego, ArchConfig::desk(), 0).unwrap();
        ps[1] = Participant::frozen(Controller::Scripted {
            role: Role::Evader,
            behaviour: Behaviour::Flee,
        });
        let cfg = TrainConfig {
            total_steps: 50,
            ppo_epochs: 1,
            ..tiny()
        };
        let out = train(&cfg, &scenario, ps).unwrap();
        assert!(out
            .metrics
            .iter()
            .filter(|r| r.role == Role::Evader)
            .all(|r| r.stats.is_none()));
        assert!(out
            .metrics
            .iter()
            .filter(|r| r.role == Role::Pursuer)
            .all(|r| r.stats.is_some()));
    }

    #[test]
    fn mlp_refuses_other_sizes() {
        let s3 = ScenarioConfig::spread(3);
        let ps = learners(&s3, Arch::Mlp, ArchConfig::desk(), 0).unwrap();
        assert!(matches!(
            Trainer::new(tiny(), ScenarioConfig::spread(4), ps),
            Err(Error::Incompatible(_))
        ));
    }
}
