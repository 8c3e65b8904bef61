//! Evaluation protocols: seeded deterministic rollouts, the random-policy oracle, zero-shot
//! scaling, curriculum fine-tuning, cross-architecture self-play and shifted initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::marl::{learners, train, train_arch, Participant, TrainConfig, TrainOutcome};
use crate::policy::{arrange_controllers, observe, Arch, ArchConfig, Behaviour, Controller, Observation};
use crate::sim::{
    derive_seed, reset, step, InitDistribution, Role, ScenarioConfig, ScenarioKind, Transition, WorldState,
};

/// Mean and sample standard deviation (`n − 1` denominator; 0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Relative difference `|a − b| / |b|`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Seed of episode `episode` in an evaluation with base seed `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, episode as u64)
}

fn action_rng(episode_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(episode_seed ^ 0xac71_0000, 0))
}

/// World-frame actions for a set of environments. Policies act deterministically and are
/// batched across environments; scripted behaviours draw from the per-environment generator,
/// so an episode plays out the same whether it runs alone or alongside others.
pub fn step_actions(
    controllers: &[&Controller],
    states: &[WorldState],
    rngs: &mut [ChaCha8Rng],
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
                        out[e][i] = behaviour.action(s, i, &mut rngs[e]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Plays one episode, calling `on_step(state_before, actions, transition)` at every step.
pub fn play_episode(
    controllers: &[Controller],
    scenario: &ScenarioConfig,
    episode_seed: u64,
    mut on_step: impl FnMut(&WorldState, &[Vec2], &Transition),
) -> Result<()> {
    let ordered = arrange_controllers(controllers, scenario)?;
    let mut state = reset(scenario, episode_seed)?;
    let mut rngs = [action_rng(episode_seed)];
    loop {
        let actions = step_actions(&ordered, std::slice::from_ref(&state), &mut rngs)?.remove(0);
        let tr = step(scenario, &state, &actions)?;
        on_step(&state, &actions, &tr);
        if tr.done {
            return Ok(());
        }
        state = tr.state;
    }
}

/// Per-episode, per-role undiscounted returns (mean over the agents of the role) for episodes
/// `0..episodes` derived from `seed`. Roles follow the scenario's role order.
pub fn episode_returns(
    controllers: &[Controller],
    scenario: &ScenarioConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let ordered = arrange_controllers(controllers, scenario)?;
    let roles = scenario.controllable_roles();
    let seeds: Vec<u64> = (0..episodes).map(|k| episode_seed(seed, k)).collect();
    let mut states: Vec<WorldState> = seeds.iter().map(|&s| reset(scenario, s)).collect::<Result<_>>()?;
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| action_rng(s)).collect();
    let indices: Vec<Vec<usize>> = match states.first() {
        Some(s) => roles.iter().map(|&r| s.indices_of(r)).collect(),
        None => return Ok(Vec::new()),
    };
    let mut sums = vec![vec![0.0; scenario.num_controllable()]; episodes];
    loop {
        let actions = step_actions(&ordered, &states, &mut rngs)?;
        let mut done = false;
        for e in 0..states.len() {
            let tr = step(scenario, &states[e], &actions[e])?;
            for (a, r) in tr.rewards.iter().enumerate() {
                sums[e][a] += r;
            }
            done = tr.done;
            states[e] = tr.state;
        }
        if done {
            break;
        }
    }
    Ok(sums
        .iter()
        .map(|s| {
            indices
                .iter()
                .map(|idx| idx.iter().map(|&a| s[a]).sum::<f64>() / idx.len() as f64)
                .collect()
        })
        .collect())
}

/// Mean episode return per role over `episodes` episodes.
pub fn mean_episode_rewards(
    controllers: &[Controller],
    scenario: &ScenarioConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let per_ep = episode_returns(controllers, scenario, episodes, seed)?;
    let roles = scenario.controllable_roles().len();
    Ok((0..roles)
        .map(|k| per_ep.iter().map(|e| e[k]).sum::<f64>() / per_ep.len().max(1) as f64)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Controller label per role, e.g. `pursuer=lego`.
    pub controllers: Vec<String>,
    pub trained_on: String,
    pub steps: usize,
}

impl Provenance {
    pub fn new(controllers: &[Controller], trained_on: impl Into<String>, steps: usize) -> Self {
        Self {
            controllers: controllers
                .iter()
                .map(|c| format!("{}={}", c.role().tag(), c.label()))
                .collect(),
            trained_on: trained_on.into(),
            steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub role: Role,
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub episodes_per_seed: usize,
    pub seeds: Vec<u64>,
    pub roles: Vec<RoleStats>,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn stats(&self, role: Role) -> Option<&RoleStats> {
        self.roles.iter().find(|r| r.role == role)
    }

    /// Statistics of the first controllable role (agents in Spread, pursuers in Tag).
    pub fn primary(&self) -> &RoleStats {
        &self.roles[0]
    }

    pub fn mean(&self) -> f64 {
        self.primary().mean
    }

    /// Whether the stored aggregates equal a recomputation from the per-seed values.
    pub fn aggregates_consistent(&self) -> bool {
        self.roles.iter().all(|r| {
            let (m, s) = mean_std(&r.per_seed);
            m == r.mean && s == r.std
        })
    }
}

/// Deterministic evaluation: for every seed, the mean episode return over `episodes` episodes.
pub fn evaluate(
    controllers: &[Controller],
    scenario: &ScenarioConfig,
    episodes: usize,
    seeds: &[u64],
    provenance: Provenance,
) -> Result<EvalReport> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config(
            "evaluation needs at least one episode and one seed".into(),
        ));
    }
    let roles = scenario.controllable_roles();
    let mut per_seed = vec![Vec::with_capacity(seeds.len()); roles.len()];
    for &seed in seeds {
        for (k, r) in mean_episode_rewards(controllers, scenario, episodes, seed)?
            .into_iter()
            .enumerate()
        {
            per_seed[k].push(r);
        }
    }
    Ok(EvalReport {
        scenario: scenario.descriptor(),
        episodes_per_seed: episodes,
        seeds: seeds.to_vec(),
        roles: roles
            .into_iter()
            .zip(per_seed)
            .map(|(role, v)| {
                let (mean, std) = mean_std(&v);
                RoleStats {
                    role,
                    per_seed: v,
                    mean,
                    std,
                }
            })
            .collect(),
        provenance,
    })
}

/// Every role driven by the untrained Gaussian policy (zero mean, `exp(-0.5)` spread).
pub fn random_controllers(scenario: &ScenarioConfig) -> Vec<Controller> {
    scenario
        .controllable_roles()
        .into_iter()
        .map(|role| Controller::Scripted {
            role,
            behaviour: Behaviour::random_default(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
    /// Half-width of the normal 95% confidence interval of the mean.
    pub ci95: f64,
}

/// Mean episode return of the first controllable role under the random policy, from pure
/// simulation.
pub fn random_policy_oracle(scenario: &ScenarioConfig, episodes: usize, seed: u64) -> Result<OracleEstimate> {
    let per_ep = episode_returns(&random_controllers(scenario), scenario, episodes, seed)?;
    let v: Vec<f64> = per_ep.iter().map(|e| e[0]).collect();
    let (mean, std) = mean_std(&v);
    Ok(OracleEstimate {
        mean,
        std,
        episodes,
        ci95: 1.96 * std / (episodes as f64).sqrt(),
    })
}

fn require_size_agnostic(controllers: &[Controller]) -> Result<()> {
    for c in controllers {
        if let Controller::Policy(p) = c {
            if !p.arch().is_size_agnostic() {
                return Err(Error::Incompatible(format!(
                    "{} policy for {:?} has a fixed observation width and cannot change team size",
                    p.arch().tag(),
                    p.role()
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates Spread policies, unchanged, at each target team size.
pub fn zero_shot_scale(
    controllers: &[Controller],
    base: &ScenarioConfig,
    targets: &[usize],
    episodes: usize,
    seeds: &[u64],
    provenance: &Provenance,
) -> Result<Vec<EvalReport>> {
    if base.kind != ScenarioKind::Spread {
        return Err(Error::Config("zero-shot scaling is defined on Spread".into()));
    }
    require_size_agnostic(controllers)?;
    targets
        .iter()
        .map(|&n| {
            let mut s = ScenarioConfig::spread(n).with_init(base.init);
            s.horizon = base.horizon;
            s.physics = base.physics;
            s.bounds = base.bounds;
            evaluate(controllers, &s, episodes, seeds, provenance.clone())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumResult {
    pub pretrained: TrainOutcome,
    pub finetuned: TrainOutcome,
    /// Pretrained policy evaluated on the target without fine-tuning.
    pub scl: EvalReport,
    pub curr: EvalReport,
}

/// Pretrains on `pretrain`, then continues training the same parameters (fresh optimiser
/// state) on `target`.
#[allow(clippy::too_many_arguments)]
pub fn curriculum_train(
    config: &TrainConfig,
    arch: Arch,
    arch_config: ArchConfig,
    pretrain: &ScenarioConfig,
    pretrain_steps: usize,
    target: &ScenarioConfig,
    finetune_steps: usize,
    episodes: usize,
    seeds: &[u64],
) -> Result<CurriculumResult> {
    if !arch.is_size_agnostic() {
        return Err(Error::Incompatible(format!(
            "curriculum transfer needs a size-agnostic architecture, got {}",
            arch.tag()
        )));
    }
    let pre_cfg = TrainConfig {
        total_steps: pretrain_steps,
        ..config.clone()
    };
    let pretrained = train_arch(&pre_cfg, pretrain, arch, arch_config)?;
    let scl = evaluate(
        &pretrained.controllers,
        target,
        episodes,
        seeds,
        Provenance::new(&pretrained.controllers, pretrain.descriptor(), pretrained.steps),
    )?;
    let fine_cfg = TrainConfig {
        total_steps: finetune_steps,
        seed: derive_seed(config.seed, 1),
        ..config.clone()
    };
    let participants = pretrained
        .controllers
        .iter()
        .map(|c| match c {
            Controller::Policy(p) => {
                p.spec.check_compatible(target)?;
                Ok(Participant::learner(p.clone()))
            }
            other => Ok(Participant::frozen(other.clone())),
        })
        .collect::<Result<Vec<_>>>()?;
    let finetuned = train(&fine_cfg, target, participants)?;
    let curr = evaluate(
        &finetuned.controllers,
        target,
        episodes,
        seeds,
        Provenance::new(
            &finetuned.controllers,
            format!("{} then {}", pretrain.descriptor(), target.descriptor()),
            pretrained.steps + finetuned.steps,
        ),
    )?;
    Ok(CurriculumResult {
        pretrained,
        finetuned,
        scl,
        curr,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValidation {
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Simultaneous Tag self-play with a different architecture on each team.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    config: &TrainConfig,
    scenario: &ScenarioConfig,
    arch_pursuer: Arch,
    arch_evader: Arch,
    arch_config: ArchConfig,
    episodes: usize,
    seeds: &[u64],
) -> Result<CrossValidation> {
    if scenario.kind != ScenarioKind::TagOcclusion {
        return Err(Error::Config("cross-validation is defined on Tag".into()));
    }
    let mut ps = learners(scenario, arch_pursuer, arch_config, config.seed)?;
    let evaders = learners(scenario, arch_evader, arch_config, config.seed)?;
    for (p, e) in ps.iter_mut().zip(evaders) {
        if p.controller.role() == Role::Evader {
            *p = e;
        }
    }
    let outcome = train(config, scenario, ps)?;
    let report = evaluate(
        &outcome.controllers,
        scenario,
        episodes,
        seeds,
        Provenance::new(&outcome.controllers, scenario.descriptor(), outcome.steps),
    )?;
    Ok(CrossValidation { outcome, report })
}

/// Trains `role` with `arch` while every other role follows `opponent`, frozen.
pub fn train_against_scripted(
    config: &TrainConfig,
    scenario: &ScenarioConfig,
    role: Role,
    arch: Arch,
    arch_config: ArchConfig,
    opponent: Behaviour,
) -> Result<TrainOutcome> {
    let ps = learners(scenario, arch, arch_config, config.seed)?
        .into_iter()
        .map(|p| {
            if p.controller.role() == role {
                p
            } else {
                Participant::frozen(Controller::Scripted {
                    role: p.controller.role(),
                    behaviour: opponent,
                })
            }
        })
        .collect();
    train(config, scenario, ps)
}

/// Reports on the training initialisation and on the right-side and uniform initialisations.
pub fn ood_eval(
    controllers: &[Controller],
    trained_on: &ScenarioConfig,
    episodes: usize,
    seeds: &[u64],
    provenance: &Provenance,
) -> Result<Vec<EvalReport>> {
    let mut inits = vec![trained_on.init];
    for i in [InitDistribution::RightSide, InitDistribution::Uniform] {
        if !inits.contains(&i) {
            inits.push(i);
        }
    }
    inits
        .into_iter()
        .map(|i| {
            evaluate(
                controllers,
                &trained_on.clone().with_init(i),
                episodes,
                seeds,
                provenance.clone(),
            )
        })
        .collect()
}

pub const REPORT_CSV_HEADER: &str = "label,scenario,role,mean,std,seeds,episodes_per_seed";

/// One row per (report, role).
pub fn reports_csv(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for (label, r) in rows {
        for s in &r.roles {
            out.push_str(&format!(
                "{label},{},{},{},{},{},{}\n",
                r.scenario,
                s.role.tag(),
                s.mean,
                s.std,
                r.seeds.len(),
                r.episodes_per_seed
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn perfect_coverage_upper_bound() {
        let cfg = ScenarioConfig::spread(2);
        let idle = vec![Controller::Scripted {
            role: Role::Agent,
            behaviour: Behaviour::Idle,
        }];
        let mut s = reset(&cfg, 0).unwrap();
        s.entities[0].position = s.entities[2].position;
        s.entities[1].position = s.entities[3].position;
        let tr = step(&cfg, &s, &[Vec2::ZERO; 2]).unwrap();
        if tr.state.entities[0].position.distance(tr.state.entities[1].position) > 0.3 {
            assert_eq!(tr.rewards, vec![0.0, 0.0]);
        }
        let r = evaluate(&idle, &cfg, 3, &[1, 2], Provenance::new(&idle, "none", 0)).unwrap();
        assert!(r.mean() < 0.0);
    }

    #[test]
    fn reports_are_reproducible_and_consistent() {
        let cfg = ScenarioConfig::spread(3);
        let c = random_controllers(&cfg);
        let p = Provenance::new(&c, "none", 0);
        let a = evaluate(&c, &cfg, 4, &[0, 1, 2], p.clone()).unwrap();
        let b = evaluate(&c, &cfg, 4, &[0, 1, 2], p).unwrap();
        assert_eq!(a, b);
        assert!(a.aggregates_consistent());
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), a);
    }

    #[test]
    fn lockstep_matches_single_episode() {
        let cfg = ScenarioConfig::tag();
        let c = vec![
            Controller::Scripted {
                role: Role::Pursuer,
                behaviour: Behaviour::random_default(),
            },
            Controller::Scripted {
                role: Role::Evader,
                behaviour: Behaviour::Flee,
            },
        ];
        let batched = episode_returns(&c, &cfg, 3, 9).unwrap();
        for (k, row) in batched.iter().enumerate() {
            let mut sums = [0.0; 5];
            play_episode(&c, &cfg, episode_seed(9, k), |_, _, tr| {
                for (a, r) in tr.rewards.iter().enumerate() {
                    sums[a] += r;
                }
            })
            .unwrap();
            assert_eq!(row[0], sums[..3].iter().sum::<f64>() / 3.0);
            assert_eq!(row[1], sums[3..].iter().sum::<f64>() / 2.0);
        }
    }

    #[test]
    fn mlp_cannot_scale() {
        let cfg = ScenarioConfig::spread(4);
        let ps = learners(&cfg, Arch::Mlp, ArchConfig::desk(), 0).unwrap();
        let c: Vec<Controller> = ps.into_iter().map(|p| p.controller).collect();
        let p = Provenance::new(&c, cfg.descriptor(), 0);
        assert!(matches!(
            zero_shot_scale(&c, &cfg, &[2, 6], 1, &[0], &p),
            Err(Error::Incompatible(_))
        ));
        let lego: Vec<Controller> = learners(&cfg, Arch::Lego, ArchConfig::desk(), 0)
            .unwrap()
            .into_iter()
            .map(|p| p.controller)
            .collect();
        let reps = zero_shot_scale(&lego, &cfg, &[2, 3, 5, 6], 1, &[0], &p).unwrap();
        assert_eq!(reps.len(), 4);
        assert_eq!(reps[3].scenario, "spread-n6-uniform");
    }

    #[test]
    fn ood_covers_three_inits() {
        let cfg = ScenarioConfig::spread(2).with_init(InitDistribution::LeftSide);
        let c = random_controllers(&cfg);
        let reps = ood_eval(&c, &cfg, 2, &[0], &Provenance::new(&c, "none", 0)).unwrap();
        let names: Vec<&str> = reps.iter().map(|r| r.scenario.as_str()).collect();
        assert_eq!(names, ["spread-n2-left", "spread-n2-right", "spread-n2-uniform"]);
        let csv = reports_csv(&[("x".into(), &reps[0])]);
        assert_eq!(csv.lines().count(), 2);
    }
}
