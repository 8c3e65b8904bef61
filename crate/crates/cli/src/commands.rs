//! The `train`, `eval`, `check` and `replay` subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use swarm_core::eval::{episode_seed, evaluate, ood_eval, reports_csv, zero_shot_scale, EvalReport, Provenance};
use swarm_core::marl::{metrics_csv, Participant, Trainer};
use swarm_core::policy::{Arch, Controller, PolicySpec, RolePolicy};
use swarm_core::sim::{derive_seed, Role, ScenarioConfig, ScenarioKind};

use crate::checkpoint::Checkpoint;
use crate::checks::{run_suite, Suite, SuiteReport};
use crate::config::{parse_pairs, RoleChoice, RunConfig};
use crate::{resolve_out, trajectory, write_atomic, CliError, DirLock};

#[derive(Debug, Parser)]
#[command(
    name = "swarm",
    version,
    about = "Equivariant multi-agent policies for 2D particle swarms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train policies with MAPPO and write checkpoints and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint under one of the evaluation protocols.
    Eval(EvalArgs),
    /// Run a randomised property suite.
    Check(CheckArgs),
    /// Re-simulate an exported trajectory and compare it with the stored file.
    Replay(ReplayArgs),
}

/// Config sources shared by `train` and `eval`. Later sources win: file, flags, `--set`.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scenario kind: spread or tag.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Team size: agents (and landmarks) in Spread, pursuers in Tag.
    #[arg(long)]
    pub agents: Option<usize>,
    /// Architecture for every learned role: lego, mlp, mlp-local or gcn.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total environment steps of training.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory; relative paths are resolved against `$SWARM_OUT_ROOT`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Basic,
    ZeroShot,
    Curriculum,
    CrossVal,
    Ood,
}

impl Protocol {
    pub fn tag(self) -> &'static str {
        match self {
            Protocol::Basic => "basic",
            Protocol::ZeroShot => "zero-shot",
            Protocol::Curriculum => "curriculum",
            Protocol::CrossVal => "cross-val",
            Protocol::Ood => "ood",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "basic")]
    pub protocol: Protocol,
    /// Team sizes for zero-shot scaling, comma separated.
    #[arg(long, default_value = "2,3,5,6")]
    pub targets: String,
    /// Episodes per evaluation seed.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Evaluation seeds, comma separated.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Write one trajectory file per evaluated episode.
    #[arg(long)]
    pub export_trajectories: bool,
    /// Checkpoint supplying the evader policies for cross-validation.
    #[arg(long)]
    pub opponent: Option<PathBuf>,
    /// Scenario changes and, for curriculum fine-tuning, training settings.
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    /// equivariance, gradients, physics, gae, attention or all.
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub trajectory: PathBuf,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with(argv: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => run_train(&a).map(|s| print!("{}", s.render())),
        Command::Eval(a) => run_eval(&a).map(|s| print!("{}", s.render())),
        Command::Check(a) => {
            let reports = run_check(&a)?;
            for r in &reports {
                print!("{}", r.render());
            }
            let failed: Vec<&str> = reports
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.suite.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Check(format!("suite(s) {} violated", failed.join(", "))))
            }
        }
        Command::Replay(a) => {
            let outcome = trajectory::replay(&a.trajectory)?;
            match outcome.first_difference {
                None => {
                    println!("{}: {} steps, bit-identical", a.trajectory.display(), outcome.steps);
                    Ok(())
                }
                Some(line) => Err(CliError::Check(format!(
                    "{} diverges from re-simulation at line {}",
                    a.trajectory.display(),
                    line + 1
                ))),
            }
        }
    }
}

fn set_pair(pairs: &mut Vec<(String, String)>, key: &str, value: String) {
    pairs.retain(|(k, _)| k != key);
    pairs.push((key.to_string(), value));
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl Overrides {
    /// Merges `base`, the config file, the flags and `--set` into one list of pairs.
    pub fn pairs(&self, base: Vec<(String, String)>) -> Result<Vec<(String, String)>, CliError> {
        let mut pairs = base;
        if let Some(path) = &self.config {
            for (k, v) in parse_pairs(&read_text(path)?)? {
                set_pair(&mut pairs, &k, v);
            }
        }
        if let Some(s) = &self.scenario {
            set_pair(&mut pairs, "scenario.kind", s.clone());
        }
        if let Some(n) = self.agents {
            let kind = pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "scenario.kind")
                .and_then(|(_, v)| ScenarioKind::parse(v));
            if kind == Some(ScenarioKind::TagOcclusion) {
                set_pair(&mut pairs, "scenario.pursuers", n.to_string());
            } else {
                set_pair(&mut pairs, "scenario.agents", n.to_string());
                set_pair(&mut pairs, "scenario.landmarks", n.to_string());
            }
        }
        if let Some(a) = &self.arch {
            set_pair(&mut pairs, "arch.type", a.clone());
        }
        if let Some(s) = self.seed {
            set_pair(&mut pairs, "train.seed", s.to_string());
        }
        if let Some(s) = self.steps {
            set_pair(&mut pairs, "train.total_steps", s.to_string());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {kv:?}")))?;
            set_pair(&mut pairs, k.trim(), v.trim().to_string());
        }
        Ok(pairs)
    }

    /// Resolves a training config. The scenario must be named somewhere.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let pairs = self.pairs(Vec::new())?;
        if !pairs.iter().any(|(k, _)| k == "scenario.kind") {
            return Err(CliError::Config(
                "no scenario given: set scenario.kind in the config or pass --scenario".into(),
            ));
        }
        RunConfig::from_pairs(&pairs)
    }
}

/// Fresh participants for every controllable role, seeded as in `marl::learners`.
pub fn participants(cfg: &RunConfig) -> Result<Vec<Participant>, CliError> {
    cfg.role_choices()
        .into_iter()
        .enumerate()
        .map(|(k, (role, choice))| match choice {
            RoleChoice::Learn(arch) => {
                let spec = PolicySpec::for_scenario(role, arch, cfg.arch, &cfg.scenario);
                spec.check_compatible(&cfg.scenario)?;
                Ok(Participant::learner(RolePolicy::new(
                    spec,
                    derive_seed(cfg.train.seed, 1000 + k as u64),
                )?))
            }
            RoleChoice::Scripted(behaviour) => Ok(Participant::frozen(Controller::Scripted { role, behaviour })),
        })
        .collect()
}

fn default_out(prefix: &str, cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!(
        "{prefix}-{}-{}-s{}",
        cfg.scenario.descriptor(),
        cfg.arch_type.tag(),
        cfg.train.seed
    ))
}

fn controllers_label(controllers: &[Controller]) -> String {
    controllers
        .iter()
        .map(|c| format!("{}={}", c.role().tag(), c.label()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_report(label: &str, r: &EvalReport) -> String {
    let mut out = String::new();
    for s in &r.roles {
        let _ = writeln!(
            out,
            "  {label:<14} {:<26} {:<8} {:>10.3} ± {:<8.3} ({} seeds × {} episodes)",
            r.scenario,
            s.role.tag(),
            s.mean,
            s.std,
            r.seeds.len(),
            r.episodes_per_seed
        );
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub steps: usize,
    pub final_eval: EvalReport,
}

impl TrainSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "trained {} steps; outputs in {}\nfinal evaluation:\n",
            self.steps,
            self.out.display()
        );
        s.push_str(&render_report("final", &self.final_eval));
        s
    }

    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("final checkpoint is always written")
    }
}

pub fn run_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    // Everything that can fail on bad input happens before the first file is created.
    let cfg = args.overrides.resolve()?;
    let people = participants(&cfg)?;
    let mut trainer = Trainer::new(cfg.train.clone(), cfg.scenario.clone(), people)?;

    let out = resolve_out(args.out.as_deref().unwrap_or(&default_out("train", &cfg)));
    let _lock = DirLock::acquire(&out)?;
    write_atomic(&out.join("config.cfg"), cfg.to_text().as_bytes())?;

    let mut checkpoints = Vec::new();
    let save = |trainer: &Trainer, name: &str| -> Result<PathBuf, CliError> {
        let path = out.join("checkpoints").join(name);
        Checkpoint {
            scenario: cfg.scenario.clone(),
            step: trainer.steps_done(),
            controllers: trainer.controllers(),
        }
        .save(&path)?;
        Ok(path)
    };
    while !trainer.is_finished() {
        trainer.update()?;
        write_atomic(&out.join("metrics.csv"), metrics_csv(trainer.metrics()).as_bytes())?;
        let u = trainer.updates_done();
        if cfg.checkpoint_every > 0 && u % cfg.checkpoint_every == 0 && !trainer.is_finished() {
            checkpoints.push(save(&trainer, &format!("update-{u:05}.ckpt"))?);
        }
    }
    write_atomic(&out.join("metrics.csv"), metrics_csv(trainer.metrics()).as_bytes())?;
    let final_path = save(&trainer, "final.ckpt")?;
    checkpoints.push(final_path.clone());

    // The summary is computed from the stored (32-bit) checkpoint so that it matches `eval`.
    let ckpt = Checkpoint::load(&final_path)?;
    let episodes = cfg.train.eval_episodes.max(1);
    let final_eval = evaluate(
        &ckpt.controllers,
        &cfg.scenario,
        episodes,
        &[cfg.train.seed],
        Provenance::new(&ckpt.controllers, cfg.scenario.descriptor(), ckpt.step),
    )?;
    write_atomic(
        &out.join("final_eval.json"),
        serde_json::to_string_pretty(&final_eval)
            .expect("report serialises")
            .as_bytes(),
    )?;
    Ok(TrainSummary {
        out,
        checkpoints,
        steps: trainer.steps_done(),
        final_eval,
    })
}

fn parse_list<T: std::str::FromStr>(flag: &str, s: &str) -> Result<Vec<T>, CliError> {
    let v: Vec<T> = s
        .split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("invalid entry {x:?} in --{flag}")))
        })
        .collect::<Result<_, _>>()?;
    if v.is_empty() {
        return Err(CliError::Config(format!("--{flag} is empty")));
    }
    Ok(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct LabelledReport {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub out: PathBuf,
    pub protocol: Protocol,
    pub reports: Vec<LabelledReport>,
    pub trajectories: Vec<PathBuf>,
}

impl EvalSummary {
    pub fn render(&self) -> String {
        let mut s = format!("protocol {}; outputs in {}\n", self.protocol.tag(), self.out.display());
        for r in &self.reports {
            s.push_str(&render_report(&r.label, &r.report));
        }
        if !self.trajectories.is_empty() {
            let _ = writeln!(s, "  {} trajectories exported", self.trajectories.len());
        }
        s
    }
}

/// Fails unless every learned controller uses `arch`.
fn require_arch(controllers: &[Controller], arch: Arch) -> Result<(), CliError> {
    for c in controllers {
        if let Some(p) = c.policy() {
            if p.arch() != arch {
                return Err(CliError::Incompatible(format!(
                    "checkpoint holds a {} policy for {}, not {}",
                    p.arch().tag(),
                    c.role().tag(),
                    arch.tag()
                )));
            }
        }
    }
    Ok(())
}

fn check_controllers(controllers: &[Controller], scenario: &ScenarioConfig) -> Result<(), CliError> {
    for c in controllers {
        c.check_compatible(scenario)
            .map_err(|e| CliError::Incompatible(e.to_string()))?;
    }
    Ok(())
}

fn map_incompatible(e: swarm_core::Error) -> CliError {
    match e {
        swarm_core::Error::Incompatible(m) => CliError::Incompatible(m),
        other => CliError::Core(other),
    }
}

pub fn run_eval(args: &EvalArgs) -> Result<EvalSummary, CliError> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let seeds: Vec<u64> = parse_list("seeds", &args.seeds)?;
    let targets: Vec<usize> = parse_list("targets", &args.targets)?;
    if args.episodes == 0 {
        return Err(CliError::Config("--episodes must be positive".into()));
    }

    // The checkpoint's scenario is the base; flags and `--set` adjust it.
    let base = RunConfig {
        scenario: ckpt.scenario.clone(),
        ..RunConfig::default()
    };
    let mut base_pairs = parse_pairs(&base.to_text())?;
    base_pairs.retain(|(k, _)| !k.starts_with("arch.") || k == "arch.type");
    let mut ov = args.overrides.clone();
    let declared_arch = ov.arch.take();
    let mut cfg = RunConfig::from_pairs(&ov.pairs(base_pairs)?)?;
    if let Some(a) = &declared_arch {
        let arch = Arch::parse(a).ok_or_else(|| CliError::Config(format!("unknown architecture {a:?}")))?;
        require_arch(&ckpt.controllers, arch)?;
        cfg.arch_type = arch;
    }
    let scenario = cfg.scenario.clone();
    let out = resolve_out(args.out.as_deref().unwrap_or(&PathBuf::from("runs").join(format!(
        "eval-{}-{}",
        args.protocol.tag(),
        scenario.descriptor()
    ))));

    // Protocol inputs are validated before any output is written.
    let opponent = match (args.protocol, &args.opponent) {
        (Protocol::CrossVal, Some(p)) => Some(Checkpoint::load(p)?),
        (Protocol::CrossVal, None) => {
            return Err(CliError::Config("cross-val needs --opponent <checkpoint>".into()));
        }
        _ => None,
    };
    match args.protocol {
        Protocol::ZeroShot => {
            if scenario.kind != ScenarioKind::Spread {
                return Err(CliError::Config("zero-shot scaling is defined on Spread".into()));
            }
        }
        Protocol::CrossVal => {
            if scenario.kind != ScenarioKind::TagOcclusion {
                return Err(CliError::Config("cross-validation is defined on Tag".into()));
            }
        }
        _ => check_controllers(&ckpt.controllers, &scenario)?,
    }

    let _lock = DirLock::acquire(&out)?;
    let mut echo = cfg.to_text();
    let _ = writeln!(echo, "# eval.protocol = {}", args.protocol.tag());
    let _ = writeln!(echo, "# eval.checkpoint = {}", args.checkpoint.display());
    let _ = writeln!(echo, "# eval.episodes = {}", args.episodes);
    let _ = writeln!(echo, "# eval.seeds = {}", args.seeds);
    if args.protocol == Protocol::ZeroShot {
        let _ = writeln!(echo, "# eval.targets = {}", args.targets);
    }
    write_atomic(&out.join("eval.cfg"), echo.as_bytes())?;

    let prov = |c: &Checkpoint| Provenance::new(&c.controllers, c.scenario.descriptor(), c.step);
    // Evaluated checkpoint file, for trajectory export.
    let mut evaluated: (PathBuf, Checkpoint) = (args.checkpoint.clone(), ckpt.clone());
    let reports: Vec<LabelledReport> = match args.protocol {
        Protocol::Basic => vec![LabelledReport {
            label: "basic".into(),
            report: evaluate(&ckpt.controllers, &scenario, args.episodes, &seeds, prov(&ckpt))?,
        }],
        Protocol::ZeroShot => {
            let rs = zero_shot_scale(
                &ckpt.controllers,
                &scenario,
                &targets,
                args.episodes,
                &seeds,
                &prov(&ckpt),
            )
            .map_err(map_incompatible)?;
            targets
                .iter()
                .zip(rs)
                .map(|(n, report)| LabelledReport {
                    label: format!("n={n}"),
                    report,
                })
                .collect()
        }
        Protocol::Ood => ood_eval(&ckpt.controllers, &scenario, args.episodes, &seeds, &prov(&ckpt))?
            .into_iter()
            .map(|report| LabelledReport {
                label: format!("init={}", report.scenario.rsplit('-').next().unwrap_or_default()),
                report,
            })
            .collect(),
        Protocol::Curriculum => {
            let scl = evaluate(&ckpt.controllers, &scenario, args.episodes, &seeds, prov(&ckpt))?;
            let fine_cfg = swarm_core::marl::TrainConfig {
                seed: derive_seed(cfg.train.seed, 1),
                ..cfg.train.clone()
            };
            let people = ckpt
                .controllers
                .iter()
                .map(|c| match c {
                    Controller::Policy(p) => Ok(Participant::learner(p.clone())),
                    other => Ok(Participant::frozen(other.clone())),
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let mut trainer = Trainer::new(fine_cfg, scenario.clone(), people)?;
            while !trainer.is_finished() {
                trainer.update()?;
            }
            let path = out.join("finetuned.ckpt");
            Checkpoint {
                scenario: scenario.clone(),
                step: ckpt.step + trainer.steps_done(),
                controllers: trainer.controllers(),
            }
            .save(&path)?;
            write_atomic(
                &out.join("finetune_metrics.csv"),
                metrics_csv(trainer.metrics()).as_bytes(),
            )?;
            let fine = Checkpoint::load(&path)?;
            let mut p = prov(&fine);
            p.trained_on = format!("{} then {}", ckpt.scenario.descriptor(), scenario.descriptor());
            let curr = evaluate(&fine.controllers, &scenario, args.episodes, &seeds, p)?;
            evaluated = (path, fine);
            vec![
                LabelledReport {
                    label: "scl".into(),
                    report: scl,
                },
                LabelledReport {
                    label: "curr".into(),
                    report: curr,
                },
            ]
        }
        Protocol::CrossVal => {
            let opp = opponent.expect("checked above");
            let pick = |c: &Checkpoint, role: Role| {
                c.controllers
                    .iter()
                    .find(|x| x.role() == role)
                    .cloned()
                    .ok_or_else(|| CliError::Incompatible(format!("checkpoint has no {} controller", role.tag())))
            };
            let controllers = vec![pick(&ckpt, Role::Pursuer)?, pick(&opp, Role::Evader)?];
            check_controllers(&controllers, &scenario)?;
            let combined = Checkpoint {
                scenario: scenario.clone(),
                step: ckpt.step,
                controllers,
            };
            let path = out.join("cross-val.ckpt");
            combined.save(&path)?;
            let report = evaluate(&combined.controllers, &scenario, args.episodes, &seeds, {
                let mut p = prov(&combined);
                p.trained_on = format!(
                    "pursuers {}, evaders {}",
                    ckpt.scenario.descriptor(),
                    opp.scenario.descriptor()
                );
                p
            })?;
            evaluated = (path, combined);
            vec![LabelledReport {
                label: format!("cross-val {}", controllers_label(&evaluated.1.controllers)),
                report,
            }]
        }
    };

    let refs: Vec<(String, &EvalReport)> = reports.iter().map(|r| (r.label.clone(), &r.report)).collect();
    write_atomic(&out.join("report.csv"), reports_csv(&refs).as_bytes())?;
    write_atomic(
        &out.join("report.json"),
        serde_json::to_string_pretty(&reports)
            .expect("reports serialise")
            .as_bytes(),
    )?;

    let mut trajectories = Vec::new();
    if args.export_trajectories {
        let (path, ck) = &evaluated;
        for &seed in &seeds {
            for k in 0..args.episodes {
                let file = out.join("trajectories").join(format!("seed{seed}-ep{k:04}.jsonl"));
                trajectory::export(&file, path, ck, &scenario, episode_seed(seed, k))?;
                trajectories.push(file);
            }
        }
    }
    Ok(EvalSummary {
        out,
        protocol: args.protocol,
        reports,
        trajectories,
    })
}

pub fn run_check(args: &CheckArgs) -> Result<Vec<SuiteReport>, CliError> {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(&args.suite).ok_or_else(|| {
            CliError::Config(format!(
                "unknown suite {:?}; expected one of equivariance, gradients, physics, gae, attention, all",
                args.suite
            ))
        })?]
    };
    suites.into_iter().map(|s| run_suite(s, args.seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(f: impl FnOnce(&mut Overrides)) -> Overrides {
        let mut o = Overrides::default();
        f(&mut o);
        o
    }

    #[test]
    fn flags_equal_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "scenario.kind = spread\nscenario.agents = 3\narch.type = mlp\n").unwrap();
        let from_flags = ov(|o| {
            o.arch = Some("mlp".into());
            o.scenario = Some("spread".into());
            o.agents = Some(3);
        })
        .resolve()
        .unwrap();
        let from_file = ov(|o| o.config = Some(file.clone())).resolve().unwrap();
        assert_eq!(from_flags, from_file);
    }

    #[test]
    fn later_sources_win() {
        let c = ov(|o| {
            o.scenario = Some("spread".into());
            o.agents = Some(5);
            o.set = vec!["scenario.agents=4".into(), "scenario.landmarks=4".into()];
        })
        .resolve()
        .unwrap();
        assert_eq!(c.scenario.agents, 4);
        let t = ov(|o| {
            o.scenario = Some("tag".into());
            o.agents = Some(4);
        })
        .resolve()
        .unwrap();
        assert_eq!(t.scenario.pursuers, 4);
    }

    #[test]
    fn scenario_is_required() {
        assert!(matches!(Overrides::default().resolve(), Err(CliError::Config(_))));
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<usize>("t", "2,3, 5,6").unwrap(), vec![2, 3, 5, 6]);
        assert!(parse_list::<usize>("t", "2,x").is_err());
        assert!(parse_list::<usize>("t", "").is_err());
    }
}
