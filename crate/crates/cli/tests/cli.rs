use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swarm_cli::checkpoint::sha256_hex;
use swarm_cli::{Checkpoint, RunConfig};

const TINY: &[&str] = &[
    "--set",
    "train.total_steps=1250",
    "--set",
    "train.ppo_epochs=1",
    "--set",
    "train.eval_episodes=2",
    "--set",
    "arch.d_model=8",
    "--set",
    "arch.heads=2",
    "--set",
    "arch.d_ff=8",
    "--set",
    "arch.hidden=8",
];

fn swarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarm"))
        .args(args)
        .env_remove("SWARM_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--out", s(&out)];
    args.extend_from_slice(extra);
    args.extend_from_slice(TINY);
    ok(&swarm(&args));
    out
}

#[test]
fn train_writes_checkpoint_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("spread3.cfg");
    std::fs::write(
        &cfg,
        "scenario.kind = spread\nscenario.agents = 3\ntrain.checkpoint_every = 1\n",
    )
    .unwrap();
    let out = train(dir.path(), "run", &["--config", s(&cfg), "--seed", "7"]);
    assert!(out.join("checkpoints/final.ckpt").is_file());
    assert!(out.join("checkpoints/update-00001.ckpt").is_file());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3, "header plus one row per update");
    assert!(!out.join(".swarm.lock").exists());

    // The echoed config is complete: training from it reproduces the run.
    let echo = std::fs::read_to_string(out.join("config.cfg")).unwrap();
    let resolved = RunConfig::parse(&echo).unwrap();
    assert_eq!(resolved.train.seed, 7);
    assert_eq!(resolved.train.total_steps, 1250);
    let again = dir.path().join("again");
    ok(&swarm(&[
        "train",
        "--out",
        s(&again),
        "--config",
        s(&out.join("config.cfg")),
    ]));
    assert_eq!(std::fs::read(again.join("metrics.csv")).unwrap(), metrics.as_bytes());
    assert_eq!(
        std::fs::read(again.join("checkpoints/final.ckpt")).unwrap(),
        std::fs::read(out.join("checkpoints/final.ckpt")).unwrap()
    );
}

#[test]
fn flags_match_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "scenario.kind = spread\nscenario.agents = 3\narch.type = mlp\n").unwrap();
    let a = train(dir.path(), "a", &["--config", s(&cfg)]);
    let b = train(
        dir.path(),
        "b",
        &["--arch", "mlp", "--scenario", "spread", "--agents", "3"],
    );
    assert_eq!(
        std::fs::read_to_string(a.join("config.cfg")).unwrap(),
        std::fs::read_to_string(b.join("config.cfg")).unwrap()
    );
    assert_eq!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn malformed_config_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        "scenario.kind = spread\nthis line has no equals sign\n",
        "scenario.kind = spread\nscenario.colour = blue\ntrain.speed = 3\n",
        "scenario.kind = spread\ntrain.lr = fast\n",
        "train.lr = 0.001\n",
    ]
    .iter()
    .enumerate()
    {
        let cfg = dir.path().join(format!("bad{i}.cfg"));
        std::fs::write(&cfg, text).unwrap();
        let out = dir.path().join(format!("out{i}"));
        let r = swarm(&["train", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(r.status.code(), Some(2), "{text:?}");
        assert!(!out.exists(), "{text:?} created outputs");
        if i == 1 {
            let err = String::from_utf8_lossy(&r.stderr);
            assert!(err.contains("scenario.colour") && err.contains("train.speed"), "{err}");
        }
    }
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("busy");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".swarm.lock"), "1").unwrap();
    let mut args = vec!["train", "--scenario", "spread", "--out", s(&out)];
    args.extend_from_slice(TINY);
    assert_eq!(swarm(&args).status.code(), Some(3));
    assert!(!out.join("metrics.csv").exists());
}

#[test]
fn output_root_applies_to_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--scenario", "spread", "--out", "rel"];
    args.extend_from_slice(TINY);
    let r = Command::new(env!("CARGO_BIN_EXE_swarm"))
        .args(&args)
        .env("SWARM_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    ok(&r);
    assert!(dir.path().join("rel/checkpoints/final.ckpt").is_file());
}

#[test]
fn eval_is_deterministic_and_zero_shot_has_one_row_per_size() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "lego", &["--scenario", "spread", "--agents", "4"]);
    let ckpt = run.join("checkpoints/final.ckpt");
    let hash = sha256_hex(&std::fs::read(&ckpt).unwrap());
    let eval = |name: &str, protocol: &str| {
        let out = dir.path().join(name);
        ok(&swarm(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--protocol",
            protocol,
            "--targets",
            "2,3,5,6",
            "--episodes",
            "3",
            "--seeds",
            "0,1",
            "--out",
            s(&out),
        ]));
        out
    };
    let a = eval("e1", "basic");
    let b = eval("e2", "basic");
    for f in ["report.json", "report.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
    let z = eval("z", "zero-shot");
    let csv = std::fs::read_to_string(z.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    for (line, n) in csv.lines().skip(1).zip([2, 3, 5, 6]) {
        assert!(line.starts_with(&format!("n={n},spread-n{n}-")), "{line}");
    }
    let o = eval("o", "ood");
    // Trained on uniform: the training init and the right-side init.
    assert_eq!(
        std::fs::read_to_string(o.join("report.csv")).unwrap().lines().count(),
        3
    );
    assert_eq!(
        sha256_hex(&std::fs::read(&ckpt).unwrap()),
        hash,
        "evaluation touched the checkpoint"
    );
}

#[test]
fn fixed_size_architectures_are_reported_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(
        dir.path(),
        "mlp",
        &["--scenario", "spread", "--agents", "4", "--arch", "mlp"],
    );
    let ckpt = run.join("checkpoints/final.ckpt");
    let out = dir.path().join("z");
    let r = swarm(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--protocol",
        "zero-shot",
        "--episodes",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.status.code(), Some(6), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("incompatible"));
    let r = swarm(&["eval", "--checkpoint", s(&ckpt), "--arch", "lego", "--episodes", "1"]);
    assert_eq!(r.status.code(), Some(6));
}

#[test]
fn corrupt_checkpoint_is_a_checksum_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "r", &["--scenario", "spread"]);
    let ckpt = run.join("checkpoints/final.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let k = bytes.len() - 100;
    bytes[k] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, &bytes).unwrap();
    let r = swarm(&[
        "eval",
        "--checkpoint",
        s(&bad),
        "--episodes",
        "1",
        "--out",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(r.status.code(), Some(5));
    assert!(!dir.path().join("e").exists());
}

#[test]
fn tag_trajectories_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(
        dir.path(),
        "tag",
        &["--scenario", "tag", "--set", "arch.evader=scripted:flee"],
    );
    let ckpt = run.join("checkpoints/final.ckpt");
    let c = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(c.to_bytes(), std::fs::read(&ckpt).unwrap());
    let out = dir.path().join("eval");
    ok(&swarm(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--episodes",
        "2",
        "--seeds",
        "3",
        "--export-trajectories",
        "--out",
        s(&out),
    ]));
    let mut files: Vec<PathBuf> = std::fs::read_dir(out.join("trajectories"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    assert_eq!(files.len(), 2);
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().count(), 100);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["positions"].as_array().unwrap().len(), 3 + 2 + 2);
        assert_eq!(first["actions"].as_array().unwrap().len(), 5);
        ok(&swarm(&["replay", s(f)]));
    }

    // A tampered trajectory is detected.
    let f = &files[0];
    let text = std::fs::read_to_string(f).unwrap();
    let pos = text.find("\"t\":50").unwrap();
    let line_end = pos + text[pos..].find('\n').unwrap();
    let mut lines = text[..pos].to_string();
    lines.push_str(&text[pos..line_end].replacen("\"t\":50", "\"t\":51", 1));
    lines.push_str(&text[line_end..]);
    std::fs::write(f, lines).unwrap();
    let r = swarm(&["replay", s(f)]);
    assert_eq!(r.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 51"));
}

#[test]
fn check_reports_deviations() {
    let r = swarm(&["check", "gae", "--seed", "3"]);
    ok(&r);
    let text = String::from_utf8_lossy(&r.stdout);
    assert!(text.contains("max deviation") && text.contains("seed 3"), "{text}");
    assert_eq!(swarm(&["check", "nonsense"]).status.code(), Some(2));
}

#[test]
fn curriculum_and_cross_validation_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "n3", &["--scenario", "spread", "--agents", "3"]);
    let ckpt = run.join("checkpoints/final.ckpt");
    let out = dir.path().join("curr");
    ok(&swarm(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--protocol",
        "curriculum",
        "--agents",
        "5",
        "--steps",
        "625",
        "--set",
        "train.ppo_epochs=1",
        "--episodes",
        "2",
        "--out",
        s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(
        csv.contains("\nscl,spread-n5") && csv.contains("\ncurr,spread-n5"),
        "{csv}"
    );
    assert_eq!(
        Checkpoint::load(&out.join("finetuned.ckpt")).unwrap().scenario.agents,
        5
    );

    let lego = train(dir.path(), "tl", &["--scenario", "tag"]);
    let mlp = train(dir.path(), "tm", &["--scenario", "tag", "--arch", "mlp"]);
    let out = dir.path().join("xv");
    ok(&swarm(&[
        "eval",
        "--checkpoint",
        s(&lego.join("checkpoints/final.ckpt")),
        "--protocol",
        "cross-val",
        "--opponent",
        s(&mlp.join("checkpoints/final.ckpt")),
        "--episodes",
        "1",
        "--out",
        s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.contains("pursuer=lego evader=mlp"), "{csv}");
    let r = swarm(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--protocol",
        "cross-val",
        "--episodes",
        "1",
    ]);
    assert_eq!(r.status.code(), Some(2));
}
