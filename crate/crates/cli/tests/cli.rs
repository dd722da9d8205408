use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use minidarts::bilevel::PRESETS;

fn minidarts(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minidarts"))
        .args(args)
        .env("MINIDARTS_OUT", out_root)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const TINY: &str = r#"{
  "overrides": {"total_epochs": 3, "batch_size": 32},
  "supernet": {"feature_dim": 6},
  "dataset": {"n_samples": 96},
  "output_dir": "run"
}"#;

#[test]
fn every_preset_runs_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    // presets with long warmups need more epochs than the tiny config gives
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"overrides": {"batch_size": 48}, "supernet": {"feature_dim": 4}, "dataset": {"n_samples": 48}, "output_dir": "run"}"#,
    );
    for preset in PRESETS {
        let o = minidarts(
            &["search", "--config", &cfg, "--preset", preset],
            dir.path(),
        );
        assert!(
            o.status.success(),
            "{preset}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let manifest: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("run/manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["run"]["train"]["scheme_name"], *preset);
    }
}

#[test]
fn resolved_preset_rates_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    for (preset, w, a) in [("baseline", 0.025, 0.0003), ("ex_darts", 0.0003, 0.025)] {
        assert!(minidarts(
            &["search", "--config", &cfg, "--preset", preset],
            dir.path()
        )
        .status
        .success());
        let m: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join("run/manifest.json")).unwrap(),
        )
        .unwrap();
        let train = &m["run"]["train"];
        let initial =
            |s: &serde_json::Value| s.get("lr_max").or(s.get("lr")).unwrap().as_f64().unwrap();
        assert_eq!(
            (initial(&train["weight_lr"]), initial(&train["param_lr"])),
            (w, a)
        );
        assert_eq!(train["param_weight_decay"], 0.001);
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for root in [&a, &b] {
        assert!(
            minidarts(&["search", "--config", &cfg, "--seed", "4"], root)
                .status
                .success()
        );
    }
    for f in ["metrics.csv", "magnitudes.csv", "checkpoints/epoch_3.json"] {
        assert_eq!(
            fs::read(a.join("run").join(f)).unwrap(),
            fs::read(b.join("run").join(f)).unwrap(),
            "{f}"
        );
    }
    let header = fs::read_to_string(a.join("run/metrics.csv")).unwrap();
    assert!(header.starts_with("epoch,lr_w,lr_a,train_loss,train_acc,val_loss,val_acc\n"));
}

#[test]
fn derive_outputs_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    assert!(minidarts(&["search", "--config", &cfg], dir.path())
        .status
        .success());
    let run = dir.path().join("run");
    let run_s = run.to_string_lossy();

    let o = minidarts(
        &[
            "derive",
            "--run",
            &run_s,
            "--criteria",
            "peak:op_large,sc:2",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(run.join("genotype_peak_op_large.json").exists());
    assert!(run.join("genotype_sc_2.json").exists());
    let g: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("genotype_sc_2.json")).unwrap()).unwrap();
    assert_eq!(g.as_array().unwrap().len(), 6);
    assert!(g[0]["edge"].is_array() && g[0]["op"].is_string());

    let empty = tempfile::tempdir().unwrap();
    for f in ["manifest.json", "magnitudes.csv"] {
        fs::copy(run.join(f), empty.path().join(f)).unwrap();
    }
    let o = minidarts(
        &[
            "derive",
            "--run",
            &empty.path().to_string_lossy(),
            "--criteria",
            "",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert_eq!(fs::read_dir(empty.path()).unwrap().count(), 2);

    let o = minidarts(
        &[
            "derive",
            "--run",
            &empty.path().to_string_lossy(),
            "--criteria",
            "sc:1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4));
    let o = minidarts(
        &["derive", "--run", &run_s, "--criteria", "peak:conv"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write_config(dir.path(), "b.json", "{ not json");
    assert_eq!(
        minidarts(&["search", "--config", &broken], dir.path())
            .status
            .code(),
        Some(2)
    );
    let cfg = write_config(dir.path(), "c.json", TINY);
    let o = minidarts(
        &["search", "--config", &cfg, "--preset", "darts_v3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown preset"));
    let missing = dir.path().join("nope.json");
    assert_eq!(
        minidarts(
            &["search", "--config", &missing.to_string_lossy()],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn diverging_run_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"overrides": {"total_epochs": 3, "weight_lr": {"kind": "constant", "lr": 1e200}},
            "supernet": {"feature_dim": 6}, "dataset": {"n_samples": 96}, "output_dir": "run"}"#,
    );
    let o = minidarts(&["search", "--config", &cfg], dir.path());
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
}

#[test]
fn seeds_and_resume_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    assert!(
        minidarts(&["search", "--config", &cfg, "--seeds", "0,1"], dir.path())
            .status
            .success()
    );
    assert!(dir.path().join("run/seeds_summary.csv").exists());
    let full = fs::read(dir.path().join("run/seed_0/checkpoints/epoch_3.json")).unwrap();

    assert!(
        minidarts(&["search", "--config", &cfg, "--seed", "0"], dir.path())
            .status
            .success()
    );
    assert!(minidarts(
        &["search", "--config", &cfg, "--resume-from", "1"],
        dir.path()
    )
    .status
    .success());
    assert_eq!(
        fs::read(dir.path().join("run/checkpoints/epoch_3.json")).unwrap(),
        full
    );
}

#[test]
fn dynamics_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = minidarts(&["dynamics"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o), "lr,t2\n0.001,34\n0.01,44\n");

    let out = dir.path().join("dyn");
    let run = |_: usize| {
        let o = minidarts(
            &[
                "dynamics",
                "--lr",
                "0.001,0.002",
                "--sweep-conventions",
                "--out",
                &out.to_string_lossy(),
            ],
            dir.path(),
        );
        assert!(o.status.success());
        (stdout(&o), fs::read(out.join("sweep_report.json")).unwrap())
    };
    let first = run(0);
    assert_eq!(first, run(1));
    assert!(first.0.contains("frozen: Descent FirstCrossing HeavyBall"));
    assert!(out.join("trajectory_lr_0.002.csv").exists());
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = minidarts(&["gradcheck", "--trials", "0"], dir.path());
    assert!(o.status.success());
    let o = minidarts(&["gradcheck", "--trials", "3", "--seed", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = minidarts(
        &["gradcheck", "--trials", "1", "--fault", "relu"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains(".w"));
}
