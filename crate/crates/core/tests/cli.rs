//! End-to-end tests of the `bongard` binary: every subcommand, config
//! precedence, determinism, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bongard"))
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "command failed ({:?}):\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn generate(dir: &Path, family: &str, count: usize, seed: u64, leading: bool) {
    let mut cmd = bin();
    cmd.args(["generate", "--concept", family])
        .args(["--count", &count.to_string()])
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(dir);
    if leading {
        cmd.arg("--leading");
    }
    ok(&cmd.output().unwrap());
}

#[test]
fn generate_writes_loadable_byte_identical_datasets() {
    let tmp = tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    generate(&a, "fill", 3, 9, false);
    generate(&b, "fill", 3, 9, false);
    for i in 0..3 {
        assert!(a.join(format!("{i}/concept.json")).is_file());
        for f in 0..12 {
            let fa = fs::read(a.join(format!("{i}/{f:02}.pbm"))).unwrap();
            let fb = fs::read(b.join(format!("{i}/{f:02}.pbm"))).unwrap();
            assert_eq!(fa, fb);
        }
        let bp = bongard::bp::load_bp(&a.join(i.to_string())).unwrap();
        assert_eq!(bp.left().len(), 6);
    }
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn generate_rejects_unknown_family_with_config_exit_code() {
    let tmp = tempdir().unwrap();
    let out = bin()
        .args(["generate", "--concept", "nope", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn tiny_train(data: &Path, out_dir: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(["train", "--episodes", "16", "--episode-length", "36"])
        .args(["--seeds", "3", "--train-ids", "0,1,2,3"])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out_dir)
        .args(extra);
    cmd.output().unwrap()
}

#[test]
fn train_writes_csv_checkpoint_and_metadata() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 2, false);
    let run = tmp.path().join("run");
    ok(&tiny_train(&data, &run, &[]));

    let csv = fs::read_to_string(run.join("seed3.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# schema=1"));
    assert!(lines.next().unwrap().starts_with("seed,episode,steps,"));
    assert_eq!(csv.lines().count(), 2 + 16); // schema + header + one row per episode

    assert!(run.join("seed3.checkpoint.json").is_file());
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("seed3.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 3);
    assert_eq!(meta["config"]["episodes"], 16);
    assert!(meta["wall_seconds"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_configs_produce_byte_identical_csvs() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 5, false);
    let run_a = tmp.path().join("a");
    let run_b = tmp.path().join("b");
    ok(&tiny_train(&data, &run_a, &[]));
    ok(&tiny_train(&data, &run_b, &[]));
    let a = fs::read(run_a.join("seed3.csv")).unwrap();
    let b = fs::read(run_b.join("seed3.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn metadata_config_replays_the_run_bit_exactly() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 6, false);
    let run = tmp.path().join("orig");
    ok(&tiny_train(&data, &run, &[]));

    // Re-run purely from the recorded metadata config.
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("seed3.meta.json")).unwrap()).unwrap();
    let mut config = meta["config"].clone();
    let replay_dir = tmp.path().join("replay");
    config["out_dir"] = serde_json::Value::String(replay_dir.display().to_string());
    let config_path = tmp.path().join("replay.json");
    fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&config_path)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(
        fs::read(run.join("seed3.csv")).unwrap(),
        fs::read(replay_dir.join("seed3.csv")).unwrap()
    );
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 7, false);
    let config_path = tmp.path().join("config.json");
    fs::write(
        &config_path,
        r#"{"episodes": 4, "episode_length": 20, "seeds": [9], "train_ids": [0,1]}"#,
    )
    .unwrap();
    let run = tmp.path().join("run");
    let out = bin()
        .args(["train", "--config"])
        .arg(&config_path)
        .args(["--episodes", "6"]) // flag overrides file
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    ok(&out);
    let csv = fs::read_to_string(run.join("seed9.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 6);
    let row = csv.lines().nth(2).unwrap();
    // episode_length 20 came from the file.
    assert!(row.starts_with("9,0,20,"));
}

#[test]
fn train_rejects_overlapping_splits_with_exit_1() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 8, false);
    let out = bin()
        .args(["train", "--train-ids", "0,1", "--eval-ids", "1,2"])
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_is_a_data_error_exit_2() {
    let tmp = tempdir().unwrap();
    let out = bin()
        .args(["train", "--episodes", "2"])
        .arg("--data")
        .arg(tmp.path().join("nonexistent"))
        .arg("--out")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bongard_data_env_var_is_the_default_root() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 10, false);
    let run = tmp.path().join("run");
    let out = bin()
        .args(["train", "--episodes", "4", "--episode-length", "20"])
        .args(["--seeds", "1", "--train-ids", "0,1"])
        .arg("--out")
        .arg(&run)
        .env("BONGARD_DATA", &data)
        .output()
        .unwrap();
    ok(&out);
    assert!(run.join("seed1.csv").is_file());
}

#[test]
fn eval_random_checkpoint_near_chance_oracle_exact_and_deterministic() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 20, 11, false);

    // Random-initialized checkpoint written directly. The MLP encoder keeps
    // pair states distinct (the siamese path maps every self-pair to zero
    // features, which would stack the tie-break onto one action).
    let spec =
        bongard::agents::PolicySpec::new(bongard::agents::EncoderKind::Mlp, 16, 144, 1.0, 99)
            .unwrap();
    let checkpoint = serde_json::json!({
        "format_version": 1,
        "algorithm": "ppo",
        "episode_length": 144,
        "spec": spec,
    });
    let ck_path = tmp.path().join("random.checkpoint.json");
    fs::write(&ck_path, serde_json::to_string(&checkpoint).unwrap()).unwrap();

    let eval = |oracle: bool| -> serde_json::Value {
        let mut cmd = bin();
        cmd.arg("eval")
            .arg("--checkpoint")
            .arg(&ck_path)
            .arg("--data")
            .arg(&data);
        if oracle {
            cmd.arg("--oracle");
        }
        let out = cmd.output().unwrap();
        ok(&out);
        serde_json::from_slice(&out.stdout).unwrap()
    };

    let report = eval(false);
    let acc = report["accuracy"].as_f64().unwrap();
    assert!(
        (acc - 0.5).abs() <= 0.05,
        "random checkpoint accuracy {acc}"
    );
    assert_eq!(report["per_bp"].as_array().unwrap().len(), 20);

    let again = eval(false);
    assert_eq!(report, again);

    let oracle = eval(true);
    assert_eq!(oracle["accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(oracle["mean_return"].as_f64().unwrap(), 144.0);
}

#[test]
fn eval_rejects_checkpoint_version_mismatch() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 2, 12, false);
    let spec =
        bongard::agents::PolicySpec::new(bongard::agents::EncoderKind::Mlp, 16, 144, 1.0, 1)
            .unwrap();
    let checkpoint = serde_json::json!({
        "format_version": 42,
        "algorithm": "ppo",
        "episode_length": 144,
        "spec": spec,
    });
    let ck_path = tmp.path().join("bad.checkpoint.json");
    fs::write(&ck_path, serde_json::to_string(&checkpoint).unwrap()).unwrap();
    let out = bin()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ck_path)
        .arg("--data")
        .arg(&data)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bounds_verify_passes_deterministically_and_handles_zero_trials() {
    let run = |args: &[&str]| {
        let out = bin().arg("bounds-verify").args(args).output().unwrap();
        (out.status.code(), String::from_utf8(out.stdout).unwrap())
    };
    let (code, report) = run(&["--trials", "3000", "--seed", "3"]);
    assert_eq!(code, Some(0));
    let parsed: serde_json::Value = serde_json::from_str(report.trim()).unwrap();
    assert_eq!(parsed["containment_violations"], 0);

    let (_, again) = run(&["--trials", "3000", "--seed", "3"]);
    assert_eq!(report, again);

    let (code, empty) = run(&["--trials", "0"]);
    assert_eq!(code, Some(0));
    let parsed: serde_json::Value = serde_json::from_str(empty.trim()).unwrap();
    assert_eq!(parsed["trials"], 0);
}

#[test]
fn report_aggregates_runs_into_csv_and_svg() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, "mixed", 4, 13, false);
    let run_a = tmp.path().join("alpha");
    let run_b = tmp.path().join("beta");
    ok(&tiny_train(&data, &run_a, &[]));
    ok(&tiny_train(&data, &run_b, &["--model", "mlp"]));

    let out_base = tmp.path().join("report");
    let out = bin()
        .arg("report")
        .arg("--out")
        .arg(&out_base)
        .args(["--window", "5"])
        .arg(&run_a)
        .arg(&run_b)
        .output()
        .unwrap();
    ok(&out);
    let svg = fs::read_to_string(out_base.with_extension("svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains("class=\"baseline\""));
    let csv = fs::read_to_string(out_base.with_extension("csv")).unwrap();
    assert!(csv.starts_with("episode,alpha_mean,alpha_std,beta_mean,beta_std"));
    // Single-seed runs: std column all zeros.
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "0");
        assert_eq!(fields[4], "0");
    }
}
