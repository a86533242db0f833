use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gwquant(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwquant"))
        .args(args)
        .current_dir(dir)
        .env_remove("GWQUANT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        stdout(&o),
        stderr(&o)
    );
    o
}

fn metric(out: &str, name: &str) -> f64 {
    let key = format!("{name}=");
    out.split_whitespace()
        .find_map(|w| w.strip_prefix(&key))
        .unwrap_or_else(|| panic!("no {name} in {out}"))
        .parse()
        .unwrap()
}

/// Smaller signals and 20 replicates; `di_keys` go into the `[di]` table.
fn small_config(dir: &Path, di_keys: &str) -> String {
    let text =
        format!("[simulation]\nn_replicates = 20\nn_samples = 1200\n[di]\nn_use = 1200\n{di_keys}");
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_one_manifest_row_per_signal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    ok(gwquant(
        &["--config", &cfg, "simulate", "--out", "sim"],
        tmp.path(),
    ));
    let manifest = fs::read_to_string(tmp.path().join("sim/manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("# seed=42"));
    assert_eq!(lines.next(), Some("file,damage,load,replicate,role"));
    assert_eq!(lines.count(), 5 * 4 * 20);
    assert_eq!(
        fs::read_dir(tmp.path().join("sim/signals"))
            .unwrap()
            .count(),
        20
    );
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    ok(gwquant(
        &["--config", &cfg, "run", "--workdir", "a"],
        tmp.path(),
    ));
    ok(gwquant(
        &["--config", &cfg, "run", "--workdir", "b"],
        tmp.path(),
    ));
    ok(gwquant(
        &["--config", &cfg, "--seed", "7", "run", "--workdir", "c"],
        tmp.path(),
    ));
    let a = tree_bytes(&tmp.path().join("a"));
    assert!(a.len() > 20);
    assert_eq!(a, tree_bytes(&tmp.path().join("b")));
    let c = tree_bytes(&tmp.path().join("c"));
    assert_ne!(a, c);
    assert!(c.iter().all(|(_, bytes)| bytes.starts_with(b"# seed=7\n")));
}

#[test]
fn environment_seed_sits_between_flag_and_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    fs::write(
        tmp.path().join("cfg.toml"),
        format!("seed = 5\n{}", fs::read_to_string(&cfg).unwrap()),
    )
    .unwrap();
    let run = |extra: &[&str], env: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_gwquant"));
        cmd.current_dir(tmp.path()).env_remove("GWQUANT_SEED");
        if let Some(v) = env {
            cmd.env("GWQUANT_SEED", v);
        }
        let o = ok(cmd
            .args(["--config", &cfg])
            .args(extra)
            .args(["simulate", "--out", out])
            .output()
            .unwrap());
        assert!(stdout(&o).contains("seed="));
        fs::read_to_string(tmp.path().join(out).join("manifest.csv")).unwrap()
    };
    assert!(run(&[], None, "f").starts_with("# seed=5\n"));
    assert!(run(&[], Some("11"), "e").starts_with("# seed=11\n"));
    assert!(run(&["--seed", "3"], Some("11"), "s").starts_with("# seed=3\n"));
}

#[test]
fn unwritable_output_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("blocker"), "x").unwrap();
    let o = gwquant(&["simulate", "--out", "blocker/sim"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error: kind=io"), "{err}");
    assert!(err.contains("blocker/sim"), "{err}");
}

#[test]
fn train_holds_out_the_stated_share_of_each_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    ok(gwquant(
        &["--config", &cfg, "simulate", "--out", "sim"],
        tmp.path(),
    ));
    ok(gwquant(
        &[
            "--config",
            &cfg,
            "di",
            "--signals",
            "sim",
            "--out",
            "di.csv",
        ],
        tmp.path(),
    ));
    let inputs_before = (
        tree_bytes(&tmp.path().join("sim")),
        fs::read(tmp.path().join("di.csv")).unwrap(),
    );
    let o = ok(gwquant(
        &[
            "--config",
            &cfg,
            "train",
            "--data",
            "di.csv",
            "--train-fraction",
            "0.225",
            "--model-file",
            "m/model.txt",
        ],
        tmp.path(),
    ));
    // ceil(0.225 * 20) = 5 of 20 replicates per state go to training
    let out = stdout(&o);
    assert_eq!(metric(&out, "train_rows"), 100.0);
    assert_eq!(metric(&out, "heldout_rows"), 300.0);
    let held = fs::read_to_string(tmp.path().join("m/heldout.csv")).unwrap();
    assert_eq!(held.lines().filter(|l| !l.starts_with('#')).count(), 301);
    let e = ok(gwquant(
        &[
            "evaluate",
            "--model-file",
            "m/model.txt",
            "--data",
            "m/heldout.csv",
        ],
        tmp.path(),
    ));
    assert_eq!(metric(&stdout(&e), "nmse"), metric(&out, "nmse"));
    ok(gwquant(
        &[
            "--config",
            &cfg,
            "di",
            "--signals",
            "sim/manifest.csv",
            "--out",
            "di2.csv",
        ],
        tmp.path(),
    ));
    let inputs_after = (
        tree_bytes(&tmp.path().join("sim")),
        fs::read(tmp.path().join("di.csv")).unwrap(),
    );
    assert!(inputs_before == inputs_after, "inputs were modified");
    assert_eq!(
        fs::read(tmp.path().join("di2.csv")).unwrap(),
        inputs_after.1
    );
}

#[test]
fn model_schema_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.txt"), "other-model 1\nkind sgpr\n").unwrap();
    let o = gwquant(
        &["predict", "--model-file", "bad.txt", "--test-di", "0.1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("schema"), "{}", stderr(&o));
    fs::write(tmp.path().join("v9.txt"), "gwquant-model 9\nkind sgpr\n").unwrap();
    let o = gwquant(
        &["predict", "--model-file", "v9.txt", "--test-di", "0.1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=schema"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        gwquant(&["predict", "--model-file", "m.txt"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(gwquant(&["frobnicate"], tmp.path()).status.code(), Some(2));
    assert_eq!(
        gwquant(&["run", "--model", "mlp"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bad_config_is_a_domain_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("c.toml"), "[train]\ntrain_fraction = 2.0\n").unwrap();
    let o = gwquant(&["--config", "c.toml", "simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("kind=invalid-argument"));
}

#[test]
fn default_pipeline_fits_well_with_both_models() {
    for model in ["sgpr", "vhgpr"] {
        let tmp = tempfile::tempdir().unwrap();
        let o = ok(gwquant(
            &["run", "--workdir", "w", "--model", model],
            tmp.path(),
        ));
        let out = stdout(&o);
        let nmse = metric(&out, "nmse");
        assert!(nmse < 0.05, "{model}: {out}");
        assert!(metric(&out, "damage_accuracy") >= 0.95, "{model}: {out}");
        for f in [
            "di.csv",
            "model.txt",
            "heldout.csv",
            "report/boxplot_damage.csv",
            "report/boxplot_load.csv",
            "report/predictions.csv",
        ] {
            let text = fs::read_to_string(tmp.path().join("w").join(f)).unwrap();
            assert!(text.starts_with("# seed=42\n"), "{f}");
        }
    }
}

#[test]
fn predict_emits_json_for_single_and_two_state_input() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "policy = \"both\"\n");
    ok(gwquant(
        &["--config", &cfg, "run", "--workdir", "w"],
        tmp.path(),
    ));

    let di: Vec<String> = fs::read_to_string(tmp.path().join("w/heldout.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(di[0], "damage,load,switch,di");
    // a two-state case built from held-out rows of state (2, 1)
    let pick = |switch: &str, d: &str, l: &str| {
        di.iter()
            .find(|r| r.split(',').take(3).eq([d, l, switch]))
            .map(|r| r.rsplit(',').next().unwrap().to_string())
            .unwrap()
    };
    let mut rows = String::from("case,class,ref_damage,ref_load,di\n");
    rows += &format!("x,1,0,1,{}\n", pick("1", "2", "1"));
    rows += &format!("x,2,2,0,{}\n", pick("2", "2", "1"));
    fs::write(tmp.path().join("two.csv"), rows).unwrap();
    let o = ok(gwquant(
        &[
            "predict",
            "--model-file",
            "w/model.txt",
            "--two-state",
            "two.csv",
        ],
        tmp.path(),
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 42);
    let p = &v["predictions"][0];
    assert_eq!(p["case"], "x");
    assert_eq!(p["argmax"]["damage"], 2.0);
    assert_eq!(p["argmax"]["load"], 1.0);

    let o = gwquant(
        &["predict", "--model-file", "w/model.txt", "--test-di", "0.1"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1));

    let one = tempfile::tempdir().unwrap();
    let cfg1 = small_config(one.path(), "");
    ok(gwquant(
        &["--config", &cfg1, "run", "--workdir", "w"],
        one.path(),
    ));
    let row = fs::read_to_string(one.path().join("w/heldout.csv"))
        .unwrap()
        .lines()
        .find(|l| l.starts_with("3,2,"))
        .unwrap()
        .to_string();
    let test_di = row.rsplit(',').next().unwrap().to_string();
    let o = ok(gwquant(
        &[
            "predict",
            "--model-file",
            "w/model.txt",
            "--test-di",
            &test_di,
            "--known-load",
            "2",
            "--grid-refine",
            "1",
        ],
        one.path(),
    ));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["argmax"]["damage"], 3.0);
    // 5 damages with one point between each pair
    assert_eq!(v["probabilities"].as_array().unwrap().len(), 9);
    let total: f64 = v["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["p"].as_f64().unwrap())
        .sum();
    assert!(total > 0.0);
}

#[test]
fn report_from_predictions_matches_report_from_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "");
    ok(gwquant(
        &["--config", &cfg, "run", "--workdir", "w"],
        tmp.path(),
    ));
    ok(gwquant(
        &[
            "--config",
            &cfg,
            "report",
            "--data",
            "w/heldout.csv",
            "--model-file",
            "w/model.txt",
            "--out",
            "r1",
        ],
        tmp.path(),
    ));
    ok(gwquant(
        &[
            "--config",
            &cfg,
            "report",
            "--predictions",
            "r1/predictions.csv",
            "--out",
            "r2",
        ],
        tmp.path(),
    ));
    assert_eq!(
        tree_bytes(&tmp.path().join("r1")),
        tree_bytes(&tmp.path().join("r2"))
    );
    assert_eq!(
        tree_bytes(&tmp.path().join("r1")),
        tree_bytes(&tmp.path().join("w/report"))
    );
    let boxes = fs::read_to_string(tmp.path().join("r1/boxplot_damage.csv")).unwrap();
    assert!(boxes.lines().nth(1).unwrap() == "state,median,q25,q75,lo_whisk,hi_whisk,outliers");
    assert_eq!(boxes.lines().count(), 2 + 20);
}
