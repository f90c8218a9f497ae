use std::path::Path;
use std::process::{Command, Output};

use antmute::experiment::ExperimentConfig;

fn antmute(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_antmute"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = antmute(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) {
    let mut cfg = ExperimentConfig::desk();
    cfg.dataset.drops = 12;
    cfg.dataset.slots_per_drop = 2;
    cfg.nam.symmetric.epochs = 1;
    cfg.nam.asymmetric.epochs = 1;
    cfg.heuristics.slots_per_drop = Some(1);
    cfg.save(&dir.join("cfg.json")).unwrap();
}

fn with<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    [&["--config", "cfg.json"][..], extra].concat()
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_config(d);

    ok(d, &with(&["gen-data", "--out", "data.bin"]));
    ok(d, &with(&["train", "--phase", "symmetric", "--data", "data.bin", "--out", "sym.json"]));
    ok(d, &with(&[
        "train", "--phase", "asymmetric", "--data", "data.bin", "--init", "sym.json", "--out", "asym.json",
    ]));
    for m in ["sym", "asym"] {
        let model = format!("{m}.json");
        let out = format!("metrics_{m}.json");
        ok(d, &with(&["eval", "--data", "data.bin", "--model", &model, "--out", &out]));
    }
    ok(d, &with(&["run-heuristics", "--model", "asym.json", "--out", "heur.json"]));
    let listed = ok(d, &with(&[
        "report", "--heuristics", "heur.json", "--metrics", "metrics_sym.json", "metrics_asym.json", "--out", "rep",
    ]));
    assert!(listed.lines().count() > 0);
    for line in listed.lines() {
        assert!(Path::new(line).exists() || d.join(line).exists(), "{line}");
    }
}

#[test]
fn mismatched_artifacts_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    tiny_config(d);
    ok(d, &with(&["gen-data", "--out", "data.bin"]));
    ok(d, &with(&["train", "--phase", "symmetric", "--data", "data.bin", "--out", "sym.json"]));
    ok(d, &with(&["eval", "--data", "data.bin", "--model", "sym.json", "--out", "m.json"]));
    ok(d, &with(&["run-heuristics", "--out", "heur.json"]));

    // the dataset was generated under a different seed set
    let out = antmute(d, &with(&["--seed", "5", "eval", "--data", "data.bin", "--model", "sym.json", "--out", "x.json"]));
    assert!(!out.status.success());

    let out = antmute(d, &with(&["--seed", "5", "report", "--heuristics", "heur.json", "--metrics", "m.json"]));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let out = antmute(d, &with(&["train", "--phase", "asymmetric", "--data", "data.bin", "--out", "a.json"]));
    assert!(!out.status.success());
}

#[test]
fn config_and_complexity_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let json = ok(d, &["config"]);
    let cfg: ExperimentConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(cfg, ExperimentConfig::desk());

    let text = ok(d, &["complexity-report"]);
    assert!(text.contains("greedy"));
    ok(d, &["complexity-report", "--out", "fpo"]);
    for f in ["fpo.json", "fpo.txt", "fpo.csv"] {
        assert!(d.join("fpo").join(f).is_file(), "{f}");
    }

    assert!(!antmute(d, &["--profile", "nonexistent", "config"]).status.success());
    assert!(!antmute(d, &["no-such-command"]).status.success());
}
