use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn segalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dataset(dir: &Path) -> PathBuf {
    let o = segalign(&[
        "proposals",
        "synth",
        "--scenes",
        s(&fixtures().join("demo_scenes.json")),
        "--bank",
        s(&fixtures().join("isaid_bank.json")),
        "-o",
        s(dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("config.json")
}

fn records(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn bank_validate_and_build() {
    let bank = fixtures().join("isaid_bank.json");
    let o = segalign(&["bank", "validate", s(&bank)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("15 classes"));

    let o = segalign(&["bank", "build", s(&bank), "--augment", "none"]);
    assert!(o.status.success());
    let prompts: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(prompts.as_array().unwrap().len(), 15);
    assert_eq!(prompts[0]["text"], "Top view of a plane");
}

#[test]
fn bad_bank_is_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bank.json");
    std::fs::write(&p, r#"{"classes":[{"id":0,"name":""}]}"#).unwrap();
    let o = segalign(&["bank", "validate", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("classes[0].name"));
}

#[test]
fn ovss_and_res_runs_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    let out = tmp.path().join("runs");
    let o = segalign(&["ovss", "run", "--config", s(&cfg), "--out", s(&out), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("overall"));
    let o = segalign(&["res", "run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("res_eval.json")).unwrap()).unwrap();
    assert_eq!(report["overall_miou"], 1.0);

    let o = segalign(&[
        "eval",
        "--results",
        s(&out),
        "--gt",
        s(&tmp.path().join("gt")),
        "--proposals",
        s(&tmp.path().join("proposals")),
        "--expressions",
        s(&tmp.path().join("expressions.json")),
        "--bank",
        s(&fixtures().join("isaid_bank.json")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["ovss", "proposals", "res"] {
        let r: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join(format!("{name}_eval.json"))).unwrap()).unwrap();
        assert_eq!(r["overall_miou"], 1.0, "{name}");
    }

    let o = segalign(&[
        "overlay",
        "--results",
        s(&out),
        "--images",
        s(&tmp.path().join("images")),
    ]);
    assert!(o.status.success());
    assert!(out.join("overlay/res_harbor_01_1.png").is_file());
}

#[test]
fn manifest_replay_is_bytewise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    let a = tmp.path().join("a");
    assert!(segalign(&["res", "run", "--config", s(&cfg), "--out", s(&a)])
        .status
        .success());
    let b = tmp.path().join("b");
    let manifest = a.join("manifest_res.json");
    let o = segalign(&["res", "run", "--config", s(&manifest), "--out", s(&b), "--workers", "4"]);
    assert!(o.status.success());
    assert_eq!(records(&a.join("res")), records(&b.join("res")));
}

#[test]
fn item_failures_give_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    std::fs::remove_file(tmp.path().join("proposals/field_01.json")).unwrap();
    let o = segalign(&["ovss", "run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field_01"));
    assert!(tmp.path().join("out/ovss/harbor_01.json").is_file());
}

#[test]
fn eval_reports_id_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    assert!(segalign(&["ovss", "run", "--config", s(&cfg)]).status.success());
    std::fs::remove_file(tmp.path().join("gt/field_01.json")).unwrap();
    let o = segalign(&[
        "eval",
        "--results",
        s(&tmp.path().join("out")),
        "--gt",
        s(&tmp.path().join("gt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("field_01"));
}

#[test]
fn run_flags_reach_the_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    let out = tmp.path().join("flags");
    let o = segalign(&[
        "res",
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--gradcam",
        "single",
        "--no-selection",
        "--crop",
        "bb_mask",
    ]);
    assert!(o.status.success());
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("res/field_01_0.json")).unwrap()).unwrap();
    assert_eq!(rec["mode"], "heatmap");
    assert_eq!(rec["fusion"]["mode"], "single");
    let o = segalign(&["ovss", "run", "--config", s(&cfg), "--crop", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_and_synthetic_containers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = dataset(tmp.path());
    let o = segalign(&["ablate", "table3", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("out/table3/summary.json").is_file());

    let p = tmp.path().join("synth.json");
    let o = segalign(&[
        "proposals",
        "synth",
        "--image-id",
        "x",
        "--layout",
        "5",
        "--seed",
        "9",
        "-o",
        s(&p),
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("x: 5 masks"));
}

#[test]
fn relative_config_path_replays() {
    let tmp = tempfile::tempdir().unwrap();
    dataset(&tmp.path().join("ds"));
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_segalign"))
            .current_dir(tmp.path())
            .args(args)
            .output()
            .unwrap()
    };
    assert!(run(&["ovss", "run", "--config", "ds/config.json"]).status.success());
    let o = run(&["ovss", "run", "--config", "ds/out/manifest_ovss.json", "--out", "replay"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(records(&tmp.path().join("ds/out/ovss")), records(&tmp.path().join("replay/ovss")));
}
