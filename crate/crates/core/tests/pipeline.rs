use std::path::{Path, PathBuf};

use segalign_core::ingest::{DistractorSpec, SceneSpec, ShapeKind, ShapeSpec};
use segalign_core::mask::CropVariant;
use segalign_core::pipeline::records::{read_json, write_json};
use segalign_core::pipeline::{
    evaluate, manifest_path, run_ablation, write_forced_alignment, write_overlays, AblationPreset, Encoders,
    EvalInputs, OvssRecord, Pipeline, PipelineConfig, ResRecord, SplitSpec, SynthExpression, SynthScene, SynthSpec,
};
use segalign_core::prompt::ClassTextBank;
use segalign_core::saliency::GradcamMode;
use segalign_core::select::SelectionPath;

fn bank_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/isaid_bank.json")
}

fn shape(category: &str, kind: ShapeKind, row: usize, col: usize, h: usize, w: usize, color: [u8; 3]) -> ShapeSpec {
    ShapeSpec {
        category: category.into(),
        kind,
        row,
        col,
        height: h,
        width: w,
        color,
    }
}

fn spec() -> SynthSpec {
    let a = SceneSpec {
        image_id: "scene_a".into(),
        height: 64,
        width: 64,
        seed: 7,
        background: [60, 70, 50],
        noise: 12,
        shapes: vec![
            shape("ship", ShapeKind::Rect, 4, 4, 10, 24, [200, 200, 210]),
            shape("harbor", ShapeKind::Rect, 36, 30, 20, 28, [90, 90, 160]),
            shape("small vehicle", ShapeKind::Ellipse, 6, 44, 8, 12, [220, 40, 40]),
        ],
        distractors: vec![DistractorSpec {
            row: 40,
            col: 2,
            height: 16,
            width: 16,
        }],
        allow_overlap: false,
    };
    let b = SceneSpec {
        image_id: "scene_b".into(),
        height: 48,
        width: 40,
        seed: 3,
        background: [50, 50, 50],
        noise: 8,
        shapes: vec![
            shape("tennis court", ShapeKind::Rect, 2, 2, 14, 20, [30, 160, 60]),
            shape("ground track field", ShapeKind::Ellipse, 20, 4, 24, 32, [170, 80, 60]),
        ],
        distractors: vec![],
        allow_overlap: false,
    };
    SynthSpec {
        scenes: vec![
            SynthScene {
                scene: a,
                expressions: vec![
                    SynthExpression {
                        id: "e1".into(),
                        text: "the ship on the top left".into(),
                        target: 0,
                    },
                    SynthExpression {
                        id: "e2".into(),
                        text: "A red car".into(),
                        target: 2,
                    },
                ],
            },
            SynthScene {
                scene: b,
                expressions: vec![SynthExpression {
                    id: "e3".into(),
                    text: "An oval ground track field".into(),
                    target: 1,
                }],
            },
        ],
    }
}

fn fixture(dir: &Path) -> PipelineConfig {
    let bank = ClassTextBank::load(&bank_path()).unwrap();
    let cfg_path = write_forced_alignment(&spec(), &bank, dir).unwrap();
    PipelineConfig::load(&cfg_path).unwrap()
}

fn pipeline(cfg: PipelineConfig) -> Pipeline {
    cfg.validate().unwrap();
    let enc = Encoders::from_spec(&cfg.encoder).unwrap();
    Pipeline::new(cfg, enc).unwrap()
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
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
fn ovss_labels_match_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let out = cfg.out.clone();
    let s = pipeline(cfg).run_ovss().unwrap();
    assert!(s.ok(), "{:?}", s.failures);
    assert_eq!(s.eval.as_ref().unwrap().overall_miou, 1.0);
    let rec: OvssRecord = read_json(&out.join("ovss/scene_a.json")).unwrap();
    let classes: Vec<_> = rec.segments.iter().map(|s| s.class.as_str()).collect();
    assert_eq!(classes, vec!["ship", "harbor", "small vehicle"]);
    assert_eq!(rec.proposals, 4);
    assert!(out.join("ovss_eval.txt").is_file());
    assert!(manifest_path(&out, "ovss").is_file());
}

#[test]
fn res_selects_the_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let out = cfg.out.clone();
    let s = pipeline(cfg).run_res().unwrap();
    assert!(s.ok(), "{:?}", s.failures);
    assert_eq!(s.eval.as_ref().unwrap().overall_miou, 1.0);
    let e2: ResRecord = read_json(&out.join("res/e2.json")).unwrap();
    assert_eq!(e2.selected, Some(2));
    assert_eq!(e2.target_class, "small vehicle");
    assert_eq!(e2.decoupled.mod_words, vec!["red"]);
    assert_eq!(e2.path, Some(SelectionPath::Consistent));
    let e3: ResRecord = read_json(&out.join("res/e3.json")).unwrap();
    assert_eq!(e3.decoupled.cls, vec!["ground", "track", "field"]);
    assert_eq!(e3.decoupled.mod_words, vec!["oval"]);
}

#[test]
fn worker_count_does_not_change_records() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture(tmp.path());
    let base = cfg.out.clone();
    let mut runs = Vec::new();
    for workers in [1, 4] {
        cfg.workers = workers;
        cfg.out = base.join(format!("w{workers}"));
        let p = pipeline(cfg.clone());
        assert!(p.run_ovss().unwrap().ok());
        assert!(p.run_res().unwrap().ok());
        runs.push((read_all(&cfg.out.join("ovss")), read_all(&cfg.out.join("res"))));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn manifest_reproduces_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let out = cfg.out.clone();
    pipeline(cfg.clone()).run_ovss().unwrap();
    let first = read_all(&out.join("ovss"));
    let replay = PipelineConfig::load(&manifest_path(&out, "ovss")).unwrap();
    assert_eq!(replay, cfg);
    let mut replay = replay;
    replay.out = tmp.path().join("replay");
    replay.workers = 3;
    pipeline(replay.clone()).run_ovss().unwrap();
    assert_eq!(read_all(&replay.out.join("ovss")), first);
}

#[test]
fn empty_proposal_file_yields_empty_result() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let prop = tmp.path().join("proposals/scene_b.json");
    write_json(
        &prop,
        &serde_json::json!({"image_id": "scene_b", "height": 48, "width": 40, "masks": []}),
    )
    .unwrap();
    let out = cfg.out.clone();
    let s = pipeline(cfg).run_ovss().unwrap();
    assert!(s.ok());
    let rec: OvssRecord = read_json(&out.join("ovss/scene_b.json")).unwrap();
    assert!(rec.segments.is_empty());
    assert!(s.eval.unwrap().overall_miou < 1.0);
}

#[test]
fn per_item_failure_is_recorded_and_run_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    std::fs::remove_file(tmp.path().join("proposals/scene_a.json")).unwrap();
    let out = cfg.out.clone();
    let s = pipeline(cfg).run_ovss().unwrap();
    assert_eq!(s.failures.len(), 1);
    assert_eq!(s.failures[0].item, "scene_a");
    assert!(out.join("ovss/scene_b.json").is_file());
}

#[test]
fn crop_variant_only_changes_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture(tmp.path());
    let base = cfg.out.clone();
    let mut recs = Vec::new();
    for v in [CropVariant::BbMask, CropVariant::MbrBuffer] {
        cfg.crop.variant = v;
        cfg.out = base.join(v.as_str());
        pipeline(cfg.clone()).run_ovss().unwrap();
        let r: OvssRecord = read_json(&cfg.out.join("ovss/scene_a.json")).unwrap();
        recs.push(r);
    }
    assert_eq!(recs[0].crop.variant, CropVariant::BbMask);
    assert_eq!(recs[1].crop.variant, CropVariant::MbrBuffer);
    recs[0].crop = recs[1].crop;
    assert_eq!(recs[0], recs[1]);
}

#[test]
fn single_mode_and_heatmap_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture(tmp.path());
    cfg.fusion.mode = GradcamMode::Single;
    cfg.selection = false;
    let out = cfg.out.clone();
    let s = pipeline(cfg).run_res().unwrap();
    assert!(s.ok());
    let e1: ResRecord = read_json(&out.join("res/e1.json")).unwrap();
    assert_eq!(e1.mode, "heatmap");
    assert_eq!(e1.selected, None);
    assert!(e1.rle.len() > 1);
}

#[test]
fn ablation_grids_and_overlays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let enc = Encoders::from_spec(&cfg.encoder).unwrap();
    let rows = run_ablation(AblationPreset::Table2, &cfg, &enc).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.miou == Some(1.0)));
    let rows = run_ablation(AblationPreset::Table4, &cfg, &enc).unwrap();
    assert_eq!(rows.len(), 8);
    let rows = run_ablation(AblationPreset::Table5, &cfg, &enc).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(
        rows.iter().find(|r| r.name == "cross_selection").unwrap().miou,
        Some(1.0)
    );
    assert!(cfg.out.join("table5/summary.txt").is_file());

    let p = pipeline(cfg.clone());
    p.run_ovss().unwrap();
    p.run_res().unwrap();
    let written = write_overlays(
        &cfg.out,
        &cfg.images,
        Some(&tmp.path().join("proposals")),
        &tmp.path().join("overlay"),
    )
    .unwrap();
    assert_eq!(written.len(), 5);
    assert!(tmp.path().join("overlay/ovss_scene_a.legend.json").is_file());
}

#[test]
fn offline_eval_scores_both_protocols() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture(tmp.path());
    let p = pipeline(cfg.clone());
    p.run_ovss().unwrap();
    p.run_res().unwrap();
    let bank = ClassTextBank::load(&bank_path()).unwrap();
    let reports = evaluate(&EvalInputs {
        results: &cfg.out,
        gt: Some(&tmp.path().join("gt")),
        proposals: Some(&tmp.path().join("proposals")),
        expressions: cfg.expressions.as_deref(),
        split: Some(SplitSpec {
            unseen: bank.unseen().to_vec(),
            taxonomy: bank.class_names(),
        }),
    })
    .unwrap();
    assert_eq!(reports.keys().collect::<Vec<_>>(), ["ovss", "proposals", "res"]);
    assert!(reports.values().all(|r| r.overall_miou == 1.0));
    let split = reports["ovss"].split.unwrap();
    assert_eq!((split.n_seen, split.n_unseen), (4, 1));

    std::fs::remove_file(tmp.path().join("gt/scene_b.json")).unwrap();
    let err = evaluate(&EvalInputs {
        results: &cfg.out,
        gt: Some(&tmp.path().join("gt")),
        proposals: None,
        expressions: None,
        split: None,
    })
    .unwrap_err();
    assert!(matches!(err, segalign_core::Error::IdMismatch { ref missing_gt, .. } if missing_gt == &["scene_b"]));
}
