use std::fs;
use std::path::Path;

use segvid::cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION};

fn segvid(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["segvid".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn csv_rows(path: &Path) -> (String, Vec<String>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(str::to_string);
    let header = lines.next().unwrap();
    (header, lines.collect())
}

#[test]
fn usage_and_help_exit_codes() {
    assert_eq!(run(["segvid", "--help"]), EXIT_OK);
    assert_eq!(run(["segvid", "--version"]), EXIT_OK);
    assert_eq!(run(["segvid"]), EXIT_USAGE);
    assert_eq!(run(["segvid", "explode"]), EXIT_USAGE);
    assert_eq!(run(["segvid", "--M", "three", "generate"]), EXIT_USAGE);
    assert_eq!(run(["segvid", "--mask", "sideways", "generate"]), EXIT_USAGE);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(segvid(dir.path(), &["--M", "0", "generate"]), EXIT_VALIDATION);
    assert_eq!(segvid(dir.path(), &["--frames", "20", "generate"]), EXIT_VALIDATION);
    assert_eq!(
        segvid(dir.path(), &["--queue-capacity", "0", "generate", "--stream"]),
        EXIT_VALIDATION
    );
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"unknown_field": 1}"#).unwrap();
    assert_eq!(
        segvid(dir.path(), &["--config", cfg.to_str().unwrap(), "synth"]),
        EXIT_VALIDATION
    );
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope").join("stage1");
    assert_eq!(
        segvid(dir.path(), &["--stage1", missing.to_str().unwrap(), "generate"]),
        EXIT_RUNTIME
    );
}

#[test]
fn generate_is_byte_reproducible_and_stream_agrees() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = tempfile::tempdir().unwrap();
    assert_eq!(segvid(a.path(), &["--frames", "33", "generate"]), EXIT_OK);
    assert_eq!(segvid(b.path(), &["--frames", "33", "generate"]), EXIT_OK);
    for name in ["lr.siv1", "hybrid.siv1", "video.siv1", "plan.json"] {
        let (x, y) = (
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
        );
        assert!(x == y, "{name} differs between reruns");
    }
    let resolved = |dir: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("config.resolved.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("out");
        v
    };
    assert_eq!(resolved(a.path()), resolved(b.path()));
    assert_eq!(segvid(s.path(), &["--frames", "33", "generate", "--stream"]), EXIT_OK);
    assert_eq!(
        fs::read(a.path().join("video.siv1")).unwrap(),
        fs::read(s.path().join("video.siv1")).unwrap()
    );
    let (header, rows) = csv_rows(&s.path().join("events.csv"));
    assert_eq!(header, "kind,index,t_ms");
    assert!(rows.iter().any(|r| r.starts_with("frames_emitted,")));
    let timing: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(s.path().join("timing.json")).unwrap()).unwrap();
    assert!(timing["predicted_ms"]["full_output"].as_f64().unwrap() > 0.0);
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["S"], 3);
}

#[test]
fn checkpoints_round_trip_through_generate() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    assert_eq!(segvid(w, &["--frames", "33", "synth"]), EXIT_OK);
    let corpus = w.join("corpus");
    assert!(corpus.join("train.json").exists() && corpus.join("val_000.siv1").exists());
    let c = corpus.to_str().unwrap();
    assert_eq!(segvid(w, &["--frames", "33", "--corpus", c, "train-stage2"]), EXIT_OK);
    let (header, rows) = csv_rows(&w.join("stage2_train.csv"));
    assert!(header.starts_with("step,"));
    assert_eq!(rows.len(), 500);
    let direct = tempfile::tempdir().unwrap();
    assert_eq!(
        segvid(direct.path(), &["--frames", "33", "--corpus", c, "generate"]),
        EXIT_OK
    );
    let resumed = tempfile::tempdir().unwrap();
    let (s1, s2) = (w.join("stage1"), w.join("stage2"));
    assert_eq!(
        segvid(
            resumed.path(),
            &[
                "--frames",
                "33",
                "--corpus",
                c,
                "--stage1",
                s1.to_str().unwrap(),
                "--stage2",
                s2.to_str().unwrap(),
                "generate"
            ]
        ),
        EXIT_OK
    );
    assert_eq!(
        fs::read(direct.path().join("video.siv1")).unwrap(),
        fs::read(resumed.path().join("video.siv1")).unwrap()
    );
}

#[test]
fn bench_scaling_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(segvid(dir.path(), &["bench", "scaling"]), EXIT_OK);
    let (header, rows) = csv_rows(&dir.path().join("scaling.csv"));
    assert_eq!(header, "T,t,S,max_tokens,forward_count,wall_ms");
    let frames: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(frames, ["17", "33", "49", "65", "81"]);
    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("scaling_fit.json")).unwrap()).unwrap();
    assert!(fit["forward_fit"]["r2"].as_f64().unwrap() >= 0.999);
}

#[test]
fn ablate_mn_covers_training_segmentations() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(segvid(dir.path(), &["--frames", "33", "ablate-mn"]), EXIT_OK);
    let (header, rows) = csv_rows(&dir.path().join("ablate_mn.csv"));
    assert_eq!(
        header,
        "M,N,S,max_tokens,forward_count,psnr_db,boundary_gap_pct,wall_ms"
    );
    let mn: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(mn, ["2,1", "2,2", "3,1", "3,2"]);
}

#[test]
fn transition_writes_sweep_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(segvid(dir.path(), &["--frames", "33", "transition"]), EXIT_OK);
    let (header, rows) = csv_rows(&dir.path().join("transition_sweep.csv"));
    assert_eq!(header, "sigma,steps,snr_db,psnr_db,ssim");
    assert_eq!(rows.len(), 5);
    let manifest = fs::read_to_string(dir.path().join("pairs").join("pairs.jsonl")).unwrap();
    assert!(manifest.lines().count() >= 1);
}
