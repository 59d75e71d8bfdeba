use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_keylearn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"
[synth]
train = 5
[synth.scene]
width = 96
height = 96
blobs = 6
squares = 3
images = 7
spacing = 16.0
seed = 3

[trainset.samples]
patch_size = 11

[train]
pca_dim = 64
refine_sweeps = 1
newton_iters = 10
"#;

/// Small synthetic scene written with `synth`, plus a config file.
fn small_scene(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let scene = dir.join("scene");
    ok(&["synth", "--config", p(&cfg), "--out", p(&scene)]);
    (cfg, scene)
}

fn stat(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} ")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .trim()
        .parse()
        .unwrap()
}

fn keypoint_lines(path: &Path) -> Vec<(f64, f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split_whitespace().map(|t| t.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect()
}

#[test]
fn version_lists_schema_versions() {
    let out = ok(&["--version"]);
    assert!(out.contains("model schema 1"));
    assert!(out.contains("trainset schema 1"));
    assert!(out.contains("report schema 1"));
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["detect", "--bogus"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nnot_a_field = 1\n").unwrap();
    let out = run(&["--config", p(&cfg), "synth", "--out", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["--jobs", "0", "synth", "--out", p(&dir.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_scene_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-trainset", p(dir.path()), "--out", p(&dir.path().join("a.bin"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unreadable_images_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        std::fs::write(dir.path().join(format!("bad{i}.ppm")), b"P6 junk").unwrap();
    }
    let out = run(&["build-trainset", p(dir.path()), "--out", p(&dir.path().join("a.bin"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad0.ppm") && err.contains("bad2.ppm"), "{err}");
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, scene) = small_scene(d);
    let c = p(&cfg);
    assert_eq!(std::fs::read_dir(scene.join("train")).unwrap().count(), 5);
    assert_eq!(std::fs::read_dir(scene.join("test")).unwrap().count(), 2);

    // Training set: K_p = images × anchors, reproducible byte for byte.
    let a1 = d.join("a1.bin");
    let a2 = d.join("a2.bin");
    let summary = ok(&["build-trainset", p(&scene.join("train")), "--config", c, "--out", p(&a1), "--seed", "7"]);
    ok(&["build-trainset", p(&scene.join("train")), "--config", c, "--out", p(&a2), "--seed", "7", "--jobs", "1"]);
    assert_eq!(std::fs::read(&a1).unwrap(), std::fs::read(&a2).unwrap());
    let anchors = stat(&summary, "anchors");
    assert!(anchors > 0);
    assert_eq!(stat(&summary, "positives"), 5 * anchors);

    // N = M = 1 smoke model.
    let smoke = d.join("smoke.json");
    let out = ok(&["train", p(&a1), "--config", c, "--out", p(&smoke), "--n", "1", "--m", "1"]);
    assert_eq!(stat(&out, "filters"), 6);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&smoke).unwrap()).unwrap();
    assert_eq!(doc["version"], 1);
    assert_eq!(doc["config_hash"].as_str().unwrap().len(), 64);

    // Default N = 4, M = 4: 96 filters and a non-increasing objective trace.
    let model = d.join("model.json");
    let out = ok(&["train", p(&a1), "--config", c, "--out", p(&model)]);
    assert_eq!(stat(&out, "filters"), 96);
    let trace = std::fs::read_to_string(d.join("model.json.trace.jsonl")).unwrap();
    let objective: Vec<f64> = trace
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["objective"].as_f64().unwrap())
        .collect();
    assert!(objective.len() > 16);
    for w in objective.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
    }

    // Separable approximation and detection.
    let sep = d.join("sep.json");
    let curve = d.join("curve.csv");
    ok(&["approx", p(&model), "--out", p(&sep), "--size", "24", "--curve", p(&curve)]);
    let rows: Vec<f64> = std::fs::read_to_string(&curve)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[1] <= w[0]));

    let img = scene.join("test/img_05.ppm");
    let exact = d.join("exact.txt");
    let exact2 = d.join("exact2.txt");
    let approx = d.join("approx.txt");
    ok(&["detect", p(&sep), p(&img), "--out", p(&exact), "--budget", "300"]);
    ok(&["detect", p(&sep), p(&img), "--out", p(&exact2), "--budget", "300", "--jobs", "1"]);
    assert_eq!(std::fs::read(&exact).unwrap(), std::fs::read(&exact2).unwrap());
    let e = keypoint_lines(&exact);
    assert!(!e.is_empty() && e.len() <= 300);
    assert!(e.windows(2).all(|w| w[0].2 >= w[1].2));
    // Agreement of the strongest keypoints.
    ok(&["detect", p(&sep), p(&img), "--out", p(&exact), "--budget", "20"]);
    ok(&["detect", p(&sep), p(&img), "--out", p(&approx), "--budget", "20", "--separable"]);
    let e = keypoint_lines(&exact);
    let s = keypoint_lines(&approx);
    let common = e.iter().filter(|k| s.iter().any(|q| (q.0, q.1) == (k.0, k.1))).count();
    assert!(
        common as f64 >= 0.9 * e.len().max(s.len()) as f64,
        "separable overlap {common} of {}",
        e.len()
    );
    // Detection without an approximation in the model is refused.
    let out = run(&["detect", p(&model), p(&img), "--out", p(&approx), "--separable"]);
    assert_eq!(out.status.code(), Some(3));

    // Evaluation on the held-out images.
    let rep = d.join("report");
    ok(&["eval", p(&scene.join("test")), "--model", p(&sep), "--mode", "both", "--out", p(&rep)]);
    let csv = std::fs::read_to_string(rep.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("sequence,pair,mode,score,budget"));
    assert_eq!(lines.count(), 2);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["context"]["detector"], "model");

    // Keypoint-file detector: the model's own detections give the same report.
    let kdir = d.join("kps");
    std::fs::create_dir_all(&kdir).unwrap();
    for id in ["img_05", "img_06"] {
        let img = scene.join(format!("test/{id}.ppm"));
        ok(&["detect", p(&sep), p(&img), "--out", p(&kdir.join(format!("{id}.txt")))]);
    }
    let rep2 = d.join("report2");
    ok(&["eval", p(&scene.join("test")), "--keypoints", p(&kdir), "--mode", "both", "--out", p(&rep2)]);
    assert_eq!(std::fs::read_to_string(rep2.join("report.csv")).unwrap(), csv);

    // Too small for the patch.
    let tiny = d.join("tiny.ppm");
    let mut bytes = b"P6\n8 8\n255\n".to_vec();
    bytes.extend(std::iter::repeat(128u8).take(8 * 8 * 3));
    std::fs::write(&tiny, bytes).unwrap();
    let out = run(&["detect", p(&model), p(&tiny), "--out", p(&d.join("t.txt"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn identical_pair_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, scene) = small_scene(d);
    let c = p(&cfg);
    let archive = d.join("a.bin");
    ok(&["build-trainset", p(&scene.join("train")), "--config", c, "--out", p(&archive)]);
    let model = d.join("m.json");
    ok(&["train", p(&archive), "--config", c, "--out", p(&model), "--n", "2", "--m", "2"]);
    let seq = d.join("same");
    std::fs::create_dir_all(&seq).unwrap();
    let src = scene.join("test/img_05.ppm");
    std::fs::copy(&src, seq.join("a.ppm")).unwrap();
    std::fs::copy(&src, seq.join("b.ppm")).unwrap();
    let rep = d.join("rep");
    let out = ok(&["eval", p(&seq), "--model", p(&model), "--mode", "both", "--out", p(&rep)]);
    assert!(out.contains("one_to_one pairs=1"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    for s in json["sequences"][0]["summary"].as_array().unwrap() {
        assert_eq!(s["mean"].as_f64().unwrap(), 1.0);
    }
}

#[test]
fn random_detector_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, scene) = small_scene(d);
    let seq = scene.join("train");
    let rep = d.join("rep");
    let out = ok(&["eval", p(&seq), "--random", "--seed", "5", "--out", p(&rep)]);
    let mean: f64 = out
        .split_whitespace()
        .find_map(|t| t.strip_prefix("mean="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mean < 0.2, "{out}");
    let rep2 = d.join("rep2");
    ok(&["eval", p(&seq), "--random", "--seed", "5", "--out", p(&rep2), "--jobs", "1"]);
    assert_eq!(
        std::fs::read(rep.join("report.json")).unwrap(),
        std::fs::read(rep2.join("report.json")).unwrap()
    );
    assert_eq!(run(&["eval", p(&seq), "--out", p(&rep)]).status.code(), Some(2));
}

#[test]
fn cv_table_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (cfg, scene) = small_scene(d);
    let c = p(&cfg);
    let tr = d.join("tr.bin");
    let va = d.join("va.bin");
    ok(&["build-trainset", p(&scene.join("train")), "--config", c, "--out", p(&tr)]);
    ok(&["build-trainset", p(&scene.join("train")), "--config", c, "--out", p(&va), "--seed", "1"]);
    let table = d.join("cv.csv");
    let out = ok(&[
        "cv", p(&tr), p(&va), "--config", c, "--out", p(&table), "--points", "2", "--lo", "1e-3", "--hi", "1e-1", "--n", "1",
        "--m", "2",
    ]);
    assert!(out.starts_with("best "));
    let text = std::fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().next(), Some("gamma_c,gamma_s,gamma_t,accuracy,temporal_ratio,score"));
    assert_eq!(text.lines().count(), 9);
    assert!(d.join("cv.csv.run.json").exists());
}
