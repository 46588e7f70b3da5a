use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mixdeg::dataset::{generate_clean, SceneKind};
use mixdeg::distortions::{apply, DistortionKind, DistortionSpec};
use mixdeg::imaging::io::{quantized, read_image, write_depth, write_image};
use mixdeg::imaging::SeededRng;

fn mixdeg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixdeg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_dataset(dir: &Path) {
    fs::write(
        dir.join("c.json"),
        r#"{"n_images": 48, "image_size": 32, "categories": ["haze", "low_light", "gaussian_noise", "defocus_blur"]}"#,
    )
    .unwrap();
}

fn digest(o: &Output) -> String {
    stdout(o).split_whitespace().last().unwrap().to_string()
}

/// A haze-only image with its depth map and forward specs on disk.
fn haze_fixture(dir: &Path) {
    let (clean, depth) = generate_clean(32, SceneKind::Shapes, &mut SeededRng::new(5)).unwrap();
    let spec = DistortionSpec::midpoint(DistortionKind::Haze, 1);
    let hazy = quantized(&apply(&spec, &quantized(&clean), Some(&depth)).unwrap());
    write_image(&hazy, dir.join("hazy.png")).unwrap();
    write_depth(&depth, dir.join("depth.pgm")).unwrap();
    fs::write(dir.join("specs.json"), serde_json::to_string(&vec![spec]).unwrap()).unwrap();
}

#[test]
fn gen_is_deterministic_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    let a = mixdeg(&["gen", "--config", "c.json", "--out", "a", "--seed", "42"], dir.path());
    let b = mixdeg(&["gen", "--config", "c.json", "--out", "b", "--seed", "42"], dir.path());
    let c = mixdeg(&["gen", "--config", "c.json", "--out", "c", "--seed", "7"], dir.path());
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&c));
    assert_eq!(
        fs::read(dir.path().join("a/manifest.jsonl")).unwrap(),
        fs::read(dir.path().join("b/manifest.jsonl")).unwrap()
    );
    assert!(dir.path().join("a/config.json").is_file());
}

#[test]
fn negative_prompt_leaves_image_untouched() {
    let dir = tempfile::tempdir().unwrap();
    haze_fixture(dir.path());
    let o = mixdeg(
        &[
            "restore", "--in", "hazy.png", "--depth", "depth.pgm", "--specs", "specs.json", "--prompt", "remove snow",
            "--out", "out/r.png",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let input = read_image(dir.path().join("hazy.png")).unwrap();
    let output = read_image(dir.path().join("out/r.png")).unwrap();
    assert!(input.bit_identical(&output));
    let plan: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/r.plan.json")).unwrap()).unwrap();
    assert_eq!(plan["steps"].as_array().unwrap().len(), 0);
}

#[test]
fn prompt_restores_targeted_haze() {
    let dir = tempfile::tempdir().unwrap();
    haze_fixture(dir.path());
    let o = mixdeg(
        &[
            "restore", "--in", "hazy.png", "--depth", "depth.pgm", "--specs", "specs.json", "--prompt",
            "remove haze and blur", "--sequential", "--out", "r.png",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let plan: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let steps = plan["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0]["category"], "haze");
    assert_eq!(plan["mode"], "sequential");
}

#[test]
fn session_writes_numbered_steps() {
    let dir = tempfile::tempdir().unwrap();
    haze_fixture(dir.path());
    let mut child = Command::new(env!("CARGO_BIN_EXE_mixdeg"))
        .args(["session", "--in", "hazy.png", "--depth", "depth.pgm", "--out", "s"])
        .current_dir(dir.path())
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"unwarp\nnot a prompt at all\nfix coloring\nquit\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for step in ["hazy_step01", "hazy_step02"] {
        assert!(dir.path().join("s").join(format!("{}.png", step)).is_file());
        assert!(dir.path().join("s").join(format!("{}.plan.json", step)).is_file());
    }
    assert!(!dir.path().join("s/hazy_step03.png").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("could not use prompt"));
}

#[test]
fn ttest_fixture_and_degenerate_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("full.csv"), "score\n0.5\n0.5\n0.5\n").unwrap();
    fs::write(dir.path().join("selective.csv"), "score\n0.508\n0.506\n0.510\n").unwrap();
    let o = mixdeg(&["ttest", "--a", "full.csv", "--b", "selective.csv"], dir.path());
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r["p"].as_f64().unwrap() - 0.0202).abs() < 1e-3);
    assert!((r["t"].as_f64().unwrap() - 6.9282).abs() < 1e-3);
    assert_eq!(r["dof"], 2);

    fs::write(dir.path().join("shift.csv"), "1.5\n1.5\n1.5\n").unwrap();
    fs::write(dir.path().join("base.csv"), "0.5\n0.5\n0.5\n").unwrap();
    let o = mixdeg(&["ttest", "--a", "base.csv", "--b", "shift.csv"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mixdeg(&["gen", "--out", "x", "--bogus"], dir.path())), 1);
    assert_eq!(code(&mixdeg(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&mixdeg(&["restore", "--in", "missing.png", "--prompt", "remove haze", "--out", "o.png"], dir.path())), 1);
    assert_eq!(code(&mixdeg(&["ttest", "--a", "missing.csv", "--b", "missing.csv"], dir.path())), 1);
    assert!(!dir.path().join("x").exists(), "nothing written before validation");
    assert_eq!(code(&mixdeg(&["--help"], dir.path())), 0);

    haze_fixture(dir.path());
    // both or neither of --prompt / --auto
    assert_eq!(code(&mixdeg(&["restore", "--in", "hazy.png", "--out", "o.png"], dir.path())), 1);
    // prompt without any distortion term
    let o = mixdeg(&["restore", "--in", "hazy.png", "--prompt", "make it nice", "--out", "o.png"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no recognizable distortion terms"));
    assert!(!dir.path().join("o.png").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_mixdeg"))
        .args(["ttest", "--a", "x", "--b", "y"])
        .env("MIXDEG_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn train_classify_restore_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_dataset(p);
    fs::write(
        p.join("train.json"),
        r#"{"epochs": 2, "batch_clean": 4, "hidden": [16, 16], "embedding_dim": 8, "probe_hidden": 8}"#,
    )
    .unwrap();
    fs::write(p.join("clf.json"), r#"{"hidden": 16, "epochs": 3}"#).unwrap();
    let run = |args: &[&str]| {
        let o = mixdeg(args, p);
        assert_eq!(code(&o), 0, "{:?}: {}", args, String::from_utf8_lossy(&o.stderr));
        o
    };
    run(&["gen", "--config", "c.json", "--out", "ds"]);
    run(&[
        "train-encoder", "--manifest", "ds/manifest.jsonl", "--config", "train.json", "--out", "enc", "--scheme",
        "overlap", "--tau", "0.2",
    ]);
    assert!(p.join("enc/encoder.ckpt").is_file());
    let log = fs::read_to_string(p.join("enc/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("enc/train_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["weighting_scheme"], "overlap");
    assert_eq!(cfg["tau"], 0.2);

    run(&[
        "train-classifier", "--manifest", "ds/manifest.jsonl", "--encoder", "enc/encoder.ckpt", "--config", "clf.json",
        "--out", "clf",
    ]);
    let models = ["--encoder", "enc/encoder.ckpt", "--classifier", "clf/classifier.ckpt"];
    let img = "ds/distorted/000000.png";
    let o = run(&[&["classify", "--in", img][..], &models[..]].concat());
    let c: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(c["probabilities"].as_array().unwrap().len(), 14);

    run(&[&["restore", "--in", img, "--auto", "--out", "auto.png"][..], &models[..]].concat());
    let plan: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("auto.plan.json")).unwrap()).unwrap();
    assert_eq!(plan["source"], "automated");

    let input = fs::read(p.join("ds/manifest.jsonl")).unwrap();
    run(&[
        &["eval", "--manifest", "ds/manifest.jsonl", "--split", "train", "--items", "4", "--out", "ev"][..],
        &models[..],
    ]
    .concat());
    let ev: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("ev/eval.json")).unwrap()).unwrap();
    let f1 = ev["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
    assert_eq!(ev["controllability"]["negative_identical"], ev["controllability"]["negative_cases"]);
    assert_eq!(fs::read(p.join("ds/manifest.jsonl")).unwrap(), input, "inputs are never mutated");
}

#[test]
fn harness_commands_emit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("h.json"),
        r#"{
            "dataset": {"n_images": 64, "image_size": 32, "categories": ["haze", "low_light", "gaussian_noise", "defocus_blur", "contrast"]},
            "train": {"epochs": 1, "batch_clean": 4, "hidden": [16, 16], "embedding_dim": 8, "probe_hidden": 8},
            "classifier": {"hidden": 16, "epochs": 1},
            "seeds": [1],
            "probe_items": 4,
            "eval_items": 4
        }"#,
    )
    .unwrap();
    let o = mixdeg(&["ablate", "--config", "h.json", "--out", "rep", "--study", "weighting"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p.join("rep/weighting_ablation.csv")).unwrap();
    assert!(csv.starts_with("# reference"));
    for scheme in ["none", "unweighted", "cosine_labels", "overlap", "jaccard"] {
        assert!(csv.lines().any(|l| l.starts_with(&format!("{},", scheme))), "{}", scheme);
    }
    assert!(p.join("rep/weighting_ablation.json").is_file());

    let o = mixdeg(&["ablate", "--config", "h.json", "--out", "rep", "--study", "n-sweep"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<String> = fs::read_to_string(p.join("rep/n_sweep.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(rows.len(), 4);

    let o = mixdeg(&["diag", "--config", "h.json", "--out", "rep", "--tau", "0.1,0.5"], p);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let diag = fs::read_to_string(p.join("rep/latent_diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 3);
}
