use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fcna");

fn fcna(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("FCNA_THREADS").output().expect("spawn fcna")
}

fn ok(args: &[&str]) -> String {
    let out = fcna(args);
    assert!(out.status.success(), "fcna {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line.
fn fails(args: &[&str]) -> (i32, String) {
    let out = fcna(args);
    assert!(!out.status.success(), "fcna {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    (out.status.code().unwrap(), err.trim_end().to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_dataset(dir: &Path) {
    ok(&["synth", "--out", s(dir), "--classes", "2", "--per-class", "10", "--scales", "16,32", "--seed", "4"]);
}

fn quick_train(data: &Path, run: &Path, extra: &[&str]) -> String {
    let mut args = vec![
        "train",
        "--data",
        s(data),
        "--out",
        s(run),
        "--preset",
        "desk",
        "--crop",
        "16",
        "--width",
        "0.0625",
        "--batch",
        "4",
        "--max-steps",
        "4",
        "--val-every",
        "2",
        "--seed",
        "1",
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn help_lists_every_flag_and_exit_codes() {
    let help = ok(&["train", "--help"]);
    for flag in [
        "--config",
        "--data",
        "--out",
        "--scale ",
        "--scales",
        "--preset",
        "--classes",
        "--per-class",
        "--crop",
        "--width",
        "--batch",
        "--lr ",
        "--momentum",
        "--weight-decay",
        "--patience",
        "--lr-drop-factor",
        "--max-drops",
        "--min-delta",
        "--max-steps",
        "--val-every",
        "--sampling",
        "--flip",
        "--seed",
        "--split",
        "--min-per-class",
        "--epsilon",
        "--method",
        "--model-scale",
        "--limit",
        "--target",
        "--reduction",
        "--location",
        "--report",
    ] {
        assert!(help.contains(flag), "help is missing {flag}");
    }
    let top = ok(&["--help"]);
    assert!(top.contains("Exit codes:") && top.contains("FCNA_THREADS"));
    for cmd in ["synth", "ingest", "train", "eval", "visualize", "report"] {
        assert!(top.contains(cmd));
    }
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--classes",
            "4",
            "--per-class",
            "6",
            "--scales",
            "16,64",
            "--seed",
            "7",
            "--split",
            "0.5,0.25,0.25",
            "--out",
            s(d.path()),
        ]);
    }
    for f in ["manifest.csv", "manifest.meta", "cues.csv", "images/16/c03_0005.png", "images/64/c00_0000.png"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let csv = fs::read_to_string(a.path().join("manifest.csv")).unwrap();
    // 24 images at two scales; half of each class trains.
    assert_eq!(csv.lines().count(), 1 + 24 * 2);
    assert_eq!(csv.matches(",train,").count(), 4 * 3 * 2);
}

#[test]
fn full_pipeline_with_every_training_flag() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let out = quick_train(
        data.path(),
        run.path(),
        &[
            "--scales",
            "16,32",
            "--classes",
            "2",
            "--lr",
            "0.005",
            "--momentum",
            "0.8",
            "--weight-decay",
            "0.001",
            "--patience",
            "1",
            "--lr-drop-factor",
            "5",
            "--max-drops",
            "1",
            "--min-delta",
            "0.0",
            "--sampling",
            "image",
            "--flip",
            "true",
        ],
    );
    assert!(out.contains("scale 16:") && out.contains("scale 32:"), "{out}");
    for f in ["model_16.fcna", "model_32.fcna", "train_16.csv", "train_32.csv"] {
        assert!(run.path().join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(run.path().join("train_32.csv")).unwrap();
    assert!(log.starts_with("step,kind,loss,mca,lr,note"));

    let summary = ok(&[
        "eval",
        "--data",
        s(data.path()),
        "--out",
        s(run.path()),
        "--scales",
        "16,32",
        "--epsilon",
        "0.02",
        "--method",
        "spearman",
    ]);
    assert!(summary.contains("spearman") && summary.contains("epsilon 0.02"), "{summary}");
    let report = fs::read_to_string(run.path().join("report.txt")).unwrap();
    assert!(report.contains("correlation 16 32"));

    let printed = ok(&["report", "--out", s(run.path())]);
    assert_eq!(
        printed.trim_end(),
        summary.lines().take_while(|l| !l.starts_with("wrote")).collect::<Vec<_>>().join("\n").trim_end()
    );
    let by_path = ok(&["report", "--report", s(&run.path().join("report.txt"))]);
    assert_eq!(by_path, printed);

    let vis = ok(&[
        "visualize",
        "--data",
        s(data.path()),
        "--out",
        s(run.path()),
        "--scale",
        "32",
        "--limit",
        "1",
        "--target",
        "all",
    ]);
    assert!(vis.contains("planted cue region"), "{vis}");
    let n = fs::read_dir(run.path().join("saliency")).unwrap().count();
    assert_eq!(n, 2 * 2, "one test image per class, every class as target");
    for entry in fs::read_dir(run.path().join("saliency")).unwrap() {
        let path = entry.unwrap().path();
        assert!(path.to_string_lossy().ends_with("_32_0_gbp.png") || path.to_string_lossy().ends_with("_32_1_gbp.png"));
        assert_eq!(image_dims(&path.to_string_lossy()), (64, 32), "overlay is original and map side by side");
    }

    let base = ["visualize", "--data", s(data.path()), "--out", s(run.path()), "--scale", "32", "--limit", "1"];
    ok(&[&base[..], &["--reduction", "sum-abs", "--location", "0,0"]].concat());
    let (code, err) = fails(&[&base[..], &["--location", "99,99"]].concat());
    assert_eq!(code, 8, "{err}");
    assert!(err.contains("outside"), "{err}");
    let (code, _) = fails(&[&base[..], &["--location", "1"]].concat());
    assert_eq!(code, 2);
}

fn image_dims(path: &str) -> (u32, u32) {
    // PNG IHDR: width and height are big-endian u32 at bytes 16..24.
    let bytes = fs::read(path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    (be(16), be(20))
}

#[test]
fn eval_without_checkpoints_is_a_missing_checkpoint_error() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let (code, err) = fails(&["eval", "--data", s(data.path()), "--out", s(run.path()), "--scales", "16,32"]);
    assert_eq!(code, 3);
    assert!(err.starts_with("error[missing-checkpoint]: missing checkpoint"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn eval_refuses_a_checkpoint_from_another_scale() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    quick_train(data.path(), run.path(), &["--scale", "16"]);
    fs::copy(run.path().join("model_16.fcna"), run.path().join("model_32.fcna")).unwrap();
    let (code, err) = fails(&["eval", "--data", s(data.path()), "--out", s(run.path()), "--scales", "16,32"]);
    assert_eq!(code, 7, "{err}");
    assert!(err.starts_with("error[checkpoint]"));
}

#[test]
fn one_model_can_be_evaluated_across_scales() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    quick_train(data.path(), run.path(), &["--scale", "32"]);
    let out =
        ok(&["eval", "--data", s(data.path()), "--out", s(run.path()), "--scales", "16,32", "--model-scale", "32"]);
    assert!(out.contains("wrote"), "{out}");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let cfg = run.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "data = {:?}\nout = {:?}\nscales = [16]\ncrop = 16\nwidth = 0.0625\nbatch = 2\nmax_steps = 3\nval_every = 3\n",
            s(data.path()),
            s(run.path())
        ),
    )
    .unwrap();
    ok(&["train", "--config", s(&cfg)]);
    let log = fs::read_to_string(run.path().join("train_16.csv")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(",train,")).count(), 3);
    ok(&["train", "--config", s(&cfg), "--max-steps", "5"]);
    let log = fs::read_to_string(run.path().join("train_16.csv")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(",train,")).count(), 5);

    fs::write(&cfg, "max_step = 3\n").unwrap();
    let (code, err) = fails(&["train", "--config", s(&cfg)]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]") && err.contains("max_step"), "{err}");
}

#[test]
fn invalid_settings_fail_before_work() {
    let data = tempfile::tempdir().unwrap();
    let run = tempfile::tempdir().unwrap();
    tiny_dataset(data.path());
    let d = s(data.path());
    let r = s(run.path());
    // Crop smaller than the network's minimum input.
    let (code, err) = fails(&["train", "--data", d, "--out", r, "--crop", "8", "--width", "0.0625"]);
    assert_eq!(code, 2, "{err}");
    // Crop larger than the images at this scale.
    let (code, err) = fails(&["train", "--data", d, "--out", r, "--scale", "16", "--crop", "24", "--width", "0.0625"]);
    assert_eq!(code, 4, "{err}");
    assert!(err.starts_with("error[dimension]"));
    // The full preset needs 224-pixel crops.
    let (code, _) = fails(&["train", "--data", d, "--out", r, "--scale", "32", "--preset", "table1"]);
    assert_eq!(code, 4);
    let (code, _) = fails(&["train", "--data", d, "--out", r, "--classes", "3"]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["train", "--data", d, "--out", r, "--lr", "-1"]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["synth", "--out", r, "--split", "0.5,0.5"]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["train", "--data", s(&run.path().join("nope")), "--out", r]);
    assert_eq!(code, 3);
    let (code, _) = fails(&["train", "--out", r]);
    assert_eq!(code, 2);
    let (code, _) = fails(&["report", "--out", r]);
    assert_eq!(code, 3);
    let (code, _) = fails(&["train", "--bogus"]);
    assert_eq!(code, 2);
}

#[test]
fn ingest_builds_a_dataset_from_class_folders() {
    let src = tempfile::tempdir().unwrap();
    for class in ["alpha", "beta"] {
        fs::create_dir_all(src.path().join(class)).unwrap();
        ok(&["synth", "--out", s(&src.path().join("tmp")), "--classes", "2", "--per-class", "3", "--scales", "40"]);
        for e in fs::read_dir(src.path().join("tmp/images/40")).unwrap() {
            let p = e.unwrap().path();
            fs::copy(&p, src.path().join(class).join(p.file_name().unwrap())).unwrap();
        }
        fs::remove_dir_all(src.path().join("tmp")).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let msg = ok(&[
        "ingest",
        "--data",
        s(src.path()),
        "--out",
        s(out.path()),
        "--scales",
        "20,40",
        "--min-per-class",
        "6",
        "--seed",
        "2",
        "--split",
        "0.5,0.0,0.5",
    ]);
    assert!(msg.contains("12 images in 2 classes"), "{msg}");
    assert!(out.path().join("images/20/alpha_c00_0000.png").exists());

    let (code, err) = fails(&["ingest", "--data", s(src.path()), "--out", s(out.path()), "--scales", "20"]);
    assert_eq!(code, 8, "{err}");
    assert!(err.contains("fewer than") || err.contains("96"), "{err}");
}

#[test]
fn thread_cap_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["synth", "--out", s(dir.path()), "--classes", "2", "--per-class", "1", "--scales", "16"])
        .env("FCNA_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN)
        .args(["synth", "--out", s(dir.path()), "--classes", "2", "--per-class", "1", "--scales", "16"])
        .env("FCNA_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
}
