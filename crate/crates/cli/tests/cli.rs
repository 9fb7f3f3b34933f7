//! Drives the `grainform` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grainform::imageprep::{box_at_angle, write_png, GrainImage};
use serde_json::Value;

fn grainform(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grainform"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = grainform(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    grainform(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Small synthetic grains render quickly and still fill a 32x32 grid.
const SMALL: [&str; 6] = ["--canvas-px", "100", "--px-per-mm", "8", "--crop", "window:100"];

fn train_small(out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--synth", "global5", "--per-class", "8", "--epochs", "3"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    args.extend_from_slice(&["--out", s(out)]);
    ok(&args)
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for class in fs::read_dir(dir).unwrap() {
        for f in fs::read_dir(class.unwrap().path()).unwrap() {
            out.push(f.unwrap().path());
        }
    }
    out.sort();
    out
}

fn ellipse(w: usize, h: usize, major: f64, minor: f64, angle_deg: f64) -> GrainImage {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let mut px = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let u = dx * cos - dy * sin;
            let v = dx * sin + dy * cos;
            if (u / (major / 2.0)).powi(2) + (v / (minor / 2.0)).powi(2) <= 1.0 {
                px[y * w + x] = 0.9;
            }
        }
    }
    GrainImage::new(w, h, px).unwrap()
}

#[test]
fn synth_writes_a_deterministic_class_tree() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let stdout = ok(&["synth", "--per-class", "4", "--seed", "3", "--out", s(out)]);
        assert!(stdout.contains("Arborio: 4"), "{stdout}");
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 20);
    assert_eq!(fs::read_dir(&a).unwrap().count(), 5);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
}

#[test]
fn preprocess_tabulates_every_readable_image() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir_all(input.join("x")).unwrap();
    write_png(&ellipse(200, 200, 100.0, 40.0, 0.0), input.join("x/aligned.png")).unwrap();
    write_png(&ellipse(200, 200, 100.0, 40.0, 30.0), input.join("x/tilted.png")).unwrap();
    write_png(&GrainImage::black(50, 50).unwrap(), input.join("x/blank.png")).unwrap();
    let out = dir.path().join("out");
    ok(&["preprocess", "--input", s(&input), "--out", s(&out)]);

    let mut reader = csv::Reader::from_path(out.join("preprocess.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["path", "angle_deg", "box_left", "box_top", "box_right", "box_bottom", "box_w_px", "box_h_px"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    let row = |name: &str| rows.iter().find(|r| r[0].ends_with(name)).unwrap().clone();
    let aligned = row("aligned.png");
    assert_eq!(aligned[1].parse::<f64>().unwrap(), 0.0);
    assert_eq!((&aligned[6], &aligned[7]), ("100", "40"));
    let tilted = row("tilted.png");
    let (w, h): (i64, i64) = (tilted[6].parse().unwrap(), tilted[7].parse().unwrap());
    assert!((w - 100).abs() <= 2 && (h - 40).abs() <= 2, "{w}x{h}");
    let img = ellipse(200, 200, 100.0, 40.0, 30.0);
    let best = (0..1800)
        .map(|t| box_at_angle(&img, t as f64 / 10.0, 0.1).unwrap())
        .filter(|b| b.width() >= b.height())
        .map(|b| b.area())
        .min()
        .unwrap();
    assert!((w * h) as f64 <= 1.01 * best as f64, "{w}x{h} vs sweep minimum {best}");
    assert!(out.join("x/aligned.png").is_file() && out.join("x/tilted.png").is_file());
}

#[test]
fn preprocess_fails_only_when_every_image_fails() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir_all(&input).unwrap();
    write_png(&GrainImage::black(20, 20).unwrap(), input.join("blank.png")).unwrap();
    assert_ne!(code(&["preprocess", "--input", s(&input), "--out", s(&dir.path().join("o"))]), 0);
}

#[test]
fn train_echoes_defaults_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut args = vec!["train", "--per-class", "3"];
    args.extend_from_slice(&SMALL);
    for out in [&a, &b] {
        let mut run = args.clone();
        run.extend_from_slice(&["--out", s(out)]);
        ok(&run);
    }
    let summary = json(&a.join("summary.json"));
    assert_eq!(summary["config"]["epochs"], 30);
    assert_eq!(summary["config"]["batch_size"], 32);
    assert_eq!(summary["config"]["optimizer"]["kind"], "sgd");
    assert_eq!(summary["mode"], "flat");
    for f in ["model.gfn", "report.csv", "confusion.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |mut v: Value| {
        v["wall_clock_seconds"] = Value::Null;
        v["reports"]["stage1"]["wall_clock_seconds"] = Value::Null;
        v["config"]["out"] = Value::Null;
        v
    };
    assert_eq!(strip(summary), strip(json(&b.join("summary.json"))));
    let manifest = |dir: &Path| {
        let mut v = json(&dir.join("manifest.json"));
        v["config"]["out"] = Value::Null;
        v
    };
    assert_eq!(manifest(&a), manifest(&b));
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 31);
}

#[test]
fn eval_reproduces_the_training_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run, &["--merge", "AK: Arborio, Karacadag"]);
    let stdout = ok(&["eval", "--model", s(&run)]);
    let summary = json(&run.join("summary.json"));
    let metrics = json(&run.join("eval/metrics.json"));
    assert_eq!(metrics["overall"], summary["test_accuracy"]);
    assert_eq!(metrics["stage1"], summary["stage1_accuracy"]);
    assert!(stdout.contains("stage 2 AK"), "{stdout}");
    let confusion = fs::read_to_string(run.join("eval/confusion.csv")).unwrap();
    assert_eq!(
        confusion.lines().next().unwrap(),
        "true\\predicted,Arborio,Basmati,Ipsala,Jasmine,Karacadag"
    );
    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["mode"], "hierarchical");
    assert_eq!(manifest["stage1_classes"], serde_json::json!(["AK", "Basmati", "Ipsala", "Jasmine"]));
    assert!(run.join("stage1.gfn").is_file() && run.join("stage2-0.gfn").is_file());
}

#[test]
fn eval_on_a_directory_checks_the_class_names() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_small(&run, &[]);
    let data = dir.path().join("data");
    let mut synth = vec!["synth", "--per-class", "3", "--out", s(&data)];
    synth.extend_from_slice(&SMALL[..4]);
    ok(&synth);
    let stdout = ok(&["eval", "--model", s(&run), "--data", s(&data)]);
    assert!(stdout.contains("on 15 samples"), "{stdout}");

    let other = dir.path().join("other");
    let mut synth = vec!["synth", "--preset", "domestic6", "--per-class", "2", "--out", s(&other)];
    synth.extend_from_slice(&SMALL[..4]);
    ok(&synth);
    assert_eq!(code(&["eval", "--model", s(&run), "--data", s(&other)]), 1);
}

fn distribution(line: &str) -> Vec<(String, f64)> {
    line.split_whitespace()
        .filter_map(|t| t.split_once('='))
        .map(|(k, v)| (k.to_string(), v.parse().unwrap()))
        .collect()
}

#[test]
fn infer_reports_routing_and_normalized_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut synth = vec!["synth", "--per-class", "40", "--out", s(&data)];
    synth.extend_from_slice(&SMALL[..4]);
    ok(&synth);
    let run = dir.path().join("run");
    let mut train = vec!["train", "--data", s(&data), "--optimizer", "adam", "--epochs", "40"];
    train.extend_from_slice(&["--crop", "window:100", "--merge", "AK: Arborio, Karacadag"]);
    train.extend_from_slice(&["--out", s(&run)]);
    ok(&train);

    let (mut direct, mut routed) = (0, 0);
    for img in files(&data).iter().step_by(7) {
        let stdout = ok(&["infer", "--model", s(&run), s(img)]);
        let lines: Vec<&str> = stdout.lines().collect();
        let class = lines[0].strip_prefix("class: ").unwrap();
        let stage1 = distribution(lines[1]);
        assert_eq!(stage1.len(), 4);
        assert!((stage1.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-6);
        let top = stage1.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        if top.0 == "AK" {
            routed += 1;
            assert!(lines[2].starts_with("stage 2 (AK):"), "{stdout}");
            let stage2 = distribution(lines[2]);
            assert!((stage2.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(class == "Arborio" || class == "Karacadag");
        } else {
            direct += 1;
            assert_eq!(lines[2], "stage 2: not invoked");
            assert_eq!(class, top.0);
        }
    }
    assert!(direct > 0 && routed > 0, "{direct} direct, {routed} routed");
    let blank = dir.path().join("blank.png");
    write_png(&GrainImage::black(100, 100).unwrap(), &blank).unwrap();
    let out = grainform(&["infer", "--model", s(&run), s(&blank)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no grain found"));
}

#[test]
fn seed_sweeps_report_mean_and_stdev() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    let stdout = train_small(&sweep, &["--seeds", "3", "--seed", "5"]);
    assert!(stdout.contains("over 3 seeds"), "{stdout}");
    let summary = json(&sweep.join("sweep.json"));
    assert_eq!(summary["seeds"], serde_json::json!([5, 6, 7]));
    let values: Vec<f64> = summary["test_accuracy"]["values"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    assert!((summary["test_accuracy"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    for seed in [5, 6, 7] {
        let run = json(&sweep.join(format!("seed-{seed}/summary.json")));
        assert_eq!(run["seed"], seed);
    }

    let csv_path = dir.path().join("table.csv");
    let stdout = ok(&["report", s(&sweep), "--csv", s(&csv_path)]);
    assert!(stdout.contains("over 3 runs"), "{stdout}");
    let table = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("run,mode,optimizer,seed,epochs,"));
}

#[test]
fn config_files_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# tiny hierarchical run\n\
         synth = ak-overlap\n\
         per_class = 6\n\
         canvas_px = 100\n\
         px_per_mm = 8\n\
         crop = window:100\n\
         optimizer = rmsprop\n\
         epochs = 9\n\
         merge = AK: Arborio, Karacadag\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--epochs", "2", "--no-stratify", "--out", s(&run)]);
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["config"]["epochs"], 2);
    assert_eq!(summary["config"]["stratify"], false);
    assert_eq!(summary["config"]["optimizer"]["kind"], "rmsprop");
    assert_eq!(summary["config"]["optimizer"]["rho"], 0.9);
    assert_eq!(summary["mode"], "hierarchical");
    assert_eq!(summary["train_samples"].as_u64().unwrap() + summary["test_samples"].as_u64().unwrap(), 30);

    fs::write(&cfg, "epochs = lots\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&cfg), "--out", s(&run)]), 1);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&["train", "--epochs", "0", "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--merge", "AK: Arborio, Nope", "--out", s(&out)]), 1);
    assert_eq!(code(&["train", "--no-such-flag"]), 1);
    assert_eq!(code(&["train", "--data", "/no/such/dir", "--out", s(&out)]), 3);
    assert_eq!(code(&["eval", "--model", s(dir.path())]), 3);

    let diverged = grainform(&[
        "train", "--per-class", "3", "--canvas-px", "100", "--px-per-mm", "8", "--crop",
        "window:100", "--lr", "1e300", "--epochs", "3", "--out", s(&out),
    ]);
    assert_eq!(diverged.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("diverged: epoch "));

    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("manifest.json"), "{").unwrap();
    assert_eq!(code(&["eval", "--model", s(&out)]), 3);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let mut args = vec!["train", "--per-class", "4", "--epochs", "2"];
        args.extend_from_slice(&SMALL);
        args.extend_from_slice(&["--merge", "AK: Arborio, Karacadag", "--out", s(&out)]);
        let status = Command::new(env!("CARGO_BIN_EXE_grainform"))
            .args(&args)
            .env("GRAINFORM_THREADS", threads)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        runs.push(out);
    }
    for f in ["stage1.gfn", "stage2-0.gfn", "confusion.csv", "report-stage2-0.csv"] {
        assert_eq!(fs::read(runs[0].join(f)).unwrap(), fs::read(runs[1].join(f)).unwrap(), "{f}");
    }
    let status = Command::new(env!("CARGO_BIN_EXE_grainform"))
        .args(["report", s(&runs[0])])
        .env("GRAINFORM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}
