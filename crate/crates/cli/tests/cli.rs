use std::path::Path;
use std::process::{Command, Output};

fn archspy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_archspy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = archspy(args);
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

#[test]
fn simulate_then_long_extract_is_close_to_truth() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("obs.txt");
    ok(&[
        "simulate",
        "--arch",
        "ResNet50",
        "--queries",
        "10",
        "--seed",
        "7",
        "--out",
        p(&obs),
    ]);
    let csv = ok(&[
        "extract",
        "--mode",
        "L",
        "--truth",
        "--input",
        p(&obs),
        "--format",
        "csv",
    ]);
    assert!(csv.contains("# seed=7"));
    let row = csv.lines().find(|l| l.starts_with("ResNet50,L,")).unwrap();
    let cell = row.rsplit(',').next().unwrap();
    let (err, den) = cell.split_once('/').unwrap();
    let err: f64 = err.parse().unwrap();
    assert_eq!(den, "172");
    assert!(err <= 6.0, "error {err}");
}

#[test]
fn short_extract_reads_ten_observations() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "extract".to_string(),
        "--mode".into(),
        "S".into(),
        "--truth".into(),
    ];
    for i in 0..10 {
        let f = dir.path().join(format!("o{i}.txt"));
        ok(&[
            "simulate",
            "--arch",
            "VGG19",
            "--seed",
            &i.to_string(),
            "--out",
            p(&f),
        ]);
        args.push("--input".into());
        args.push(p(&f).to_string());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let md = ok(&args);
    assert!(md.contains("| VGG19 | S |"));
    // too few observations is a data error
    let out = archspy(&args[..6]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn noiseless_vgg16_is_identified_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("v.txt");
    ok(&[
        "simulate",
        "--arch",
        "VGG16",
        "--noiseless",
        "--out",
        p(&obs),
    ]);
    let csv = ok(&["reconstruct", "--input", p(&obs), "--format", "csv"]);
    assert!(csv.contains("# identified=VGG16\n# distance=0\n"), "{csv}");
}

#[test]
fn ground_truth_trace_observes_like_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.txt");
    ok(&[
        "simulate",
        "--arch",
        "DenseNet121",
        "--ground-truth",
        "--out",
        p(&gt),
    ]);
    let observed = ok(&["observe", "--input", p(&gt), "--seed", "5"]);
    let direct = ok(&["simulate", "--arch", "DenseNet121", "--seed", "5"]);
    assert_eq!(observed, direct);
}

#[test]
fn noiseless_fingerprint_is_perfect() {
    let md = ok(&[
        "fingerprint",
        "--task",
        "all13",
        "--noiseless",
        "--seed",
        "1",
    ]);
    assert!(md.contains("| all13 | 13 | 650 | 1.0000 |"), "{md}");
    assert!(md.contains("<!-- seed=1 -->"));
}

#[test]
fn saved_dataset_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d.csv");
    let a = ok(&[
        "fingerprint",
        "--task",
        "family",
        "--per-arch-n",
        "10",
        "--save-dataset",
        p(&ds),
    ]);
    let b = ok(&["fingerprint", "--task", "family", "--dataset", p(&ds)]);
    fn rows(s: &str) -> Vec<&str> {
        s.lines().filter(|l| l.starts_with("| family")).collect()
    }
    assert_eq!(rows(&a), rows(&b));
}

#[test]
fn freeze_recovers_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let obs = dir.path().join("t.txt");
    ok(&[
        "simulate",
        "--arch",
        "VGG16",
        "--mode",
        "training",
        "--frozen-prefix",
        "10",
        "--queries",
        "4",
        "--noiseless",
        "--out",
        p(&obs),
    ]);
    let csv = ok(&["freeze", "--input", p(&obs), "--format", "csv"]);
    assert!(csv.lines().any(|l| l == "VGG16,4,6.00,6,10"), "{csv}");
}

#[test]
fn defend_lists_baseline_first() {
    let csv = ok(&["defend", "--decoy", "C:1", "--runs", "3", "--format", "csv"]);
    let rows: Vec<&str> = csv.lines().filter(|l| l.starts_with("ResNet50,")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("ResNet50,none,"));
    let out = archspy(&["defend"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn otsu_threshold_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("lat.txt");
    std::fs::write(&f, "80\n82\n81\n300\n310\n").unwrap();
    let csv = ok(&["calibrate", "otsu", "--input", p(&f), "--format", "csv"]);
    assert!(csv.lines().any(|l| l == "5,83,3,2"), "{csv}");
    std::fs::write(&f, "80\n80\n").unwrap();
    assert_eq!(
        archspy(&["calibrate", "otsu", "--input", p(&f)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unknown_arch_lists_valid_names() {
    let out = archspy(&["simulate", "--arch", "AlexNet"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    for name in ["VGG16", "ResNet152", "InceptionResNet", "MobileNetV2"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(
        archspy(&["simulate", "--arch", "VGG16", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(archspy(&["teleport"]).status.code(), Some(1));
    assert_eq!(
        archspy(&["--set", "nope=1", "simulate", "--arch", "VGG16"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(archspy(&["--help"]).status.code(), Some(0));
}

#[test]
fn unreadable_input_names_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.txt");
    std::fs::write(&f, "# archspy 0.1.0\n# kind=observation\n0,QUERY\n1,WARP\n").unwrap();
    let out = archspy(&["reconstruct", "--input", p(&f)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("bad.txt") && err.contains("line 4"), "{err}");
}

#[test]
fn repeated_runs_are_identical_across_thread_counts() {
    let args = [
        "defend",
        "--decoy",
        "C:1,R:1",
        "--obfuscate",
        "insert:3xconv",
        "--runs",
        "6",
    ];
    let one = ok(&[&["--threads", "1"], &args[..]].concat());
    let many = ok(&[&["--threads", "8"], &args[..]].concat());
    assert_eq!(one, many);
    assert_eq!(one, ok(&args));
}

#[test]
fn report_then_render_only() {
    let dir = tempfile::tempdir().unwrap();
    let listed = ok(&["report", "--dir", p(dir.path())]);
    assert!(listed.lines().count() > 20);
    let md = std::fs::read(dir.path().join("tables/decoy.md")).unwrap();
    std::fs::remove_dir_all(dir.path().join("tables")).unwrap();
    ok(&[
        "report",
        "--dir",
        p(dir.path()),
        "--render-only",
        "--format",
        "md",
    ]);
    assert_eq!(
        std::fs::read(dir.path().join("tables/decoy.md")).unwrap(),
        md
    );
    assert!(!dir.path().join("tables/decoy.csv").exists());
}
