use std::path::Path;
use std::process::{Command, Output};

use geoverify::fixtures;
use geoverify::imageio::write_image;

fn geoverify(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoverify")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = geoverify(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

/// Data rows of a versioned CSV as column maps.
fn rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn optimize_abs1d_reaches_grid_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&[
        "optimize", "--fn", "abs1d", "--bounds", "0,1", "--depth", "6", "--alpha", "1", "--max-iters", "50", "--out",
        s(&out),
    ]);
    let trace = read(&out.join("trace.csv"));
    assert!(trace.starts_with("# geoverify trace v1\n"));
    let last = rows(&trace).pop().unwrap();
    let l_min: f64 = last["l_min"].parse().unwrap();
    assert!(l_min <= 3f64.powi(-6), "{l_min}");
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["function"]["name"], "abs1d");
    assert_eq!(summary["run"]["l_min"].as_f64().unwrap(), l_min);
}

#[test]
fn missing_bounds_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = geoverify(&["optimize", "--fn", "abs1d", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bounds"));
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn bad_config_values_fail() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["optimize", "--fn", "nope", "--bounds", "0,1"],
        vec!["optimize", "--fn", "abs1d", "--bounds", "1,0"],
        vec!["optimize", "--fn", "abs1d", "--bounds", "0,1", "--tau", "0"],
    ] {
        let mut args = args;
        args.extend(["--out", s(dir.path())]);
        assert!(!geoverify(&args).status.success(), "{args:?}");
    }
}

#[test]
fn larger_alpha_and_depth_issue_more_queries_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let per_iteration = |alpha: &str, depth: &str| {
        let out = dir.path().join(format!("a{alpha}d{depth}"));
        ok(&[
            "optimize", "--fn", "multi-basin", "--bounds", "0,1", "--bounds", "0,1", "--alpha", alpha, "--depth", depth,
            "--max-iters", "40", "--max-queries", "100000", "--out", s(&out),
        ]);
        let run = &json(&out.join("summary.json"))["run"];
        run["queries"].as_f64().unwrap() / run["iterations"].as_f64().unwrap()
    };
    let narrow = per_iteration("1", "7");
    let wide = per_iteration("3", "7");
    assert!(wide > narrow, "{wide} <= {narrow}");
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "optimize", "--fn", "separable-abs-nd", "--bounds", "0,1", "--dim", "3", "--max-iters", "60", "--out", s(&out),
    ];
    ok(&args);
    let first = std::fs::read(out.join("trace.csv")).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(out.join("trace.csv")).unwrap());
}

#[test]
fn flags_override_config_and_header_echoes_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "fn = abs1d\nbounds = 0,1\ndepth = 3\nmax-iters = 20\nout = results\n").unwrap();
    ok(&["optimize", "--config", s(&cfg), "--depth", "5"]);
    let trace = read(&dir.path().join("results/trace.csv"));
    assert!(trace.contains("# depth = 5\n"), "{trace}");
    assert!(trace.contains("# max-iters = 20\n"));
    assert!(trace.contains("# fn = abs1d\n"));
}

#[test]
fn fixture_and_verify_report_every_example() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fixture", "--out", s(dir.path()), "--count", "4"]);
    ok(&["verify", "--config", s(&dir.path().join("verify.cfg")), "--max-iters", "30", "--max-queries", "1500"]);
    let csv = read(&dir.path().join("results/verify.csv"));
    assert!(csv.starts_with("# geoverify verify v1\n"));
    let rows = rows(&csv);
    assert_eq!(rows.len(), 4);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["index"], i.to_string());
        assert!(["falsified", "verified-estimate", "undecided"].contains(&r["verdict"].as_str()));
        assert!(r["wall_ms"].parse::<f64>().unwrap() >= 0.0);
    }
    let summary = json(&dir.path().join("results/summary.json"));
    assert_eq!(summary["examples"], 4);
    let counted: u64 = ["verified", "falsified", "undecided", "clean_errors"]
        .iter()
        .map(|k| summary[k].as_u64().unwrap())
        .sum();
    assert_eq!(counted, 4);
}

#[test]
fn zero_range_factor_is_not_searched() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fixture", "--out", s(dir.path()), "--count", "3"]);
    ok(&[
        "verify", "--config", s(&dir.path().join("verify.cfg")), "--rotation", "0", "--max-iters", "30", "--out",
        s(&dir.path().join("r0")),
    ]);
    for r in rows(&read(&dir.path().join("r0/verify.csv"))) {
        assert_eq!(r["w_rotation"].parse::<f64>().unwrap(), 0.0);
        assert!(r["queries"].parse::<usize>().unwrap() > 1);
    }
}

#[test]
fn all_zero_ranges_use_the_clean_margin() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixtures::write(dir.path(), 2, 0).unwrap();
    ok(&[
        "verify", "--weights", s(&p.weights), "--images", s(&p.images), "--labels", s(&p.labels), "--out",
        s(&dir.path().join("o")),
    ]);
    for r in rows(&read(&dir.path().join("o/verify.csv"))) {
        assert_eq!(r["queries"], "1");
        assert_eq!(r["l_min"], r["clean_margin"]);
    }
}

#[test]
fn misclassified_examples_are_skipped_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("w.txt"), fixtures::model().to_text()).unwrap();
    write_image(&d.join("a.txt"), &fixtures::prototype(0)).unwrap();
    write_image(&d.join("b.txt"), &fixtures::prototype(1)).unwrap();
    std::fs::write(d.join("list.txt"), "a.txt\nb.txt\n").unwrap();
    // The first label is wrong.
    std::fs::write(d.join("labels.txt"), "1\n1\n").unwrap();
    let (w, list, labels) = (d.join("w.txt"), d.join("list.txt"), d.join("labels.txt"));
    let (skip, attack) = (d.join("skip"), d.join("attack"));
    let base = [
        "verify", "--weights", s(&w), "--images", s(&list), "--labels", s(&labels), "--rotation", "10", "--max-iters",
        "20",
    ];
    let mut args = base.to_vec();
    args.extend(["--skip-misclassified", "--out", s(&skip)]);
    ok(&args);
    let skipped = rows(&read(&d.join("skip/verify.csv")));
    assert_eq!(skipped[0]["verdict"], "clean-error");
    assert_eq!(skipped[0]["queries"], "1");
    assert_ne!(skipped[1]["verdict"], "clean-error");
    assert_eq!(json(&d.join("skip/summary.json"))["clean_errors"], 1);

    let mut args = base.to_vec();
    args.extend(["--out", s(&attack)]);
    ok(&args);
    let attacked = rows(&read(&d.join("attack/verify.csv")));
    assert_eq!(attacked[0]["verdict"], "falsified");
}

#[test]
fn unreadable_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixtures::write(dir.path(), 2, 0).unwrap();
    let missing = dir.path().join("missing.txt");
    for args in [
        ["--weights", s(&missing), "--images", s(&p.images), "--labels", s(&p.labels)],
        ["--weights", s(&p.weights), "--images", s(&missing), "--labels", s(&p.labels)],
        ["--weights", s(&p.weights), "--images", s(&p.images), "--labels", s(&missing)],
    ] {
        let mut full = vec!["verify"];
        full.extend(args);
        full.extend(["--out", s(dir.path())]);
        assert!(!geoverify(&full).status.success(), "{full:?}");
    }
}

#[test]
fn compare_on_rotation_only_agrees_on_the_verified_set() {
    let dir = tempfile::tempdir().unwrap();
    let p = fixtures::write(dir.path(), 8, 0).unwrap();
    ok(&[
        "compare", "--weights", s(&p.weights), "--images", s(&p.images), "--labels", s(&p.labels), "--rotation", "20",
        "--depth", "6", "--max-iters", "400", "--max-queries", "5000", "--oracle-random", "2000", "--out",
        s(&dir.path().join("cmp")),
    ]);
    let table = read(&dir.path().join("cmp/compare.csv"));
    assert!(table.starts_with("# geoverify compare v1\n"));
    let methods = rows(&table);
    let names: Vec<&str> = methods.iter().map(|m| m["method"].as_str()).collect();
    assert_eq!(names, ["geoverify", "random-pick", "grid-search"]);
    let verified: Vec<&str> = methods.iter().map(|m| m["verified"].as_str()).collect();
    assert!(verified.iter().all(|v| *v == verified[0]), "{verified:?}");
    for m in &methods {
        assert_eq!(m["examples"], "8");
        assert!(m["runtime_s"].parse::<f64>().unwrap() >= 0.0);
    }

    let detail = rows(&read(&dir.path().join("cmp/compare_examples.csv")));
    assert_eq!(detail.len(), 8);
    let mut matched = 0;
    for r in &detail {
        let geo: f64 = r["geo_l_min"].parse().unwrap();
        let grid: f64 = r["grid_min"].parse().unwrap();
        assert_eq!(r["geo_match"] == "true", geo <= grid);
        matched += usize::from(geo <= grid);
        assert_eq!(geo > 0.0 && r["geo_verdict"] == "verified-estimate", grid > 0.0);
    }
    let rate: f64 = methods[0]["match_rate"].parse().unwrap();
    assert_eq!(rate, matched as f64 / 8.0);
}

#[test]
fn compare_with_no_images_writes_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("w.txt"), fixtures::model().to_text()).unwrap();
    std::fs::write(d.join("list.txt"), "").unwrap();
    std::fs::write(d.join("labels.txt"), "").unwrap();
    let out = ok(&[
        "compare", "--weights", s(&d.join("w.txt")), "--images", s(&d.join("list.txt")), "--labels",
        s(&d.join("labels.txt")), "--rotation", "20", "--out", s(&d.join("cmp")),
    ]);
    assert!(out.status.success());
    assert!(rows(&read(&d.join("cmp/compare.csv"))).is_empty());
    assert!(rows(&read(&d.join("cmp/compare_examples.csv"))).is_empty());
}
