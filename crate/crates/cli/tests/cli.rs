//! End-to-end checks of the binary: the full subcommand chain on a small
//! corpus, exit codes, and flag handling.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_webgraph-lab"))
}

fn run_ok(args: &[&str]) {
    let output = bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "`webgraph-lab {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn pipeline_chain_produces_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |name: &str| root.join(name).to_string_lossy().to_string();

    run_ok(&["gen", "--out", &p("corpus"), "--seed", "5", "--pages", "8"]);
    assert!(root.join("corpus/manifest.json").exists());
    assert!(root.join("corpus/pages/page_7.jsonl").exists());
    assert!(root.join("corpus/rules.txt").exists());

    run_ok(&["build", "--corpus", &p("corpus"), "--out", &p("build")]);
    assert!(root.join("build/graphs/page_0.json").exists());

    run_ok(&[
        "features",
        "--graphs",
        &p("build"),
        "--feature-set",
        "webgraph_full",
        "--rules",
        &p("corpus/rules.txt"),
        "--out",
        &p("features"),
    ]);
    let csv = std::fs::read_to_string(root.join("features/features/page_0.csv")).unwrap();
    assert!(csv.starts_with("node_id,label,"));

    run_ok(&[
        "label",
        "--graphs",
        &p("build"),
        "--rules",
        &p("corpus/rules.txt"),
        "--out",
        &p("labels"),
    ]);
    assert!(root.join("labels/labels/page_0.csv").exists());

    run_ok(&[
        "train",
        "--features",
        &p("features"),
        "--labels",
        &p("labels"),
        "--feature-set",
        "webgraph_full",
        "--seed",
        "3",
        "--n-trees",
        "10",
        "--out",
        &p("model"),
    ]);
    assert!(root.join("model/model.json").exists());

    run_ok(&[
        "eval",
        "--features",
        &p("features"),
        "--labels",
        &p("labels"),
        "--feature-set",
        "webgraph_full",
        "--k",
        "4",
        "--seed",
        "3",
        "--n-trees",
        "10",
        "--out",
        &p("eval"),
    ]);
    assert!(root.join("eval/eval_report.json").exists());
    assert!(root.join("eval/importance.csv").exists());

    run_ok(&[
        "attack-content",
        "--graphs",
        &p("build"),
        "--model",
        &p("model/model.json"),
        "--policy",
        "domain,query_values",
        "--collusion",
        "--seed",
        "9",
        "--out",
        &p("attack"),
    ]);
    assert!(root.join("attack/summary.json").exists());

    run_ok(&[
        "attack-structure",
        "--graphs",
        &p("build"),
        "--model",
        &p("model/model.json"),
        "--policy",
        "query_values",
        "--max-iter",
        "2",
        "--sample-per-bin",
        "1",
        "--seed",
        "9",
        "--out",
        &p("attack_structure"),
    ]);
    assert!(root.join("attack_structure/summary.json").exists());

    run_ok(&["report", "--attacks", &p("attack"), "--out", &p("report")]);
    let report = std::fs::read_to_string(root.join("report/report.csv")).unwrap();
    assert!(report.lines().count() > 1);

    // Every stage echoed its resolved configuration.
    for stage in ["corpus", "build", "features", "labels", "model", "eval", "attack", "report"] {
        assert!(
            root.join(stage).join("resolved_config.json").exists(),
            "missing config echo in {stage}"
        );
    }
}

#[test]
fn missing_input_path_exits_one_and_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out").to_string_lossy().to_string();
    let output = bin().args(["build", "--out", &out]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--corpus"), "stderr was: {stderr}");

    let output = bin()
        .args(["build", "--corpus", "/nonexistent/corpus", "--out", &out])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn malformed_trace_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    std::fs::write(corpus.join("page_0.jsonl"), "{broken json\n").unwrap();
    let out = dir.path().join("out").to_string_lossy().to_string();
    let output = bin()
        .args(["build", "--corpus", &corpus.to_string_lossy(), "--out", &out])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_feature_set_is_a_usage_error() {
    let output = bin()
        .args(["features", "--graphs", "x", "--feature-set", "bogus", "--out", "y"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bogus"));
}

#[test]
fn config_file_supplies_options_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("run.json");
    std::fs::write(
        &config,
        r#"{"gen": {"n_pages": 3, "seed": 77}}"#,
    )
    .unwrap();
    let out_a = root.join("a");
    let out_b = root.join("b");
    run_ok(&[
        "--config",
        &config.to_string_lossy(),
        "gen",
        "--out",
        &out_a.to_string_lossy(),
    ]);
    assert!(out_a.join("pages/page_2.jsonl").exists());
    assert!(!out_a.join("pages/page_3.jsonl").exists());
    // The seed flag overrides the config file.
    run_ok(&[
        "--config",
        &config.to_string_lossy(),
        "gen",
        "--seed",
        "78",
        "--out",
        &out_b.to_string_lossy(),
    ]);
    let a = std::fs::read_to_string(out_a.join("pages/page_0.jsonl")).unwrap();
    let b = std::fs::read_to_string(out_b.join("pages/page_0.jsonl")).unwrap();
    assert_ne!(a, b);
    let echo = std::fs::read_to_string(out_b.join("resolved_config.json")).unwrap();
    assert!(echo.contains("\"seed\": 78"), "echo was: {echo}");
}

#[test]
fn jobs_flag_does_not_change_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |name: &str| root.join(name).to_string_lossy().to_string();
    run_ok(&["gen", "--out", &p("corpus"), "--seed", "5", "--pages", "6"]);
    run_ok(&["--jobs", "1", "build", "--corpus", &p("corpus"), "--out", &p("b1")]);
    run_ok(&["--jobs", "4", "build", "--corpus", &p("corpus"), "--out", &p("b4")]);
    for i in 0..6 {
        let a = std::fs::read(root.join(format!("b1/graphs/page_{i}.json"))).unwrap();
        let b = std::fs::read(root.join(format!("b4/graphs/page_{i}.json"))).unwrap();
        assert_eq!(a, b, "graph page_{i} differs across --jobs settings");
    }
}
