use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hypergeo::formats::{read_dataset, CheckpointFile};

fn hypergeo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hypergeo"))
        .args(args)
        .current_dir(dir)
        .env_remove("HYPERGEO_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hypergeo(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 8] = [
    "--per-class",
    "24",
    "--dim",
    "16",
    "--nuisance-dims",
    "4",
    "--classes",
    "27",
];

fn small_data(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec![
        "gen-data",
        "--out",
        name,
        "--depth",
        "3",
        "--branching",
        "3",
    ];
    args.extend(SMALL);
    args.extend(extra);
    ok(dir, &args);
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn gen_data_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let summary = ok(p, &["gen-data", "--out", "a.json", "--seed", "9"]);
    ok(p, &["gen-data", "--out", "b.json", "--seed", "9"]);
    assert_eq!(
        fs::read(p.join("a.json")).unwrap(),
        fs::read(p.join("b.json")).unwrap()
    );
    assert!(p.join("a.json.manifest.json").exists());

    let data = read_dataset(&p.join("a.json")).unwrap();
    assert_eq!(data.len(), 64 * 40);
    let rows = csv_rows(&summary);
    assert_eq!(rows[0], ["points", "classes", "delta_rel"]);
    assert_eq!(rows[1][0], "2560");

    // rewrite the parsed data and compare bytes
    hypergeo::formats::write_dataset(&p.join("c.json"), &data).unwrap();
    assert_eq!(
        fs::read(p.join("a.json")).unwrap(),
        fs::read(p.join("c.json")).unwrap()
    );
}

#[test]
fn zero_noise_collapses_every_class() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "d.json", &["--noise", "0"]);
    let data = read_dataset(&dir.path().join("d.json")).unwrap();
    for members in data.class_members() {
        let first = data.points[members[0]].coords();
        assert!(members.iter().all(|&i| data.points[i].coords() == first));
    }
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "gen-data",
            "--out",
            "flag.json",
            "--seed",
            "7",
            "--per-class",
            "2",
        ],
    );
    let out = Command::new(env!("CARGO_BIN_EXE_hypergeo"))
        .args([
            "gen-data",
            "--out",
            "env.json",
            "--seed",
            "1",
            "--per-class",
            "2",
        ])
        .current_dir(p)
        .env("HYPERGEO_SEED", "7")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(p.join("flag.json")).unwrap(),
        fs::read(p.join("env.json")).unwrap()
    );

    let bad = Command::new(env!("CARGO_BIN_EXE_hypergeo"))
        .args(["gen-data", "--out", "x.json"])
        .current_dir(p)
        .env("HYPERGEO_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn delta_separates_tree_from_cloud_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-data", "--out", "tree.json", "--per-class", "10"]);
    ok(
        p,
        &[
            "gen-data",
            "--out",
            "cloud.json",
            "--per-class",
            "10",
            "--control",
        ],
    );
    let args = ["--samples", "100", "--trials", "20"];
    let tree = ok(p, &[&["delta", "--in", "tree.json"][..], &args].concat());
    let cloud = ok(p, &[&["delta", "--in", "cloud.json"][..], &args].concat());
    let rows = csv_rows(&tree);
    assert_eq!(
        rows[0],
        [
            "delta",
            "diam",
            "delta_rel",
            "sample_size",
            "trials",
            "seed"
        ]
    );
    let t: f64 = rows[1][2].parse().unwrap();
    let c: f64 = csv_rows(&cloud)[1][2].parse().unwrap();
    assert!(t < 0.3 && t < c, "tree {t} cloud {c}");

    let threaded = ok(
        p,
        &[&["delta", "--in", "tree.json", "--threads", "3"][..], &args].concat(),
    );
    assert_eq!(tree, threaded);

    let out = hypergeo(p, &["delta", "--in", "tree.json", "--samples", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient points"));

    fs::write(p.join("broken.json"), "{\"dim\": 3").unwrap();
    assert_eq!(
        hypergeo(p, &["delta", "--in", "broken.json"]).status.code(),
        Some(2)
    );
    assert_eq!(
        hypergeo(p, &["delta", "--in", "missing.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gradcheck_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--out", "probes.csv"]);
    assert!(out.is_empty());
    let text = fs::read_to_string(dir.path().join("probes.csv")).unwrap();
    let rows = csv_rows(&text);
    assert_eq!(
        rows[0],
        ["param", "index", "analytic", "numeric", "rel_error"]
    );
    assert!(rows[1..]
        .iter()
        .all(|r| r[4].parse::<f64>().unwrap() < 1e-4));
    assert!(dir.path().join("probes.csv.manifest.json").exists());

    let strict = hypergeo(dir.path(), &["gradcheck", "--tolerance", "0"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn train_eval_mine_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "d.json", &[]);
    fs::write(
        p.join("cfg.json"),
        r#"{"rank": 4, "hidden": 16, "steps": 30}"#,
    )
    .unwrap();
    ok(
        p,
        &[
            "train",
            "--data",
            "d.json",
            "--config",
            "cfg.json",
            "--out-checkpoint",
            "ck.json",
            "--out-metrics",
            "loss.csv",
        ],
    );
    let loss = fs::read_to_string(p.join("loss.csv")).unwrap();
    let rows = csv_rows(&loss);
    assert_eq!(rows[0], ["step", "loss", "hard_queries"]);
    assert_eq!(rows.len(), 31);
    for f in ["ck.json", "loss.csv"] {
        let manifest = fs::read_to_string(p.join(format!("{f}.manifest.json"))).unwrap();
        assert!(manifest.contains("\"command\":\"train\""));
    }

    // T = 1 routes nothing to the adapted measure
    let eval = ok(
        p,
        &[
            "eval",
            "--data",
            "d.json",
            "--checkpoint",
            "ck.json",
            "--episodes",
            "20",
            "--threshold",
            "1",
        ],
    );
    let rows = csv_rows(&eval);
    assert_eq!(rows[0][2], "adapted_accuracy");
    assert_eq!(rows[1][2], rows[1][4]);
    assert_eq!(rows[1][8], "0.0");

    let base = [
        "eval",
        "--data",
        "d.json",
        "--checkpoint",
        "ck.json",
        "--episodes",
        "20",
    ];
    assert_eq!(
        ok(p, &base),
        ok(p, &[&base[..], &["--threads", "2"]].concat())
    );

    let mined = ok(
        p,
        &[
            "mine",
            "--data",
            "d.json",
            "--checkpoint",
            "ck.json",
            "--threshold",
            "0.9",
        ],
    );
    let rows = csv_rows(&mined);
    assert_eq!(rows[0], ["query_index", "d1", "d2", "ratio", "selected"]);
    assert_eq!(rows.len(), 1 + 5 * 15);
    for r in &rows[1..] {
        let ratio: f64 = r[3].parse().unwrap();
        assert_eq!(r[4] == "true", ratio > 0.9);
    }
}

#[test]
fn checkpoint_errors_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    small_data(p, "d.json", &[]);
    ok(
        p,
        &[
            "train",
            "--data",
            "d.json",
            "--steps",
            "1",
            "--out-checkpoint",
            "ck.json",
            "--out-metrics",
            "loss.csv",
        ],
    );
    let text = fs::read_to_string(p.join("ck.json")).unwrap();
    let mut ck: CheckpointFile = serde_json::from_str(&text).unwrap();

    let mut wrong_version = ck.clone();
    wrong_version.format_version = 9;
    fs::write(
        p.join("v.json"),
        serde_json::to_string(&wrong_version).unwrap(),
    )
    .unwrap();
    let out = hypergeo(
        p,
        &[
            "eval",
            "--data",
            "d.json",
            "--checkpoint",
            "v.json",
            "--episodes",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format version"));

    ck.config.rank += 1;
    fs::write(p.join("s.json"), serde_json::to_string(&ck).unwrap()).unwrap();
    let out = hypergeo(
        p,
        &[
            "eval",
            "--data",
            "d.json",
            "--checkpoint",
            "s.json",
            "--episodes",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape"));

    // a checkpoint for another dimension
    ok(
        p,
        &[
            "gen-data",
            "--out",
            "wide.json",
            "--per-class",
            "24",
            "--dim",
            "20",
            "--nuisance-dims",
            "4",
        ],
    );
    let out = hypergeo(
        p,
        &[
            "eval",
            "--data",
            "wide.json",
            "--checkpoint",
            "ck.json",
            "--episodes",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(2));

    fs::write(p.join("cfg.json"), r#"{"stepz": 3}"#).unwrap();
    let out = hypergeo(
        p,
        &[
            "train",
            "--data",
            "d.json",
            "--config",
            "cfg.json",
            "--out-checkpoint",
            "x.json",
            "--out-metrics",
            "x.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_lowrank_writes_all_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &[
            "bench-lowrank",
            "--dims",
            "8,16",
            "--ranks",
            "2,4",
            "--trials",
            "5",
            "--out",
            "err.csv",
            "--out-slopes",
            "slopes.csv",
            "--out-timing",
            "time.csv",
            "--timing-dim",
            "32",
            "--timing-ranks",
            "2,4",
            "--timing-hidden",
            "8",
            "--timing-pairs",
            "2",
            "--timing-repeats",
            "1",
        ],
    );
    let err = csv_rows(&fs::read_to_string(p.join("err.csv")).unwrap());
    assert_eq!(
        err[0],
        ["dim", "rank", "median", "q25", "q75", "q90", "max", "samples"]
    );
    // ranks 2, 4 plus k = n for each dimension
    assert_eq!(err.len(), 1 + 3 + 3);
    assert!(err[1..]
        .iter()
        .filter(|r| r[0] == r[1])
        .all(|r| r[2] == "0.0"));
    let slopes = csv_rows(&fs::read_to_string(p.join("slopes.csv")).unwrap());
    assert_eq!(slopes[0], ["ratio", "points", "slope"]);
    let time = csv_rows(&fs::read_to_string(p.join("time.csv")).unwrap());
    assert_eq!(
        time[0],
        [
            "dim",
            "rank",
            "hidden",
            "projection_madds",
            "seconds_per_pair"
        ]
    );
    assert_eq!(time.len(), 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hypergeo(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        hypergeo(dir.path(), &["gen-data", "--out", "x.json", "--depth", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hypergeo(dir.path(), &["gen-data", "--out", "no/such/dir/x.json"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hypergeo(dir.path(), &["gradcheck", "--threads", "0"])
            .status
            .code(),
        Some(2)
    );
}
