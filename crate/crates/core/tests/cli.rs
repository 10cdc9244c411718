use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use somstream::cli::{cmd_pipeline, parse_log, RunConfig};
use somstream::eval::load_report;
use somstream::load_model;

const GEN: &str = r#"
n_classes = 2
n_features = 2
cluster_centers = [[0.3, 0.5], [0.7, 0.5]]
cluster_radii = [0.25, 0.25]
stream_length = 3000
sd = 500
drift_kind = "displacement"
drift_step = 0.02
rng_seed = 5
"#;

fn somstream(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_somstream"))
        .current_dir(dir)
        .env_remove("SOMSTREAM_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failed(out: Output) -> String {
    assert!(!out.status.success(), "expected failure");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn stage_by_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), GEN).unwrap();

    ok(somstream(dir, &["generate", "--config", "gen.toml", "--out", "s.csv"]));
    assert!(dir.join("s.config.toml").exists());

    ok(somstream(dir, &["train", "--stream", "s.csv", "--model", "m.json", "--grid-dim", "2"]));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("m.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_train"], 300);
    assert_eq!(summary["map_sizes"].as_array().unwrap().len(), 2);

    ok(somstream(dir, &["run", "--model", "m.json", "--stream", "s.csv", "--log", "a.tsv", "--snapshot", "snap.json"]));
    let log = parse_log(&fs::read_to_string(dir.join("a.tsv")).unwrap(), "a.tsv").unwrap();
    assert_eq!(log.len(), 2700);
    assert_eq!(log[0].sequence_id, 300);
    assert!(log.iter().all(|p| !p.labels.is_empty()));
    let snap = load_model(&dir.join("snap.json")).unwrap();
    assert_eq!(snap.counts.n_total, 3000);

    ok(somstream(dir, &["run", "--model", "m.json", "--stream", "s.csv", "--log", "f.tsv", "--variant", "frozen", "--snapshot", "fsnap.json"]));
    assert!(!dir.join("fsnap.json").exists(), "frozen runs write no snapshot");

    ok(somstream(dir, &["evaluate", "--log", "a.tsv", "--stream", "s.csv", "--prefix", "adaptive", "--output-dir", "rep", "--windows", "10"]));
    let report = load_report(&dir.join("rep/adaptive_summary.json")).unwrap();
    assert_eq!(report.windows.len(), 10);
    assert!((0.0..=1.0).contains(&report.mean_macro_f));
    let table = fs::read_to_string(dir.join("rep/adaptive_windows.csv")).unwrap();
    assert_eq!(table.lines().count(), 11);
}

#[test]
fn error_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), GEN).unwrap();
    ok(somstream(dir, &["generate", "--config", "gen.toml", "--out", "s.csv"]));
    ok(somstream(dir, &["train", "--stream", "s.csv", "--model", "m.json", "--grid-dim", "2"]));

    // Unknown generator key is named.
    fs::write(dir.join("bad.toml"), format!("{GEN}\nradius_scale = 2\n")).unwrap();
    let err = failed(somstream(dir, &["generate", "--config", "bad.toml", "--out", "x.csv"]));
    assert!(err.contains("radius_scale"), "{err}");

    // A stream with a different feature count.
    fs::write(dir.join("three.csv"), "f0,f1,f2,y0,y1\n0.1,0.2,0.3,1,0\n").unwrap();
    let err = failed(somstream(dir, &["run", "--model", "m.json", "--stream", "three.csv", "--log", "x.tsv", "--whole-stream"]));
    assert!(err.contains("features"), "{err}");

    // Class 1 never appears in the offline split.
    let mut rows = String::from("f0,f1,y0,y1\n");
    for i in 0..50 {
        rows += &format!("{},0.5,1,0\n", i as f64 / 50.0);
    }
    fs::write(dir.join("one.csv"), rows).unwrap();
    let err = failed(somstream(dir, &["train", "--stream", "one.csv", "--model", "one.json", "--offline-fraction", "0.5"]));
    assert!(err.contains("[1]"), "{err}");
    assert!(!dir.join("one.json").exists());

    // Log ids beyond the stream.
    fs::write(dir.join("bad.tsv"), "sequence_id\tlabels\n1\t0\n99999\t1\n").unwrap();
    let err = failed(somstream(dir, &["evaluate", "--log", "bad.tsv", "--stream", "s.csv", "--windows", "1", "--output-dir", "r"]));
    assert!(err.contains("99999"), "{err}");

    // Version mismatch.
    let text = fs::read_to_string(dir.join("m.json")).unwrap();
    fs::write(dir.join("v2.json"), text.replacen("\"format_version\": 1", "\"format_version\": 2", 1)).unwrap();
    let err = failed(somstream(dir, &["run", "--model", "v2.json", "--stream", "s.csv", "--log", "x.tsv"]));
    assert!(err.contains("version"), "{err}");
}

#[test]
fn empty_stream_leaves_snapshot_unchanged() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), GEN).unwrap();
    ok(somstream(dir, &["generate", "--config", "gen.toml", "--out", "s.csv"]));
    ok(somstream(dir, &["train", "--stream", "s.csv", "--model", "m.json", "--grid-dim", "2"]));
    ok(somstream(dir, &["run", "--model", "m.json", "--stream", "s.csv", "--log", "a.tsv", "--snapshot", "snap.json"]));
    fs::write(dir.join("empty.csv"), "f0,f1,y0,y1\n").unwrap();
    ok(somstream(dir, &["run", "--model", "snap.json", "--stream", "empty.csv", "--log", "e.tsv", "--snapshot", "snap2.json", "--whole-stream"]));
    assert_eq!(fs::read(dir.join("snap.json")).unwrap(), fs::read(dir.join("snap2.json")).unwrap());
    assert_eq!(fs::read_to_string(dir.join("e.tsv")).unwrap(), "sequence_id\tlabels\n");
}

#[test]
fn pipeline_writes_reports_and_cleans_up_on_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), GEN).unwrap();
    let out = ok(somstream(dir, &["pipeline", "--generator", "gen.toml", "--grid-dim", "2", "--output-dir", "p"]));
    assert!(out.contains("adaptive mean macro-F"));
    for f in ["stream.csv", "model.json", "adaptive_log.tsv", "frozen_log.tsv", "adaptive_summary.json", "frozen_windows.csv", "comparison.csv"] {
        assert!(dir.join("p").join(f).exists(), "{f}");
    }
    let cmp = fs::read_to_string(dir.join("p/comparison.csv")).unwrap();
    assert!(cmp.starts_with("window_index,adaptive_macro_f,frozen_macro_f,delta"));
    assert_eq!(cmp.lines().count(), 51);

    // More windows than evaluation instances fails after training; nothing is left behind.
    let cfg = RunConfig {
        generator: Some(dir.join("gen.toml")),
        grid_dim: 2,
        windows: 5000,
        output_dir: dir.join("q"),
        ..RunConfig::default()
    };
    assert!(cmd_pipeline(&cfg).is_err());
    assert_eq!(fs::read_dir(dir.join("q")).unwrap().count(), 0);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("gen.toml"), GEN).unwrap();
    fs::write(dir.join("run.toml"), "generator = \"gen.toml\"\ngrid_dim = 2\nwindows = 20\noutput_dir = \"c\"\n").unwrap();
    ok(somstream(dir, &["pipeline", "--config", "run.toml", "--windows", "25"]));
    let report = load_report(&dir.join("c/adaptive_summary.json")).unwrap();
    assert_eq!(report.windows.len(), 25);
    assert_eq!(report.meta.grid_dim, 2);
}
