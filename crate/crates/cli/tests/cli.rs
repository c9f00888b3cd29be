use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distsep::audio::write_wav;
use distsep::signal::Waveform;
use distsep::synth::speech_like;

fn distsep(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distsep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Relative path → bytes, for every file under `root` except timings.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else if path.file_name().unwrap() != "timings.json" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.json");
    let text = format!(
        r#"{{
  "grid": [{{"n_sources": 2, "n_nodes": 2}}],
  "scenes_per_condition": 2,
  "seed": 3,
  "duration_s": 1.0,
  "output_dir": "out",
  "method": "oracle-irm"{extra}
}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn gen_scenes_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(distsep(tmp.path(), &["gen-scenes", "--n", "2", "--k", "2", "--count", "5", "--seed", "1", "--out", out]));
    }
    let a = snapshot(&tmp.path().join("a"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, snapshot(&tmp.path().join("b")));
}

#[test]
fn all_writes_metrics_summary_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "");
    ok(distsep(tmp.path(), &["all", "--config", "exp.json"]));
    let out = tmp.path().join("out");
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2, "{metrics}");
    assert!(lines[0].starts_with("scene_id,method"));
    assert!(lines[1..].iter().all(|l| l.contains(",oracle-irm,")));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(out.join("plot_data.csv").is_file() && out.join("run.json").is_file());

    let first = snapshot(&out);
    ok(distsep(tmp.path(), &["all", "--config", "exp.json"]));
    assert_eq!(first, snapshot(&out));
    ok(distsep(tmp.path(), &["--jobs", "1", "all", "--config", "exp.json"]));
    assert_eq!(first, snapshot(&out));
}

#[test]
fn stages_chain_by_hand() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(distsep(d, &["gen-scenes", "--n", "2", "--k", "3", "--count", "1", "--seed", "4", "--out", "scenes"]));
    ok(distsep(d, &["render", "--scenes", "scenes", "--duration", "1", "--out", "rec"]));
    ok(distsep(d, &["separate", "--recordings", "rec", "--method", "mwf-local-only", "--out", "sep/local"]));
    ok(distsep(d, &["eval", "--recordings", "rec", "--separated", "sep/local", "--out", "m.csv"]));
    ok(distsep(d, &["report", "--metrics", "m.csv", "--out", "rep"]));
    let metrics = std::fs::read_to_string(d.join("m.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2, "extra node is not scored: {metrics}");
    assert!(metrics.contains(",local,"));
    let manifest = std::fs::read_to_string(d.join("sep/local/scene_0000/manifest.json")).unwrap();
    assert!(manifest.contains("\"silence_flag\": true"));
}

#[test]
fn missing_mask_names_node_and_path() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(distsep(d, &["gen-scenes", "--n", "2", "--k", "2", "--count", "1", "--out", "scenes"]));
    ok(distsep(d, &["render", "--scenes", "scenes", "--duration", "0.5", "--out", "rec"]));
    std::fs::create_dir_all(d.join("masks/scene_0000")).unwrap();
    let out = distsep(d, &["separate", "--recordings", "rec", "--method", "file-masks", "--masks-dir", "masks", "--out", "sep"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("node 0") && err.contains("masks/scene_0000/node0_step1.dstn"), "{err}");
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(distsep(tmp.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(distsep(tmp.path(), &["gen-scenes", "--n", "2", "--bogus"]).status.code(), Some(2));
    let out = distsep(tmp.path(), &["render", "--scenes", "no/such/dir", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no/such/dir"));
    let out = distsep(tmp.path(), &["all"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn corpus_sources_are_picked_by_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let corpus = d.join("corpus");
    std::fs::create_dir_all(&corpus).unwrap();
    for i in 0..3u64 {
        let wave = Waveform::mono(16_000, speech_like(100 + i, 6000, 16_000));
        write_wav(corpus.join(format!("utt{i}.wav")), &wave).unwrap();
    }
    ok(distsep(d, &["gen-scenes", "--n", "2", "--k", "2", "--count", "2", "--out", "scenes"]));
    for out in ["r1", "r2"] {
        ok(distsep(d, &["render", "--scenes", "scenes", "--corpus", "corpus", "--duration", "1", "--out", out]));
    }
    assert_eq!(snapshot(&d.join("r1")), snapshot(&d.join("r2")));

    ok(distsep(d, &["gen-scenes", "--n", "4", "--k", "4", "--count", "1", "--out", "big"]));
    let out = distsep(d, &["render", "--scenes", "big", "--corpus", "corpus", "--duration", "1", "--out", "r3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 usable files"));
}
