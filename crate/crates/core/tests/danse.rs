mod common;

use common::*;
use distsep::danse::{run_separation, run_separation_with, SeparationConfig};
use distsep::eval::si_sdr;
use distsep::signal::ChannelLabel;
use distsep::Exec;

#[test]
fn each_node_captures_its_own_source() {
    let config = SeparationConfig::default();
    for seed in 0..3u64 {
        let rec = synthetic_recording(seed, 3, 3, 3.0);
        let out = run_separation(&rec, &config).unwrap();
        for (k, node) in out.nodes.iter().enumerate() {
            let scores: Vec<f64> = (0..3).map(|n| si_sdr(&node.estimate, &rec.images[k][0][n]).unwrap()).collect();
            let best = (0..3).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            assert_eq!(Some(best), node.associated_source, "seed {seed} node {k}: {scores:?}");
        }
    }
}

#[test]
fn stacked_channels_are_local_then_ascending_senders() {
    let rec = synthetic_recording(4, 2, 4, 1.0);
    let out = run_separation(&rec, &SeparationConfig::default()).unwrap();
    let labels = &out.nodes[2].stacked_channels;
    assert_eq!(labels.len(), 4 + 3);
    assert_eq!(
        &labels[4..],
        &[
            ChannelLabel::Compressed { from_node: 0 },
            ChannelLabel::Compressed { from_node: 1 },
            ChannelLabel::Compressed { from_node: 3 },
        ]
    );
}

#[test]
fn schedule_does_not_change_outputs() {
    let rec = synthetic_recording(6, 3, 3, 2.0);
    let config = SeparationConfig::default();
    let a = run_separation_with(Exec::Sequential, &rec, &config).unwrap();
    let b = run_separation_with(Exec::Parallel, &rec, &config).unwrap();
    let c = run_separation_with(Exec::Parallel, &rec, &config).unwrap();
    for ((x, y), z) in a.nodes.iter().zip(&b.nodes).zip(&c.nodes) {
        assert_eq!(x.estimate, y.estimate);
        assert_eq!(y.estimate, z.estimate);
        assert_eq!(x.w_fused, y.w_fused);
    }
}

#[test]
fn single_source_single_node_is_transparent() {
    let rec = synthetic_recording(8, 1, 1, 2.0);
    let config = SeparationConfig::default();
    let out = run_separation(&rec, &config).unwrap();
    let (a, b) = config.stft.interior(rec.len());
    let z = &out.nodes[0].compressed;
    let reference = &rec.images[0][0][0];
    let score = si_sdr(&z[a..b], &reference[a..b]).unwrap();
    assert!(score > 40.0, "{score}");
    assert!(si_sdr(z, reference).unwrap() > 25.0);
}

#[test]
fn written_outputs_are_idempotent() {
    let rec = synthetic_recording(9, 2, 2, 1.0);
    let out = run_separation(&rec, &SeparationConfig::default()).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    out.write(a.path(), 16_000, true).unwrap();
    run_separation(&rec, &SeparationConfig::default()).unwrap().write(b.path(), 16_000, true).unwrap();
    let mut names: Vec<_> = walk(a.path());
    names.sort();
    assert!(names.iter().any(|n| n.ends_with("manifest.json")));
    for name in names.iter().filter(|n| !n.ends_with("timings.json")) {
        let rel = name.strip_prefix(a.path()).unwrap();
        assert_eq!(std::fs::read(name).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
    }
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}
