use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use distsep::beamform::{compute_mwf_with, estimate_covariances_with, DEFAULT_LOADING};
use distsep::danse::{run_separation_with, SeparationConfig};
use distsep::mask::{Step, TfMask};
use distsep::scene::{compute_rirs_with, render_scene, sample_scene, RirConfig};
use distsep::signal::{stft_with, StftConfig};
use distsep::synth::speech_like_sources;
use distsep::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn beamforming(c: &mut Criterion) {
    let cfg = StftConfig::default();
    let scene = sample_scene(1, 3, 2).unwrap();
    let rirs = compute_rirs_with(Exec::Parallel, &scene, &RirConfig::default()).unwrap();
    let dry = speech_like_sources(1, 3, 5 * 16_000, 16_000);
    let rec = render_scene(&scene, &rirs, &dry).unwrap();
    let mut mics = rec.node_mixture(0);
    mics.channels.extend(rec.node_mixture(1).channels);
    let spec = stft_with(Exec::Parallel, &mics, &cfg).unwrap();
    let values = (0..spec.frames() * spec.bins()).map(|i| (i % 7) as f64 / 7.0).collect();
    let mask = TfMask::new(spec.frames(), spec.bins(), values, 0, Step::FirstStep).unwrap();

    let mut group = c.benchmark_group("covariance_and_mwf");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let cov = estimate_covariances_with(exec, &spec, &mask).unwrap();
                compute_mwf_with(exec, &cov, 0, DEFAULT_LOADING).unwrap()
            })
        });
    }
    group.finish();
}

fn room_impulse_responses(c: &mut Criterion) {
    let scene = sample_scene(2, 2, 2).unwrap();
    let mut group = c.benchmark_group("rirs");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| compute_rirs_with(exec, &scene, &RirConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn separation(c: &mut Criterion) {
    let scene = sample_scene(3, 3, 3).unwrap();
    let rirs = compute_rirs_with(Exec::Parallel, &scene, &RirConfig::default()).unwrap();
    let dry = speech_like_sources(3, 3, 3 * 16_000, 16_000);
    let rec = render_scene(&scene, &rirs, &dry).unwrap();
    let config = SeparationConfig::default();
    let mut group = c.benchmark_group("separation_n3_k3_3s");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_separation_with(exec, &rec, &config).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, beamforming, room_impulse_responses, separation);
criterion_main!(benches);
