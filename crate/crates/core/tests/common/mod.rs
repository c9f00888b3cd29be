//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use distsep::beamform::CovarianceSet;
use distsep::mask::TfMask;
use distsep::scene::{compute_rirs, render_scene, sample_scene, RirConfig, SceneRecording, SPEED_OF_SOUND};
use distsep::signal::SpectrogramTensor;
use distsep::synth::speech_like_sources;
use num_complex::Complex64;

/// Reverberation time from Schroeder backward integration: a least-squares
/// line through the energy decay curve between -5 and -25 dB, extrapolated
/// to 60 dB.
pub fn schroeder_t60(h: &[f64], fs: f64) -> Option<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = edc.first().copied()?;
    if total <= 0.0 {
        return None;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let pts: Vec<(f64, f64)> = db
        .iter()
        .enumerate()
        .filter(|(_, &d)| (-25.0..=-5.0).contains(&d))
        .map(|(i, &d)| (i as f64 / fs, d))
        .collect();
    if pts.len() < 10 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Backward-integrated energy decay in dB.
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    edc
}

pub fn geometric_delay_samples(src: [f64; 3], mic: [f64; 3], fs: f64) -> f64 {
    let d = ((src[0] - mic[0]).powi(2) + (src[1] - mic[1]).powi(2) + (src[2] - mic[2]).powi(2)).sqrt();
    d * fs / SPEED_OF_SOUND
}

pub fn argmax_abs(h: &[f64]) -> usize {
    (0..h.len()).max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs())).unwrap()
}

/// Straight triple-loop covariance sums, no shared code with the library.
pub fn brute_force_covariances(spec: &SpectrogramTensor, mask: &TfMask) -> CovarianceSet {
    let (m, t_count, bins) = (spec.channels(), spec.frames(), spec.bins());
    let mut r_y = vec![Complex64::new(0.0, 0.0); bins * m * m];
    let mut r_s = r_y.clone();
    for f in 0..bins {
        for i in 0..m {
            for j in 0..m {
                let mut ay = Complex64::new(0.0, 0.0);
                let mut a_s = Complex64::new(0.0, 0.0);
                for t in 0..t_count {
                    let yi = spec.channel(i)[t * bins + f];
                    let yj = spec.channel(j)[t * bins + f];
                    let w = mask.values()[t * bins + f];
                    ay += yi * yj.conj();
                    a_s += (yi * w) * (yj * w).conj();
                }
                r_y[(f * m + i) * m + j] = ay / t_count as f64;
                r_s[(f * m + i) * m + j] = a_s / t_count as f64;
            }
        }
    }
    CovarianceSet { dim: m, bins, frames: t_count, r_y, r_s }
}

/// Renders a sampled scene with synthetic speech-like sources.
pub fn synthetic_recording(seed: u64, n_sources: usize, n_nodes: usize, seconds: f64) -> SceneRecording {
    let scene = sample_scene(seed, n_sources, n_nodes).expect("scene samples");
    let rirs = compute_rirs(&scene, &RirConfig::default()).expect("rirs");
    let len = (seconds * f64::from(scene.sample_rate_hz)) as usize;
    let dry = speech_like_sources(seed, n_sources, len, scene.sample_rate_hz);
    render_scene(&scene, &rirs, &dry).expect("render")
}

/// Renames nodes: new node `i` is old node `perm[i]`.
pub fn relabel_nodes(rec: &SceneRecording, perm: &[usize]) -> SceneRecording {
    let mut out = rec.clone();
    out.scene.nodes = perm
        .iter()
        .enumerate()
        .map(|(i, &old)| {
            let mut n = rec.scene.nodes[old].clone();
            n.node_id = i;
            n
        })
        .collect();
    out.mixture = perm.iter().map(|&old| rec.mixture[old].clone()).collect();
    out.images = perm.iter().map(|&old| rec.images[old].clone()).collect();
    out
}

pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "[acceptance] {id:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Onset of the first arrival: the first tap reaching a quarter of the
/// global peak, refined to the local maximum just after it. Sinc
/// pre-ringing stays below that threshold.
pub fn first_arrival(h: &[f64]) -> usize {
    let peak = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let start = h.iter().position(|v| v.abs() >= 0.25 * peak).unwrap_or(0);
    let end = (start + 3).min(h.len());
    (start..end).max_by(|&a, &b| h[a].abs().total_cmp(&h[b].abs())).unwrap()
}
