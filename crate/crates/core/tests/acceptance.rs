//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

mod common;

use common::*;
use distsep::beamform::{compute_mwf, estimate_covariances, CovarianceSet};
use distsep::danse::{run_separation, SeparationConfig};
use distsep::eval::{evaluate_scene, si_sdr, SI_SDR_CAP_DB};
use distsep::mask::{Step, TfMask};
use distsep::scene::{compute_rirs, sample_scene, RirConfig};
use distsep::signal::{istft, stft, SpectrogramTensor, StftConfig, Waveform};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const FS: u32 = 16_000;

fn complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// `A A^H` with `A` of shape `m x cols`, row-major.
fn random_psd(rng: &mut ChaCha8Rng, m: usize, cols: usize) -> Vec<Complex64> {
    let a: Vec<Complex64> = (0..m * cols).map(|_| complex(rng)).collect();
    let mut r = vec![Complex64::new(0.0, 0.0); m * m];
    for i in 0..m {
        for j in 0..m {
            r[i * m + j] = (0..cols).map(|c| a[i * cols + c] * a[j * cols + c].conj()).sum();
        }
    }
    r
}

fn matvec(r: &[Complex64], w: &[Complex64]) -> Vec<Complex64> {
    let m = w.len();
    (0..m).map(|i| (0..m).map(|j| r[i * m + j] * w[j]).sum()).collect()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn c01_stft_round_trip() -> bool {
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let len = rng.random_range(FS as usize..=5 * FS as usize);
        let chans = rng.random_range(1..=4);
        let x: Vec<Vec<f64>> = (0..chans)
            .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let wave = Waveform::new(FS, x.clone());
        let y = istft(&stft(&wave, &cfg).unwrap(), &cfg, len).unwrap();
        let (a, b) = cfg.interior(len);
        for (xc, yc) in x.iter().zip(&y.channels) {
            let err: f64 = (a..b).map(|i| (xc[i] - yc[i]).powi(2)).sum::<f64>().sqrt();
            let reference: f64 = (a..b).map(|i| xc[i].powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err / reference);
        }
    }
    let pass = worst < 1e-10;
    report(1, "STFT round trip", pass, &format!("worst interior relative error {worst:.2e} < 1e-10"));
    pass
}

fn c02_covariance_oracle() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (m, t, f) = (rng.random_range(1..=4), rng.random_range(1..=16), rng.random_range(1..=8));
        let data = (0..m * t * f).map(|_| complex(&mut rng)).collect();
        let spec = SpectrogramTensor::from_data(m, t, f, data, StftConfig::default()).unwrap();
        let mask_values = (0..t * f).map(|_| rng.random_range(0.0..=1.0)).collect();
        let mask = TfMask::new(t, f, mask_values, 0, Step::FirstStep).unwrap();
        let got = estimate_covariances(&spec, &mask).unwrap();
        let want = brute_force_covariances(&spec, &mask);
        for (g, w) in got.r_y.iter().zip(&want.r_y).chain(got.r_s.iter().zip(&want.r_s)) {
            worst = worst.max((g - w).norm());
        }
    }
    let pass = worst < 1e-12;
    report(2, "covariance oracle", pass, &format!("max abs deviation {worst:.2e} < 1e-12 over 1000 trials"));
    pass
}

fn c03_mwf_residual() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let loading = distsep::beamform::DEFAULT_LOADING;
    let mut worst_residual: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut degenerate = 0;
    for _ in 0..1000 {
        let m = rng.random_range(1..=6);
        let r_y = random_psd(&mut rng, m, 2 * m);
        let rank = rng.random_range(1..=m);
        let r_s = random_psd(&mut rng, m, rank);
        let reference = rng.random_range(0..m);
        let cov = CovarianceSet { dim: m, bins: 1, frames: 1, r_y: r_y.clone(), r_s: r_s.clone() };
        let w = compute_mwf(&cov, reference, loading).unwrap();
        if !w.degenerate_bins.is_empty() {
            degenerate += 1;
            continue;
        }
        let trace: f64 = (0..m).map(|i| r_y[i * m + i].re).sum();
        let mut loaded = r_y.clone();
        for i in 0..m {
            loaded[i * m + i] += loading * trace / m as f64;
        }
        let lhs = matvec(&loaded, w.bin(0));
        let rhs: Vec<Complex64> = (0..m).map(|i| r_s[i * m + reference]).collect();
        let diff: Vec<Complex64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        worst_residual = worst_residual.max(norm(&diff) / norm(&rhs));

        let same = CovarianceSet { dim: m, bins: 1, frames: 1, r_y: r_y.clone(), r_s: r_y };
        let w = compute_mwf(&same, reference, 0.0).unwrap();
        for (i, z) in w.bin(0).iter().enumerate() {
            let e = if i == reference { 1.0 } else { 0.0 };
            worst_identity = worst_identity.max((z - e).norm());
        }
    }
    let pass = worst_residual < 1e-8 && worst_identity < 1e-10;
    report(
        3,
        "MWF residual",
        pass,
        &format!(
            "worst residual {worst_residual:.2e} < 1e-8, R_s=R_y deviation {worst_identity:.2e} < 1e-10, {degenerate} degenerate"
        ),
    );
    pass
}

fn c04_rir_fidelity() -> bool {
    let fs = f64::from(FS);
    let mut worst_delay: f64 = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut pairs = 0;
    let mut t60_ok = 0;
    for seed in 0..20u64 {
        let scene = sample_scene(seed, 2, 2).unwrap();
        let rirs = compute_rirs(&scene, &RirConfig::default()).unwrap();
        for (k, node) in scene.nodes.iter().enumerate() {
            for (m, mic) in node.mic_positions_xyz.iter().enumerate() {
                for (n, src) in scene.sources.iter().enumerate() {
                    let h = &rirs.rirs[k][m][n];
                    let truth = geometric_delay_samples(src.position_xyz, *mic, fs);
                    worst_delay = worst_delay.max((first_arrival(h) as f64 - truth).abs());
                    let ratio = schroeder_t60(h, fs).unwrap_or(f64::NAN) / scene.room.t60_s;
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                    pairs += 1;
                    if (ratio - 1.0).abs() <= 0.2 {
                        t60_ok += 1;
                    }
                }
            }
        }
    }
    let delay_pass = worst_delay <= 1.0;
    let t60_pass = t60_ok == pairs;
    report(
        4,
        "RIR fidelity",
        delay_pass && t60_pass,
        &format!(
            "worst direct-path offset {worst_delay:.2} taps <= 1; T60 ratio range {lo:.2}..{hi:.2}, {t60_ok}/{pairs} within +-20%"
        ),
    );
    delay_pass && t60_pass
}

fn c05_mixture_additivity() -> bool {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let rec = synthetic_recording(seed, 2 + (seed as usize % 2), 3, 2.0);
        for (k, mics) in rec.mixture.iter().enumerate() {
            for (m, y) in mics.iter().enumerate() {
                let mut sum = vec![0.0; y.len()];
                for img in &rec.images[k][m] {
                    for (s, v) in sum.iter_mut().zip(img) {
                        *s += v;
                    }
                }
                let err: f64 = y.iter().zip(&sum).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let energy: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
                worst = worst.max(err / energy);
            }
        }
    }
    let pass = worst < 1e-6;
    report(5, "mixture additivity", pass, &format!("worst relative deviation {worst:.2e} < 1e-6"));
    pass
}

fn c06_oracle_pipeline() -> bool {
    let config = SeparationConfig::default();
    let mut deltas = Vec::new();
    let mut fused = Vec::new();
    let mut compressed = Vec::new();
    let mut slowest: f64 = 0.0;
    for seed in 0..20u64 {
        let clock = Instant::now();
        let rec = synthetic_recording(seed, 2, 2, 10.0);
        let out = run_separation(&rec, &config).unwrap();
        let scores = evaluate_scene(&seed.to_string(), "oracle-irm", &out, &rec).unwrap();
        slowest = slowest.max(clock.elapsed().as_secs_f64());
        for r in &scores.records {
            deltas.push(r.delta_db);
            fused.push(r.si_sdr_out_db);
            let reference = &rec.images[r.node_id][0][r.source_id];
            compressed.push(si_sdr(&out.nodes[r.node_id].compressed, reference).unwrap());
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let positive = deltas.iter().filter(|&&d| d > 0.0).count() as f64 / deltas.len() as f64;
    let pass = mean(&deltas) > 0.0 && positive >= 0.9 && mean(&fused) >= mean(&compressed);
    report(
        6,
        "oracle pipeline N=K=2",
        pass,
        &format!(
            "mean delta {:.2} dB > 0, {:.0}% positive >= 90%, fused {:.2} dB >= compressed {:.2} dB, slowest scene {slowest:.1} s",
            mean(&deltas),
            100.0 * positive,
            mean(&fused),
            mean(&compressed)
        ),
    );
    pass
}

fn c07_input_si_sdr_trend() -> bool {
    let mut lines = Vec::new();
    let mut pass = true;
    for n in 2..=4usize {
        let mut values = Vec::new();
        for seed in 0..20u64 {
            let rec = synthetic_recording(1000 * n as u64 + seed, n, n, 4.0);
            for (k, node) in rec.scene.nodes.iter().enumerate() {
                let s = node.associated_source.unwrap();
                values.push(si_sdr(&rec.mixture[k][0], &rec.images[k][0][s]).unwrap());
            }
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let expected = -10.0 * ((n - 1) as f64).log10();
        let ok = (mean - expected).abs() <= 2.0;
        pass &= ok;
        lines.push(format!("N={n} mean {mean:.2} dB vs {expected:.2} dB"));
    }
    report(7, "input SI-SDR trend", pass, &format!("{} (+-2 dB)", lines.join(", ")));
    pass
}

fn c08_single_node_reduction() -> bool {
    let two_step = SeparationConfig::default();
    let local_only = SeparationConfig { exchange: false, ..SeparationConfig::default() };
    let mut identical = 0;
    for seed in 0..10u64 {
        let rec = synthetic_recording(seed, 2, 1, 2.0);
        let a = run_separation(&rec, &two_step).unwrap();
        let b = run_separation(&rec, &local_only).unwrap();
        if a.nodes[0].estimate == b.nodes[0].estimate {
            identical += 1;
        }
    }
    let pass = identical == 10;
    report(8, "K=1 reduction", pass, &format!("{identical}/10 scenes bitwise identical"));
    pass
}

fn c09_relabeling_equivariance() -> bool {
    let config = SeparationConfig::default();
    let mut exact = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let rec = synthetic_recording(seed, 3, 3, 2.0);
        let perm = [2, 0, 1];
        let base = run_separation(&rec, &config).unwrap();
        let permuted = run_separation(&relabel_nodes(&rec, &perm), &config).unwrap();
        let mut same = true;
        for (i, &old) in perm.iter().enumerate() {
            let (a, b) = (&permuted.nodes[i], &base.nodes[old]);
            same &= a.estimate == b.estimate && a.compressed == b.compressed;
            let energy: f64 = b.estimate.iter().map(|x| x * x).sum();
            let err: f64 = a.estimate.iter().zip(&b.estimate).map(|(x, y)| (x - y).powi(2)).sum();
            worst = worst.max((err / energy).sqrt());
        }
        exact += usize::from(same);
    }
    let pass = exact == 10;
    report(
        9,
        "relabeling equivariance",
        pass,
        &format!("{exact}/10 scenes bitwise identical, worst relative deviation {worst:.2e}"),
    );
    pass
}

fn c10_si_sdr_contract() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<f64> = (0..4000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noisy: Vec<f64> = x.iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
    let scaled: Vec<f64> = noisy.iter().map(|v| 2.5 * v).collect();
    let cap = si_sdr(&x, &x).unwrap();
    let invariance = (si_sdr(&scaled, &x).unwrap() - si_sdr(&noisy, &x).unwrap()).abs();
    let analytic = si_sdr(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    let pass = cap == SI_SDR_CAP_DB && invariance < 1e-9 && analytic.abs() < 1e-12;
    report(
        10,
        "SI-SDR contract",
        pass,
        &format!("cap {cap} dB, scale deviation {invariance:.1e} dB, analytic {analytic:.1e} dB"),
    );
    pass
}

fn c11_silent_extra_node() -> bool {
    let config = SeparationConfig::default();
    let mut ok = 0;
    let mut loudest = f64::NEG_INFINITY;
    for seed in 0..10u64 {
        let rec = synthetic_recording(seed, 2, 3, 2.0);
        let out = run_separation(&rec, &config).unwrap();
        let extra = &out.nodes[2];
        let input = rec.mixture[2].iter().flatten().map(|v| v * v).sum::<f64>() / (4.0 * rec.len() as f64);
        let power = extra.compressed.iter().map(|v| v * v).sum::<f64>() / rec.len() as f64;
        let relative_db = 10.0 * (power / input).log10();
        loudest = loudest.max(relative_db);
        if extra.associated_source.is_none() && relative_db < -60.0 && extra.silence.silence_flag {
            ok += 1;
        }
    }
    let pass = ok == 10;
    report(11, "over-determined silence", pass, &format!("{ok}/10 scenes, loudest {loudest:.1} dB < -60 dB"));
    pass
}

fn main() {
    let criteria: [fn() -> bool; 11] = [
        c01_stft_round_trip,
        c02_covariance_oracle,
        c03_mwf_residual,
        c04_rir_fidelity,
        c05_mixture_additivity,
        c06_oracle_pipeline,
        c07_input_si_sdr_trend,
        c08_single_node_reduction,
        c09_relabeling_equivariance,
        c10_si_sdr_contract,
        c11_silent_extra_node,
    ];
    let failed = criteria.iter().filter(|c| !c()).count();
    println!("[acceptance] {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
