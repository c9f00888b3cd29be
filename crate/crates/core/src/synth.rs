//! Speech-like test signals: noise through syllable-rate formant filters
//! under a syllabic on/off envelope.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signal::Waveform;

const FORMANT_BANDS: [(f64, f64); 3] = [(250.0, 900.0), (900.0, 2400.0), (2400.0, 3800.0)];

#[derive(Debug, Clone, Copy, Default)]
struct Biquad {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    /// Band-pass with 0 dB peak gain; keeps the filter state.
    fn retune(&mut self, centre_hz: f64, q: f64, fs: f64) {
        let w0 = 2.0 * PI * centre_hz / fs;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        self.b0 = alpha / a0;
        self.b2 = -alpha / a0;
        self.a1 = -2.0 * w0.cos() / a0;
        self.a2 = (1.0 - alpha) / a0;
    }

    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// `len` samples of amplitude-modulated filtered noise, deterministic in
/// `seed`.
pub fn speech_like(seed: u64, len: usize, sample_rate_hz: u32) -> Vec<f64> {
    let fs = f64::from(sample_rate_hz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut filters = [Biquad::default(); 3];
    let mut gains = [0.0; 3];
    let mut out = Vec::with_capacity(len);
    let mut t = 0;
    while t < len {
        let voiced = rng.random_bool(0.75);
        let dur = (fs * rng.random_range(if voiced { 0.12..0.35 } else { 0.05..0.2 })) as usize;
        for (i, f) in filters.iter_mut().enumerate() {
            let (lo, hi) = FORMANT_BANDS[i];
            f.retune(rng.random_range(lo..hi), rng.random_range(3.0..8.0), fs);
            gains[i] = rng.random_range(0.2..1.0) / (i + 1) as f64;
        }
        let level = if voiced { rng.random_range(0.5..1.0) } else { 0.01 };
        for i in 0..dur.min(len - t).max(1) {
            let env = level * (PI * i as f64 / dur.max(1) as f64).sin().powi(2);
            let e: f64 = StandardNormal.sample(&mut rng);
            let s: f64 = filters.iter_mut().zip(gains).map(|(f, g)| g * f.process(e)).sum();
            out.push(env * s);
        }
        t = out.len();
    }
    out.truncate(len);
    out
}

/// `count` independent speech-like sources as mono waveforms.
pub fn speech_like_sources(seed: u64, count: usize, len: usize, sample_rate_hz: u32) -> Vec<Waveform> {
    (0..count)
        .map(|n| {
            let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(n as u64 + 1);
            Waveform::mono(sample_rate_hz, speech_like(s, len, sample_rate_hz))
        })
        .collect()
}
