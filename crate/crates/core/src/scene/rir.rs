//! Shoebox image-source room impulse responses with uniform wall
//! absorption and windowed-sinc fractional delays.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{t60_to_absorption, SceneSpec, SPEED_OF_SOUND};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Fractional-delay table resolution (rows per sample).
const LUT_STEPS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirConfig {
    /// RIR length as a multiple of T60.
    pub length_factor: f64,
    /// Odd number of taps of the Hann-windowed sinc.
    pub sinc_taps: usize,
    /// Overrides the Sabine absorption; `Some(1.0)` gives a free field.
    pub absorption_override: Option<f64>,
}

impl Default for RirConfig {
    fn default() -> Self {
        RirConfig {
            length_factor: 1.2,
            sinc_taps: 81,
            absorption_override: None,
        }
    }
}

/// `rirs[node][mic][source]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RirSet {
    pub rirs: Vec<Vec<Vec<Vec<f64>>>>,
    pub sample_rate_hz: u32,
    pub absorption: f64,
}

impl RirSet {
    pub fn len(&self) -> usize {
        self.rirs
            .first()
            .and_then(|n| n.first())
            .and_then(|m| m.first())
            .map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn compute_rirs(scene: &SceneSpec, config: &RirConfig) -> Result<RirSet> {
    compute_rirs_with(Exec::default(), scene, config)
}

pub fn compute_rirs_with(exec: Exec, scene: &SceneSpec, config: &RirConfig) -> Result<RirSet> {
    scene.validate()?;
    if config.sinc_taps.is_multiple_of(2) || config.sinc_taps < 3 {
        return Err(Error::Config(format!(
            "sinc length {} must be odd and at least 3",
            config.sinc_taps
        )));
    }
    if config.length_factor.is_nan() || config.length_factor < 1.0 {
        return Err(Error::Config("RIR length factor must be at least 1".into()));
    }
    let absorption = match config.absorption_override {
        Some(a) if (0.0..=1.0).contains(&a) => a,
        Some(a) => return Err(Error::Config(format!("absorption {a} outside [0, 1]"))),
        None => t60_to_absorption(scene.room.t60_s, &scene.room)?,
    };
    let fs = f64::from(scene.sample_rate_hz);
    let len = (config.length_factor * scene.room.t60_s * fs).ceil() as usize;
    let lut = FractionalDelayTable::new(config.sinc_taps);

    let mut pairs = Vec::new();
    for (k, node) in scene.nodes.iter().enumerate() {
        for (m, mic) in node.mic_positions_xyz.iter().enumerate() {
            for (n, src) in scene.sources.iter().enumerate() {
                pairs.push((k, m, n, *mic, src.position_xyz));
            }
        }
    }
    let generator = ImageSource {
        room: scene.room.dims(),
        reflection: (1.0 - absorption).sqrt(),
        fs,
        len,
        lut: &lut,
    };
    let mut rendered = exec.map(pairs.len(), |i| {
        let (_, _, _, mic, src) = pairs[i];
        generator.render(src, mic)
    });

    let mut rirs: Vec<Vec<Vec<Vec<f64>>>> = scene
        .nodes
        .iter()
        .map(|node| vec![Vec::with_capacity(scene.sources.len()); node.mic_positions_xyz.len()])
        .collect();
    for (i, &(k, m, _, _, _)) in pairs.iter().enumerate() {
        rirs[k][m].push(std::mem::take(&mut rendered[i]));
    }
    Ok(RirSet {
        rirs,
        sample_rate_hz: scene.sample_rate_hz,
        absorption,
    })
}

/// Hann-windowed sinc sampled at `LUT_STEPS + 1` fractional offsets.
struct FractionalDelayTable {
    taps: usize,
    rows: Vec<f64>,
}

impl FractionalDelayTable {
    fn new(taps: usize) -> Self {
        let half = (taps / 2) as f64;
        let mut rows = Vec::with_capacity((LUT_STEPS + 1) * taps);
        for step in 0..=LUT_STEPS {
            let frac = step as f64 / LUT_STEPS as f64;
            for j in 0..taps {
                let x = j as f64 - half - frac;
                let window = 0.5 * (1.0 + (2.0 * PI * x / taps as f64).cos());
                rows.push(window * sinc(x));
            }
        }
        FractionalDelayTable { taps, rows }
    }

    /// Adds `gain * h(n - delay)` to `out`, taps falling outside dropped.
    fn add(&self, out: &mut [f64], delay: f64, gain: f64) {
        let whole = delay.floor();
        let pos = (delay - whole) * LUT_STEPS as f64;
        let row = (pos.floor() as usize).min(LUT_STEPS - 1);
        let t = pos - row as f64;
        let a = &self.rows[row * self.taps..(row + 1) * self.taps];
        let b = &self.rows[(row + 1) * self.taps..(row + 2) * self.taps];
        let first = whole as isize - (self.taps / 2) as isize;
        let lo = (-first).max(0) as usize;
        let hi = ((out.len() as isize - first).min(self.taps as isize)).max(0) as usize;
        for j in lo..hi {
            let h = a[j] + t * (b[j] - a[j]);
            out[(first + j as isize) as usize] += gain * h;
        }
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

struct ImageSource<'a> {
    room: [f64; 3],
    reflection: f64,
    fs: f64,
    len: usize,
    lut: &'a FractionalDelayTable,
}

impl ImageSource<'_> {
    fn render(&self, src: [f64; 3], mic: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        let half = (self.lut.taps / 2) as f64;
        let max_dist = (self.len as f64 + half) * SPEED_OF_SOUND / self.fs;
        let axes: Vec<Vec<(f64, usize)>> = (0..3)
            .map(|a| axis_images(src[a], mic[a], self.room[a], max_dist))
            .collect();
        let max_order = axes.iter().map(|v| v.iter().map(|p| p.1).max().unwrap_or(0)).sum::<usize>();
        let powers: Vec<f64> = (0..=max_order).map(|o| self.reflection.powi(o as i32)).collect();
        let max_d2 = max_dist * max_dist;
        let samples_per_metre = self.fs / SPEED_OF_SOUND;

        for &(dx, ox) in &axes[0] {
            let dx2 = dx * dx;
            if dx2 > max_d2 {
                continue;
            }
            for &(dy, oy) in &axes[1] {
                let dxy2 = dx2 + dy * dy;
                if dxy2 > max_d2 {
                    continue;
                }
                for &(dz, oz) in &axes[2] {
                    let d2 = dxy2 + dz * dz;
                    if d2 > max_d2 {
                        continue;
                    }
                    let gain = powers[ox + oy + oz];
                    if gain == 0.0 {
                        continue;
                    }
                    let d = d2.sqrt();
                    self.lut.add(&mut out, d * samples_per_metre, gain / (4.0 * PI * d));
                }
            }
        }
        out
    }
}

/// Image offsets along one axis relative to the mic, with the number of
/// wall reflections each image carries: `(1 - 2p) x_s + 2 q L`, reflections
/// `|2q - p|`.
fn axis_images(src: f64, mic: f64, extent: f64, max_dist: f64) -> Vec<(f64, usize)> {
    let q_max = (max_dist / (2.0 * extent)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for q in -q_max..=q_max {
        for p in 0..=1i64 {
            let pos = (1 - 2 * p) as f64 * src + 2.0 * q as f64 * extent;
            let delta = pos - mic;
            if delta.abs() <= max_dist {
                out.push((delta, (2 * q - p).unsigned_abs() as usize));
            }
        }
    }
    out
}
