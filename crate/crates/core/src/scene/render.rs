use realfft::RealFftPlanner;
use num_complex::Complex64;

use super::{RirSet, SceneSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::signal::Waveform;

/// Mean power every dry source is normalized to before convolution.
pub const REFERENCE_POWER: f64 = 0.01;

/// Multichannel recording of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecording {
    pub scene: SceneSpec,
    pub sample_rate_hz: u32,
    /// `mixture[node][mic]`
    pub mixture: Vec<Vec<Vec<f64>>>,
    /// `images[node][mic][source]`
    pub images: Vec<Vec<Vec<Vec<f64>>>>,
    /// Power-normalized dry sources.
    pub dry_sources: Vec<Vec<f64>>,
}

impl SceneRecording {
    pub fn len(&self) -> usize {
        self.dry_sources.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All microphones of one node.
    pub fn node_mixture(&self, node: usize) -> Waveform {
        Waveform::new(self.sample_rate_hz, self.mixture[node].clone())
    }

    pub fn validate(&self) -> Result<()> {
        let (k, n, len) = (self.scene.n_nodes(), self.scene.n_sources(), self.len());
        if self.mixture.len() != k || self.images.len() != k || self.dry_sources.len() != n {
            return Err(Error::Format("recording does not match its scene".into()));
        }
        for (node, mics) in self.scene.nodes.iter().zip(&self.mixture) {
            if mics.len() != node.mic_positions_xyz.len() {
                return Err(Error::Format(format!(
                    "node {} has {} recorded channels, scene declares {}",
                    node.node_id,
                    mics.len(),
                    node.mic_positions_xyz.len()
                )));
            }
        }
        let lengths_ok = self.mixture.iter().flatten().all(|c| c.len() == len)
            && self.images.iter().flatten().all(|per_src| {
                per_src.len() == n && per_src.iter().all(|c| c.len() == len)
            })
            && self.dry_sources.iter().all(|c| c.len() == len);
        if !lengths_ok {
            return Err(Error::Format("recording channels differ in length".into()));
        }
        Ok(())
    }
}

/// Normalizes every dry source to [`REFERENCE_POWER`], trims them to a
/// common length, convolves with the RIRs and sums the images.
pub fn render_scene(scene: &SceneSpec, rirs: &RirSet, dry_sources: &[Waveform]) -> Result<SceneRecording> {
    render_scene_with(Exec::default(), scene, rirs, dry_sources)
}

pub fn render_scene_with(
    exec: Exec,
    scene: &SceneSpec,
    rirs: &RirSet,
    dry_sources: &[Waveform],
) -> Result<SceneRecording> {
    if dry_sources.len() != scene.n_sources() {
        return Err(Error::Config(format!(
            "scene has {} sources, got {} dry signals",
            scene.n_sources(),
            dry_sources.len()
        )));
    }
    if rirs.rirs.len() != scene.n_nodes() {
        return Err(Error::Config("RIR set does not match the scene".into()));
    }
    for (i, w) in dry_sources.iter().enumerate() {
        if w.sample_rate_hz != scene.sample_rate_hz || rirs.sample_rate_hz != scene.sample_rate_hz {
            return Err(Error::Format(format!(
                "source {i} sampled at {} Hz, scene at {} Hz, RIRs at {} Hz",
                w.sample_rate_hz, scene.sample_rate_hz, rirs.sample_rate_hz
            )));
        }
        if w.channels.len() != 1 {
            return Err(Error::Format(format!("source {i} must be mono")));
        }
    }
    let len = dry_sources.iter().map(Waveform::len).min().unwrap_or(0);
    if len == 0 {
        return Err(Error::Format("dry sources are empty".into()));
    }
    let dry = dry_sources
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let x = &w.channels[0][..len];
            let power = x.iter().map(|v| v * v).sum::<f64>() / len as f64;
            if !(power > 0.0 && power.is_finite()) {
                return Err(Error::Config(format!("source {i} is silent")));
            }
            let g = (REFERENCE_POWER / power).sqrt();
            Ok(x.iter().map(|v| v * g).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let rir_len = rirs.len();
    let fft_len = (len + rir_len.max(1) - 1).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(fft_len);
    let inverse = planner.plan_fft_inverse(fft_len);
    let spectrum = |x: &[f64]| {
        let mut buf = forward.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = forward.make_output_vec();
        forward.process(&mut buf, &mut out).expect("sized by planner");
        out
    };
    let dry_spectra = exec.map(dry.len(), |n| spectrum(&dry[n]));

    let mut pairs = Vec::new();
    for (k, mics) in rirs.rirs.iter().enumerate() {
        for (m, per_src) in mics.iter().enumerate() {
            if per_src.len() != dry.len() {
                return Err(Error::Config(format!(
                    "RIR set has {} sources at node {k} mic {m}",
                    per_src.len()
                )));
            }
            for n in 0..dry.len() {
                pairs.push((k, m, n));
            }
        }
    }
    let scale = 1.0 / fft_len as f64;
    let mut convolved = exec.map(pairs.len(), |i| {
        let (k, m, n) = pairs[i];
        let h = spectrum(&rirs.rirs[k][m][n]);
        let mut prod: Vec<Complex64> = h.iter().zip(&dry_spectra[n]).map(|(a, b)| a * b).collect();
        prod[0].im = 0.0;
        if let Some(last) = prod.last_mut() {
            last.im = 0.0;
        }
        let mut out = inverse.make_output_vec();
        inverse.process(&mut prod, &mut out).expect("sized by planner");
        out.truncate(len);
        out.iter_mut().for_each(|v| *v *= scale);
        out
    });

    let mut images: Vec<Vec<Vec<Vec<f64>>>> = rirs
        .rirs
        .iter()
        .map(|mics| vec![Vec::with_capacity(dry.len()); mics.len()])
        .collect();
    for (i, &(k, m, _)) in pairs.iter().enumerate() {
        images[k][m].push(std::mem::take(&mut convolved[i]));
    }
    let mixture = images
        .iter()
        .map(|mics| {
            mics.iter()
                .map(|per_src| {
                    (0..len)
                        .map(|t| per_src.iter().map(|img| img[t]).sum())
                        .collect()
                })
                .collect()
        })
        .collect();

    Ok(SceneRecording {
        scene: scene.clone(),
        sample_rate_hz: scene.sample_rate_hz,
        mixture,
        images,
        dry_sources: dry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{compute_rirs, sample_scene, RirConfig};

    fn tone(len: usize, f: f64, amp: f64) -> Waveform {
        Waveform::mono(
            16_000,
            (0..len).map(|t| amp * (f * t as f64 / 16_000.0 * std::f64::consts::TAU).sin()).collect(),
        )
    }

    #[test]
    fn single_source_mixture_equals_image() {
        let scene = sample_scene(1, 1, 2).unwrap();
        let rirs = compute_rirs(&scene, &RirConfig::default()).unwrap();
        let rec = render_scene(&scene, &rirs, &[tone(4000, 440.0, 1.0)]).unwrap();
        for k in 0..2 {
            for m in 0..4 {
                assert_eq!(rec.mixture[k][m], rec.images[k][m][0]);
            }
        }
        rec.validate().unwrap();
    }

    #[test]
    fn sources_are_leveled_and_trimmed() {
        let scene = sample_scene(2, 2, 1).unwrap();
        let rirs = compute_rirs(&scene, &RirConfig::default()).unwrap();
        let a = tone(5000, 300.0, 2f64.sqrt());
        let b = tone(4500, 700.0, 0.5 * 2f64.sqrt());
        let rec = render_scene(&scene, &rirs, &[a, b]).unwrap();
        assert_eq!(rec.len(), 4500);
        let p: Vec<f64> = rec
            .dry_sources
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
            .collect();
        assert!(((p[0] - p[1]) / p[1]).abs() < 1e-9);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let scene = sample_scene(3, 1, 1).unwrap();
        let mut rirs = compute_rirs(&scene, &RirConfig::default()).unwrap();
        for per_src in rirs.rirs[0].iter_mut() {
            per_src[0] = vec![0.5, 0.0, -0.25, 0.125];
        }
        let x = tone(64, 1000.0, 1.0);
        let rec = render_scene(&scene, &rirs, &[x]).unwrap();
        let d = &rec.dry_sources[0];
        for t in 0..64 {
            let h = [0.5, 0.0, -0.25, 0.125];
            let expect: f64 = (0..4).filter(|&j| j <= t).map(|j| h[j] * d[t - j]).sum();
            assert!((rec.images[0][0][0][t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn errors_on_mismatched_inputs() {
        let scene = sample_scene(4, 2, 1).unwrap();
        let rirs = compute_rirs(&scene, &RirConfig::default()).unwrap();
        assert!(matches!(
            render_scene(&scene, &rirs, &[tone(100, 100.0, 1.0)]),
            Err(Error::Config(_))
        ));
        let mut slow = tone(100, 100.0, 1.0);
        slow.sample_rate_hz = 8000;
        assert!(matches!(
            render_scene(&scene, &rirs, &[tone(100, 100.0, 1.0), slow]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            render_scene(&scene, &rirs, &[tone(100, 100.0, 1.0), Waveform::mono(16_000, vec![0.0; 100])]),
            Err(Error::Config(_))
        ));
    }
}
