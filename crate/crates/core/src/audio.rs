//! WAV persistence for waveforms, RIR sets and scene recordings.
//!
//! Multichannel files are written as 32-bit float WAV. A recording
//! directory holds:
//!
//! | file            | channels                       |
//! |-----------------|--------------------------------|
//! | `mixture.wav`   | one per (node, mic)            |
//! | `images.wav`    | one per (node, mic, source)    |
//! | `dry.wav`       | one per source                 |
//! | `rirs.wav`      | one per (node, mic, source)    |
//! | `recording.json`| scene plus the channel maps    |

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{RirSet, SceneRecording, SceneSpec, SCHEMA_VERSION};
use crate::signal::Waveform;

pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let channels = u16::try_from(waveform.channels.len())
        .map_err(|_| Error::Format("too many channels for WAV".into()))?;
    if channels == 0 {
        return Err(Error::Format("cannot write a WAV with no channels".into()));
    }
    let spec = WavSpec {
        channels,
        sample_rate: waveform.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = WavWriter::create(path, spec).map_err(wav_err)?;
    for t in 0..waveform.len() {
        for c in &waveform.channels {
            w.write_sample(c[t] as f32).map_err(wav_err)?;
        }
    }
    w.finalize().map_err(wav_err)
}

/// Reads float or integer PCM WAV, deinterleaved, scaled to `[-1, 1)` for
/// integer formats.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut r = WavReader::open(path).map_err(wav_err)?;
    let spec = r.spec();
    let n_ch = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(wav_err)?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n_ch.max(1)); n_ch];
    for (i, v) in interleaved.into_iter().enumerate() {
        channels[i % n_ch].push(v);
    }
    Ok(Waveform::new(spec.sample_rate, channels))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mic: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub schema_version: u32,
    pub sample_rate_hz: u32,
    pub length: usize,
    pub scene: SceneSpec,
    pub mixture_channels: Vec<ChannelRef>,
    pub image_channels: Vec<ChannelRef>,
    pub dry_channels: Vec<ChannelRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rir_channels: Option<Vec<ChannelRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption: Option<f64>,
}

fn node_mic_source(images: &[Vec<Vec<Vec<f64>>>]) -> (Vec<ChannelRef>, Vec<&Vec<f64>>) {
    let mut refs = Vec::new();
    let mut data = Vec::new();
    for (k, mics) in images.iter().enumerate() {
        for (m, per_src) in mics.iter().enumerate() {
            for (n, x) in per_src.iter().enumerate() {
                refs.push(ChannelRef { node: Some(k), mic: Some(m), source: Some(n) });
                data.push(x);
            }
        }
    }
    (refs, data)
}

pub fn save_recording(dir: impl AsRef<Path>, rec: &SceneRecording, rirs: Option<&RirSet>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fs = rec.sample_rate_hz;

    let mut mixture_channels = Vec::new();
    let mut mixture = Vec::new();
    for (k, mics) in rec.mixture.iter().enumerate() {
        for (m, x) in mics.iter().enumerate() {
            mixture_channels.push(ChannelRef { node: Some(k), mic: Some(m), source: None });
            mixture.push(x.clone());
        }
    }
    write_wav(dir.join("mixture.wav"), &Waveform::new(fs, mixture))?;

    let (image_channels, images) = node_mic_source(&rec.images);
    write_wav(dir.join("images.wav"), &Waveform::new(fs, images.into_iter().cloned().collect()))?;

    let dry_channels = (0..rec.dry_sources.len())
        .map(|n| ChannelRef { node: None, mic: None, source: Some(n) })
        .collect();
    write_wav(dir.join("dry.wav"), &Waveform::new(fs, rec.dry_sources.clone()))?;

    let rir_channels = match rirs {
        Some(set) => {
            let (refs, data) = node_mic_source(&set.rirs);
            write_wav(dir.join("rirs.wav"), &Waveform::new(set.sample_rate_hz, data.into_iter().cloned().collect()))?;
            Some(refs)
        }
        None => None,
    };

    let meta = RecordingMeta {
        schema_version: SCHEMA_VERSION,
        sample_rate_hz: fs,
        length: rec.len(),
        scene: rec.scene.clone(),
        mixture_channels,
        image_channels,
        dry_channels,
        rir_channels,
        absorption: rirs.map(|r| r.absorption),
    };
    let path = dir.join("recording.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_recording(dir: impl AsRef<Path>) -> Result<SceneRecording> {
    let dir = dir.as_ref();
    let meta_path = dir.join("recording.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RecordingMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    meta.scene.validate()?;

    let load = |name: &str, expected: usize| -> Result<Vec<Vec<f64>>> {
        let path = dir.join(name);
        let w = read_wav(&path)?;
        if w.sample_rate_hz != meta.sample_rate_hz || w.channels.len() != expected {
            return Err(Error::Format(format!(
                "{}: expected {expected} channels at {} Hz, found {} at {} Hz",
                path.display(),
                meta.sample_rate_hz,
                w.channels.len(),
                w.sample_rate_hz
            )));
        }
        Ok(w.channels)
    };

    let scene = meta.scene.clone();
    let n_src = scene.n_sources();
    let mut mixture: Vec<Vec<Vec<f64>>> = scene.nodes.iter().map(|_| Vec::new()).collect();
    for (r, x) in meta.mixture_channels.iter().zip(load("mixture.wav", meta.mixture_channels.len())?) {
        let k = r.node.ok_or_else(|| Error::Format("mixture channel without node".into()))?;
        mixture
            .get_mut(k)
            .ok_or_else(|| Error::Format(format!("mixture channel names missing node {k}")))?
            .push(x);
    }
    let mut images: Vec<Vec<Vec<Vec<f64>>>> = scene
        .nodes
        .iter()
        .map(|n| vec![Vec::with_capacity(n_src); n.mic_positions_xyz.len()])
        .collect();
    for (r, x) in meta.image_channels.iter().zip(load("images.wav", meta.image_channels.len())?) {
        let (k, m) = r
            .node
            .zip(r.mic)
            .ok_or_else(|| Error::Format("image channel without node/mic".into()))?;
        images
            .get_mut(k)
            .and_then(|mics| mics.get_mut(m))
            .ok_or_else(|| Error::Format(format!("image channel names missing node {k} mic {m}")))?
            .push(x);
    }
    let dry_sources = load("dry.wav", meta.dry_channels.len())?;

    let rec = SceneRecording {
        scene,
        sample_rate_hz: meta.sample_rate_hz,
        mixture,
        images,
        dry_sources,
    };
    rec.validate()?;
    Ok(rec)
}
