//! STFT analysis and weighted overlap-add synthesis.
//!
//! Frames are `window_len` samples long and advance by `hop`; the spectrum
//! is one-sided (`window_len / 2 + 1` bins). A signal shorter than one
//! window is zero-padded to a single frame.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{Tensor, TensorData};

/// Smallest window-square sum divided by in overlap-add; the first and last
/// few samples of a signal, where the Hann window is nearly zero, are
/// attenuated instead of amplified.
const EDGE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 16 kHz, 32 ms Hann window, 16 ms hop.
    fn default() -> Self {
        StftConfig {
            sample_rate_hz: 16_000,
            window_len: 512,
            hop: 256,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "invalid STFT framing: window {} hop {}",
                self.window_len, self.hop
            )));
        }
        if !self.window_len.is_multiple_of(self.hop) {
            return Err(Error::Config(format!(
                "hop {} must divide window length {}",
                self.hop, self.window_len
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        let n = self.window_len as f64;
        match self.window {
            WindowKind::Hann => (0..self.window_len)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n).cos())
                .collect(),
        }
    }

    /// Overlap-add normalizer for `frames` frames: `1 / sum_t w[n - t*hop]^2`,
    /// floored near the outer edges where the window vanishes.
    pub fn synthesis_gain(&self, frames: usize) -> Vec<f64> {
        let w = self.analysis_window();
        let mut sum = vec![0.0; (frames.max(1) - 1) * self.hop + self.window_len];
        for t in 0..frames {
            for (i, v) in w.iter().enumerate() {
                sum[t * self.hop + i] += v * v;
            }
        }
        sum.into_iter().map(|d| 1.0 / d.max(EDGE_FLOOR)).collect()
    }

    /// Samples `[start, end)` reconstructed exactly by [`istft`] for a
    /// signal of `len` samples.
    pub fn interior(&self, len: usize) -> (usize, usize) {
        let frames = self.frame_count(len);
        let start = self.window_len - self.hop;
        let end = ((frames - 1) * self.hop + self.hop).min(len);
        (start.min(end), end)
    }
}

/// Multichannel time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate_hz: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Waveform {
    pub fn new(sample_rate_hz: u32, channels: Vec<Vec<f64>>) -> Self {
        Waveform {
            sample_rate_hz,
            channels,
        }
    }

    pub fn mono(sample_rate_hz: u32, samples: Vec<f64>) -> Self {
        Waveform::new(sample_rate_hz, vec![samples])
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Role of one channel in a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "kebab-case")]
pub enum ChannelLabel {
    LocalMic { mic: usize },
    Compressed { from_node: usize },
    Estimate { node: usize },
    Unlabeled,
}

/// Complex STFT data laid out `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    pub config: StftConfig,
    pub labels: Vec<ChannelLabel>,
}

impl SpectrogramTensor {
    pub fn zeros(channels: usize, frames: usize, bins: usize, config: StftConfig) -> Self {
        SpectrogramTensor {
            channels,
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
            config,
            labels: vec![ChannelLabel::Unlabeled; channels],
        }
    }

    pub fn from_data(
        channels: usize,
        frames: usize,
        bins: usize,
        data: Vec<Complex64>,
        config: StftConfig,
    ) -> Result<Self> {
        if data.len() != channels * frames * bins {
            return Err(Error::Format(format!(
                "spectrogram data has {} values, expected {channels}x{frames}x{bins}",
                data.len()
            )));
        }
        Ok(SpectrogramTensor {
            channels,
            frames,
            bins,
            data,
            config,
            labels: vec![ChannelLabel::Unlabeled; channels],
        })
    }

    pub fn with_labels(mut self, labels: Vec<ChannelLabel>) -> Self {
        assert_eq!(labels.len(), self.channels, "one label per channel");
        self.labels = labels;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, frame: usize, bin: usize) -> Complex64 {
        self.data[(channel * self.frames + frame) * self.bins + bin]
    }

    /// One channel as a `[frame][bin]` slice.
    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.frames * self.bins;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.frames * self.bins;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// New tensor holding the listed channels, in the listed order.
    pub fn select(&self, channels: &[usize]) -> SpectrogramTensor {
        let mut data = Vec::with_capacity(channels.len() * self.frames * self.bins);
        for &c in channels {
            data.extend_from_slice(self.channel(c));
        }
        SpectrogramTensor {
            channels: channels.len(),
            frames: self.frames,
            bins: self.bins,
            data,
            config: self.config,
            labels: channels.iter().map(|&c| self.labels[c]).collect(),
        }
    }

    /// Concatenates channels of tensors sharing frame/bin counts.
    pub fn stack(parts: &[&SpectrogramTensor]) -> Result<SpectrogramTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Format("cannot stack zero tensors".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.frames != first.frames || p.bins != first.bins {
                return Err(Error::Format(format!(
                    "cannot stack {}x{} with {}x{}",
                    p.frames, p.bins, first.frames, first.bins
                )));
            }
            data.extend_from_slice(&p.data);
            labels.extend_from_slice(&p.labels);
        }
        Ok(SpectrogramTensor {
            channels: labels.len(),
            frames: first.frames,
            bins: first.bins,
            data,
            config: first.config,
            labels,
        })
    }

    pub fn mean_power(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    /// `[channel][frame][bin]` complex64 tensor (values narrowed to f32).
    pub fn to_tensor(&self) -> Tensor {
        let data = self
            .data
            .iter()
            .map(|c| num_complex::Complex32::new(c.re as f32, c.im as f32))
            .collect();
        Tensor {
            dims: vec![self.channels, self.frames, self.bins],
            data: TensorData::Complex64(data),
        }
    }

    pub fn from_tensor(tensor: &Tensor, config: StftConfig) -> Result<Self> {
        let [channels, frames, bins] = tensor.dims[..] else {
            return Err(Error::Format(format!(
                "spectrogram tensor must be 3-D, got {:?}",
                tensor.dims
            )));
        };
        let TensorData::Complex64(values) = &tensor.data else {
            return Err(Error::Format("spectrogram tensor must be complex64".into()));
        };
        let data = values
            .iter()
            .map(|c| Complex64::new(f64::from(c.re), f64::from(c.im)))
            .collect();
        SpectrogramTensor::from_data(channels, frames, bins, data, config)
    }
}

struct Plans {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

fn plans(len: usize) -> Plans {
    let mut planner = RealFftPlanner::<f64>::new();
    Plans {
        forward: planner.plan_fft_forward(len),
        inverse: planner.plan_fft_inverse(len),
    }
}

pub fn stft(waveform: &Waveform, config: &StftConfig) -> Result<SpectrogramTensor> {
    stft_with(Exec::default(), waveform, config)
}

pub fn stft_with(exec: Exec, waveform: &Waveform, config: &StftConfig) -> Result<SpectrogramTensor> {
    config.validate()?;
    if waveform.sample_rate_hz != config.sample_rate_hz {
        return Err(Error::Format(format!(
            "waveform sampled at {} Hz, STFT configured for {} Hz",
            waveform.sample_rate_hz, config.sample_rate_hz
        )));
    }
    let len = waveform.len();
    if waveform.channels.is_empty() || len == 0 {
        return Err(Error::Format("empty waveform".into()));
    }
    if waveform.channels.iter().any(|c| c.len() != len) {
        return Err(Error::Format("waveform channels differ in length".into()));
    }

    let frames = config.frame_count(len);
    let bins = config.n_bins();
    let win = config.analysis_window();
    let fft = plans(config.window_len).forward;

    let per_channel = exec.map(waveform.channels.len(), |c| {
        let x = &waveform.channels[c];
        let mut input = fft.make_input_vec();
        let mut output = fft.make_output_vec();
        let mut scratch = fft.make_scratch_vec();
        let mut out = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let start = t * config.hop;
            for (i, slot) in input.iter_mut().enumerate() {
                *slot = x.get(start + i).map_or(0.0, |&s| s * win[i]);
            }
            fft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .expect("FFT buffers sized by planner");
            out.extend_from_slice(&output);
        }
        out
    });

    let data = per_channel.into_iter().flatten().collect();
    SpectrogramTensor::from_data(waveform.channels.len(), frames, bins, data, *config)
}

pub fn istft(spec: &SpectrogramTensor, config: &StftConfig, out_len: usize) -> Result<Waveform> {
    istft_with(Exec::default(), spec, config, out_len)
}

pub fn istft_with(
    exec: Exec,
    spec: &SpectrogramTensor,
    config: &StftConfig,
    out_len: usize,
) -> Result<Waveform> {
    config.validate()?;
    if spec.config != *config || spec.bins != config.n_bins() {
        return Err(Error::Format(
            "spectrogram was produced with a different STFT configuration".into(),
        ));
    }
    let n = config.window_len;
    let window = config.analysis_window();
    let gain = config.synthesis_gain(spec.frames);
    let ifft = plans(n).inverse;
    let scale = 1.0 / n as f64;

    let channels = exec.map(spec.channels, |c| {
        let frames = spec.channel(c);
        let full = (spec.frames - 1) * config.hop + n;
        let mut acc = vec![0.0; full.max(out_len)];
        let mut input = ifft.make_input_vec();
        let mut output = ifft.make_output_vec();
        let mut scratch = ifft.make_scratch_vec();
        for t in 0..spec.frames {
            input.copy_from_slice(&frames[t * spec.bins..(t + 1) * spec.bins]);
            // A real frame has real DC and Nyquist bins.
            input[0].im = 0.0;
            if n.is_multiple_of(2) {
                input[spec.bins - 1].im = 0.0;
            }
            ifft.process_with_scratch(&mut input, &mut output, &mut scratch)
                .expect("IFFT buffers sized by planner");
            let start = t * config.hop;
            for (i, &v) in output.iter().enumerate() {
                acc[start + i] += v * scale * window[i];
            }
        }
        for (a, g) in acc.iter_mut().zip(&gain) {
            *a *= g;
        }
        acc.truncate(out_len);
        acc
    });

    Ok(Waveform::new(config.sample_rate_hz, channels))
}
