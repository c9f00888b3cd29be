//! Two-step distributed separation over a fully connected network of
//! nodes.
//!
//! Round one: every node filters its own microphones with a local
//! multichannel Wiener filter and broadcasts the single-channel result (the
//! compressed signal). Round two: every node stacks its microphones with
//! the `K - 1` compressed signals it received, in ascending sender order,
//! and applies a second Wiener filter to the stack. Nodes share no state;
//! the broadcast is the only synchronization point.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::write_wav;
use crate::beamform::{
    apply_filterbank_with, compute_mwf_with, estimate_covariances_with, FilterBank, DEFAULT_LOADING,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mask::{
    oracle_irm, FileMasks, Magnitude, MaskKind, MaskProvider, MaskProviderConfig, MaskRequest,
    OracleMasks, Step, TfMask, UnitMasks,
};
use crate::scene::SceneRecording;
use crate::signal::{istft_with, stft_with, ChannelLabel, SpectrogramTensor, StftConfig, Waveform};

pub const DEFAULT_SILENCE_THRESHOLD_DB: f64 = -60.0;
/// Reported relative power of an exactly silent compressed signal.
pub const SILENCE_FLOOR_DB: f64 = -400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig {
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub first_step: MaskProviderConfig,
    #[serde(default)]
    pub second_step: MaskProviderConfig,
    #[serde(default = "default_loading")]
    pub loading: f64,
    /// Compressed signals quieter than this, relative to the sender's
    /// microphones, are flagged silent.
    #[serde(default = "default_silence_threshold")]
    pub silence_threshold_db: f64,
    /// Drop flagged-silent compressed signals from the second-step stack.
    #[serde(default)]
    pub exclude_silent: bool,
    /// When false, each node outputs its local filter result and no
    /// signals are exchanged.
    #[serde(default = "default_true")]
    pub exchange: bool,
}

fn default_loading() -> f64 {
    DEFAULT_LOADING
}

fn default_silence_threshold() -> f64 {
    DEFAULT_SILENCE_THRESHOLD_DB
}

fn default_true() -> bool {
    true
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            stft: StftConfig::default(),
            first_step: MaskProviderConfig::default(),
            second_step: MaskProviderConfig::default(),
            loading: DEFAULT_LOADING,
            silence_threshold_db: DEFAULT_SILENCE_THRESHOLD_DB,
            exclude_silent: false,
            exchange: true,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.first_step.validate()?;
        self.second_step.validate()?;
        if !(self.loading >= 0.0 && self.loading.is_finite()) {
            return Err(Error::Config(format!("loading {} must be finite and >= 0", self.loading)));
        }
        if !self.silence_threshold_db.is_finite() {
            return Err(Error::Config("silence threshold must be finite".into()));
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub sender_id: usize,
    pub payload: SpectrogramTensor,
    pub silence_flag: bool,
    /// Payload power relative to the sender's microphone power.
    pub relative_power_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Ready,
    Broadcast,
    Received,
    Fused,
}

/// One node's view of the protocol.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub node_id: usize,
    /// Local microphone spectrogram, one channel per mic.
    pub local_spec: SpectrogramTensor,
    pub signal_len: usize,
    pub mask_step1: Option<TfMask>,
    pub mask_step2: Option<TfMask>,
    pub w_local: Option<FilterBank>,
    pub compressed_out: Option<SpectrogramTensor>,
    pub received: Vec<CompressedMessage>,
    pub stacked: Option<SpectrogramTensor>,
    pub w_fused: Option<FilterBank>,
    pub estimate: Option<Vec<f64>>,
    phase: Phase,
}

impl NodeState {
    pub fn new(node_id: usize, local_spec: SpectrogramTensor, signal_len: usize) -> Self {
        let labels = (0..local_spec.channels())
            .map(|mic| ChannelLabel::LocalMic { mic })
            .collect();
        NodeState {
            node_id,
            local_spec: local_spec.with_labels(labels),
            signal_len,
            mask_step1: None,
            mask_step2: None,
            w_local: None,
            compressed_out: None,
            received: Vec::new(),
            stacked: None,
            w_fused: None,
            estimate: None,
            phase: Phase::Ready,
        }
    }

    pub fn from_waveform(exec: Exec, node_id: usize, mics: &Waveform, stft: &StftConfig) -> Result<Self> {
        Ok(NodeState::new(node_id, stft_with(exec, mics, stft)?, mics.len()))
    }

    /// Accepts the compressed signals of every other node.
    pub fn receive(&mut self, messages: Vec<CompressedMessage>, n_nodes: usize) -> Result<()> {
        if self.phase != Phase::Broadcast {
            return Err(Error::Protocol(format!(
                "node {} cannot receive before broadcasting",
                self.node_id
            )));
        }
        if messages.len() != n_nodes - 1 {
            return Err(Error::Protocol(format!(
                "node {} received {} compressed signals, expected {}",
                self.node_id,
                messages.len(),
                n_nodes - 1
            )));
        }
        self.received = messages;
        self.phase = Phase::Received;
        Ok(())
    }
}

/// Round one at one node: mask, local filter, compressed signal.
pub fn local_step(
    exec: Exec,
    node: &mut NodeState,
    provider: &dyn MaskProvider,
    config: &SeparationConfig,
) -> Result<CompressedMessage> {
    if node.phase != Phase::Ready {
        return Err(Error::Protocol(format!("node {} already ran its local step", node.node_id)));
    }
    let mask = provider.mask(&MaskRequest {
        node_id: node.node_id,
        step: Step::FirstStep,
        inputs: &node.local_spec,
    })?;
    let cov = estimate_covariances_with(exec, &node.local_spec, &mask)?;
    let w = compute_mwf_with(exec, &cov, 0, config.loading)?;
    if w.degeneracy_report().all_degenerate() {
        return Err(Error::Protocol(format!(
            "node {}: every frequency bin of the local system is singular",
            node.node_id
        )));
    }
    let mut z = apply_filterbank_with(exec, &w, &node.local_spec)?;
    z.labels = vec![ChannelLabel::Compressed { from_node: node.node_id }];

    let input_power = node.local_spec.mean_power();
    let ratio = if input_power > 0.0 { z.mean_power() / input_power } else { 0.0 };
    let relative_power_db = (10.0 * ratio.log10()).max(SILENCE_FLOOR_DB);
    let silence_flag = ratio < 10f64.powf(config.silence_threshold_db / 10.0);

    node.mask_step1 = Some(mask);
    node.w_local = Some(w);
    node.compressed_out = Some(z.clone());
    node.phase = Phase::Broadcast;
    Ok(CompressedMessage {
        sender_id: node.node_id,
        payload: z,
        silence_flag,
        relative_power_db,
    })
}

/// Ideal broadcast: node `k` receives every `z_j`, `j != k`, ascending `j`.
pub fn exchange(messages: &[CompressedMessage]) -> Result<Vec<Vec<CompressedMessage>>> {
    let n = messages.len();
    let mut by_sender: Vec<Option<&CompressedMessage>> = vec![None; n];
    for m in messages {
        match by_sender.get_mut(m.sender_id) {
            Some(slot @ None) => *slot = Some(m),
            Some(Some(_)) => {
                return Err(Error::Protocol(format!("node {} sent twice", m.sender_id)));
            }
            None => {
                return Err(Error::Protocol(format!(
                    "sender {} outside a network of {n} nodes",
                    m.sender_id
                )));
            }
        }
    }
    let by_sender: Vec<&CompressedMessage> = by_sender
        .into_iter()
        .enumerate()
        .map(|(k, m)| m.ok_or_else(|| Error::Protocol(format!("no message from node {k}"))))
        .collect::<Result<_>>()?;
    if let Some(first) = by_sender.first() {
        let dims = (first.payload.frames(), first.payload.bins());
        if let Some(bad) = by_sender
            .iter()
            .find(|m| (m.payload.frames(), m.payload.bins()) != dims || m.payload.channels() != 1)
        {
            return Err(Error::Format(format!(
                "node {} sent a {}x{}x{} payload, expected 1x{}x{}",
                bad.sender_id,
                bad.payload.channels(),
                bad.payload.frames(),
                bad.payload.bins(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok((0..n)
        .map(|k| {
            by_sender
                .iter()
                .filter(|m| m.sender_id != k)
                .map(|&m| m.clone())
                .collect()
        })
        .collect())
}

/// Round two at one node: stack, mask, fused filter, time-domain estimate.
pub fn fuse_step(
    exec: Exec,
    node: &mut NodeState,
    provider: &dyn MaskProvider,
    config: &SeparationConfig,
) -> Result<Vec<f64>> {
    if node.phase != Phase::Received {
        return Err(Error::Protocol(format!(
            "node {} must receive the compressed signals before fusing",
            node.node_id
        )));
    }
    let kept: Vec<&SpectrogramTensor> = node
        .received
        .iter()
        .filter(|m| !(config.exclude_silent && m.silence_flag))
        .map(|m| &m.payload)
        .collect();
    let mut parts = vec![&node.local_spec];
    parts.extend(kept.iter().copied());
    let stacked = SpectrogramTensor::stack(&parts)?;

    let mask = provider.mask(&MaskRequest {
        node_id: node.node_id,
        step: Step::SecondStep,
        inputs: &stacked,
    })?;

    // Solve with the received channels in content order so that renaming
    // nodes cannot change the rounding.
    let local = node.local_spec.channels();
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| content_cmp(kept[a], kept[b]));
    let mut canonical = vec![&node.local_spec];
    canonical.extend(order.iter().map(|&i| kept[i]));
    let canonical = SpectrogramTensor::stack(&canonical)?;
    let cov = estimate_covariances_with(exec, &canonical, &mask)?;
    let w_canonical = compute_mwf_with(exec, &cov, 0, config.loading)?;
    let mut out = apply_filterbank_with(exec, &w_canonical, &canonical)?;

    let mut w = w_canonical.clone();
    let dim = w.dim;
    for f in 0..w.bins {
        for (pos, &i) in order.iter().enumerate() {
            w.weights[f * dim + local + i] = w_canonical.weights[f * dim + local + pos];
        }
    }
    out.labels = vec![ChannelLabel::Estimate { node: node.node_id }];
    let estimate = istft_with(exec, &out, &config.stft, node.signal_len)?
        .channels
        .remove(0);

    node.mask_step2 = Some(mask);
    node.stacked = Some(stacked);
    node.w_fused = Some(w);
    node.estimate = Some(estimate.clone());
    node.phase = Phase::Fused;
    Ok(estimate)
}

fn content_cmp(a: &SpectrogramTensor, b: &SpectrogramTensor) -> std::cmp::Ordering {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilenceReport {
    pub silence_flag: bool,
    pub relative_power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutput {
    pub node_id: usize,
    pub associated_source: Option<usize>,
    pub estimate: Vec<f64>,
    pub compressed: Vec<f64>,
    pub mask_step1: TfMask,
    pub mask_step2: Option<TfMask>,
    pub w_local: FilterBank,
    pub w_fused: Option<FilterBank>,
    pub stacked_channels: Vec<ChannelLabel>,
    pub silence: SilenceReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stft_s: f64,
    pub local_step_s: f64,
    pub exchange_s: f64,
    pub fuse_step_s: f64,
}

#[derive(Debug, Clone)]
pub struct SeparationOutput {
    pub scene_seed: u64,
    pub n_sources: usize,
    pub config_hash: String,
    pub nodes: Vec<NodeOutput>,
    pub timings: StageTimings,
}

impl SeparationOutput {
    pub fn estimates(&self) -> Vec<&[f64]> {
        self.nodes.iter().map(|n| n.estimate.as_slice()).collect()
    }

    pub fn manifest(&self, sample_rate_hz: u32) -> RunManifest {
        RunManifest {
            config_hash: self.config_hash.clone(),
            scene_seed: self.scene_seed,
            n_sources: self.n_sources,
            n_nodes: self.nodes.len(),
            sample_rate_hz,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeManifest {
                    node_id: n.node_id,
                    associated_source: n.associated_source,
                    estimate_file: estimate_file_name(n.node_id),
                    compressed_file: compressed_file_name(n.node_id),
                    stacked_channels: n.stacked_channels.clone(),
                    silence: n.silence.clone(),
                    degenerate_bins_step1: n.w_local.degenerate_bins.clone(),
                    degenerate_bins_step2: n
                        .w_fused
                        .as_ref()
                        .map(|w| w.degenerate_bins.clone())
                        .unwrap_or_default(),
                })
                .collect(),
        }
    }

    /// Writes per-node WAVs, `manifest.json` and `timings.json`; with
    /// `tensors`, also the masks and filters.
    pub fn write(&self, dir: impl AsRef<Path>, sample_rate_hz: u32, tensors: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for n in &self.nodes {
            write_wav(dir.join(estimate_file_name(n.node_id)), &Waveform::mono(sample_rate_hz, n.estimate.clone()))?;
            write_wav(
                dir.join(compressed_file_name(n.node_id)),
                &Waveform::mono(sample_rate_hz, n.compressed.clone()),
            )?;
            if tensors {
                n.mask_step1
                    .save(dir.join(crate::mask::mask_file_name(n.node_id, Step::FirstStep)), Some(&self.config_hash))?;
                if let Some(m) = &n.mask_step2 {
                    m.save(dir.join(crate::mask::mask_file_name(n.node_id, Step::SecondStep)), Some(&self.config_hash))?;
                }
                n.w_local.to_tensor().save(dir.join(format!("node{}_filter_step1.dstn", n.node_id)))?;
                if let Some(w) = &n.w_fused {
                    w.to_tensor().save(dir.join(format!("node{}_filter_step2.dstn", n.node_id)))?;
                }
            }
        }
        write_json(&dir.join("manifest.json"), &self.manifest(sample_rate_hz))?;
        write_json(&dir.join("timings.json"), &self.timings)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn estimate_file_name(node: usize) -> String {
    format!("node{node}_estimate.wav")
}

pub fn compressed_file_name(node: usize) -> String {
    format!("node{node}_compressed.wav")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeManifest {
    pub node_id: usize,
    pub associated_source: Option<usize>,
    pub estimate_file: String,
    pub compressed_file: String,
    pub stacked_channels: Vec<ChannelLabel>,
    pub silence: SilenceReport,
    pub degenerate_bins_step1: Vec<usize>,
    pub degenerate_bins_step2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub scene_seed: u64,
    pub n_sources: usize,
    pub n_nodes: usize,
    pub sample_rate_hz: u32,
    pub nodes: Vec<NodeManifest>,
}

/// Oracle ideal ratio masks at each node's first microphone. A node with no
/// associated source gets an all-zero mask.
pub fn oracle_masks(exec: Exec, recording: &SceneRecording, stft: &StftConfig, epsilon: f64) -> Result<OracleMasks> {
    let scene = &recording.scene;
    let masks = exec.try_map(scene.n_nodes(), |k| {
        let images = &recording.images[k][0];
        let target_src = scene.nodes[k].associated_source;
        let len = recording.len();
        let sum_of = |keep: &dyn Fn(usize) -> bool| -> Vec<f64> {
            (0..len)
                .map(|t| {
                    images
                        .iter()
                        .enumerate()
                        .filter(|(n, _)| keep(*n))
                        .map(|(_, x)| x[t])
                        .sum()
                })
                .collect()
        };
        let target = sum_of(&|n| Some(n) == target_src);
        let interferer = sum_of(&|n| Some(n) != target_src);
        let spec = stft_with(
            Exec::Sequential,
            &Waveform::new(recording.sample_rate_hz, vec![target, interferer]),
            stft,
        )?;
        oracle_irm(
            &Magnitude::of_channel(&spec, 0),
            &Magnitude::of_channel(&spec, 1),
            epsilon,
            k,
            Step::FirstStep,
        )
        .map_err(|e| e.at_node(k, "oracle-mask"))
    })?;
    Ok(OracleMasks::new(masks))
}

/// Builds a provider from its configuration. `scene_mask_dir` overrides
/// the configured directory for file masks.
pub fn build_provider(
    exec: Exec,
    cfg: &MaskProviderConfig,
    recording: &SceneRecording,
    stft: &StftConfig,
    scene_mask_dir: Option<&Path>,
) -> Result<Box<dyn MaskProvider>> {
    Ok(match cfg.kind {
        MaskKind::OracleIrm => Box::new(oracle_masks(exec, recording, stft, cfg.epsilon)?),
        MaskKind::Unit => Box::new(UnitMasks),
        MaskKind::File => {
            let dir = scene_mask_dir
                .map(Path::to_path_buf)
                .or_else(|| cfg.file_path.clone())
                .ok_or_else(|| Error::Config("file masks need a directory".into()))?;
            Box::new(FileMasks::new(dir))
        }
    })
}

pub fn run_separation(recording: &SceneRecording, config: &SeparationConfig) -> Result<SeparationOutput> {
    run_separation_with(Exec::default(), recording, config)
}

pub fn run_separation_with(
    exec: Exec,
    recording: &SceneRecording,
    config: &SeparationConfig,
) -> Result<SeparationOutput> {
    config.validate()?;
    let first = build_provider(exec, &config.first_step, recording, &config.stft, None)?;
    let second = if config.second_step == config.first_step
        && config.first_step.kind == MaskKind::OracleIrm
    {
        None
    } else {
        Some(build_provider(exec, &config.second_step, recording, &config.stft, None)?)
    };
    let second: &dyn MaskProvider = second.as_deref().unwrap_or(first.as_ref());
    run_with_providers(exec, recording, config, first.as_ref(), second)
}

/// The full protocol with caller-supplied mask providers.
pub fn run_with_providers(
    exec: Exec,
    recording: &SceneRecording,
    config: &SeparationConfig,
    first: &dyn MaskProvider,
    second: &dyn MaskProvider,
) -> Result<SeparationOutput> {
    recording.validate()?;
    if recording.sample_rate_hz != config.stft.sample_rate_hz {
        return Err(Error::Format(format!(
            "recording at {} Hz, STFT configured for {} Hz",
            recording.sample_rate_hz, config.stft.sample_rate_hz
        )));
    }
    let scene = &recording.scene;
    let k_nodes = scene.n_nodes();
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let nodes = exec.try_map(k_nodes, |k| {
        NodeState::from_waveform(exec, k, &recording.node_mixture(k), &config.stft)
            .map_err(|e| e.at_node(k, "stft"))
    })?;
    timings.stft_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let round_one = exec.map_vec(nodes, |mut node| {
        let k = node.node_id;
        local_step(exec, &mut node, first, config)
            .map(|msg| (node, msg))
            .map_err(|e| e.at_node(k, "local-step"))
    });
    let (mut nodes, messages): (Vec<NodeState>, Vec<CompressedMessage>) =
        round_one.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    timings.local_step_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let inboxes = if config.exchange { exchange(&messages)? } else { Vec::new() };
    for (node, inbox) in nodes.iter_mut().zip(inboxes) {
        let k = node.node_id;
        node.receive(inbox, k_nodes).map_err(|e| e.at_node(k, "exchange"))?;
    }
    timings.exchange_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let silence: Vec<SilenceReport> = messages
        .iter()
        .map(|m| SilenceReport {
            silence_flag: m.silence_flag,
            relative_power_db: m.relative_power_db,
        })
        .collect();
    let outputs = exec.map_vec(nodes.into_iter().zip(silence).collect(), |(mut node, silence)| {
        let k = node.node_id;
        let z = node.compressed_out.as_ref().expect("local step ran");
        let compressed = istft_with(exec, z, &config.stft, node.signal_len)
            .map_err(|e| e.at_node(k, "synthesis"))?
            .channels
            .remove(0);
        let estimate = if config.exchange {
            fuse_step(exec, &mut node, second, config).map_err(|e| e.at_node(k, "fuse-step"))?
        } else {
            compressed.clone()
        };
        let stacked_channels = node
            .stacked
            .as_ref()
            .unwrap_or(&node.local_spec)
            .labels
            .clone();
        Ok(NodeOutput {
            node_id: k,
            associated_source: scene.nodes[k].associated_source,
            estimate,
            compressed,
            mask_step1: node.mask_step1.take().expect("local step ran"),
            mask_step2: node.mask_step2.take(),
            w_local: node.w_local.take().expect("local step ran"),
            w_fused: node.w_fused.take(),
            stacked_channels,
            silence,
        })
    });
    let nodes = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    timings.fuse_step_s = clock.elapsed().as_secs_f64();

    Ok(SeparationOutput {
        scene_seed: scene.seed,
        n_sources: scene.n_sources(),
        config_hash: config.hash(),
        nodes,
        timings,
    })
}
