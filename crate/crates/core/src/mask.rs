//! Time-frequency masks: the oracle ideal ratio mask, masks loaded from
//! tensor files (the plug-in point for trained estimators), and the unit
//! mask.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::SpectrogramTensor;
use crate::tensor::{self, Tensor, TensorData};

/// Values within this distance outside `[0, 1]` are clamped on load.
pub const LOAD_CLAMP_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    FirstStep,
    SecondStep,
}

impl Step {
    pub fn index(self) -> usize {
        match self {
            Step::FirstStep => 1,
            Step::SecondStep => 2,
        }
    }
}

/// Real mask in `[0, 1]`, laid out `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
    pub node_id: usize,
    pub step: Step,
}

impl TfMask {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>, node_id: usize, step: Step) -> Result<Self> {
        if values.len() != frames * bins {
            return Err(Error::Format(format!(
                "mask has {} values, expected {frames}x{bins}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("mask value {bad} outside [0, 1]")));
        }
        Ok(TfMask {
            frames,
            bins,
            values,
            node_id,
            step,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    /// Same values, relabelled for another node or step.
    pub fn relabeled(&self, node_id: usize, step: Step) -> TfMask {
        TfMask {
            node_id,
            step,
            ..self.clone()
        }
    }

    pub fn check_dims(&self, frames: usize, bins: usize) -> Result<()> {
        if (self.frames, self.bins) != (frames, bins) {
            return Err(Error::Format(format!(
                "mask is {}x{}, spectrogram is {frames}x{bins}",
                self.frames, self.bins
            )));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.frames, self.bins],
            data: TensorData::F64(self.values.clone()),
        }
    }

    /// Writes the mask as an f64 tensor plus a metadata sidecar.
    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        self.to_tensor().save(path)?;
        tensor::write_sidecar(
            path,
            &MaskMeta {
                node_id: Some(self.node_id),
                step: Some(self.step),
                config_hash: config_hash.map(str::to_owned),
            },
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Non-negative magnitudes laid out `[frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitude {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl Magnitude {
    pub fn of_channel(spec: &SpectrogramTensor, channel: usize) -> Self {
        Magnitude {
            frames: spec.frames(),
            bins: spec.bins(),
            values: spec.channel(channel).iter().map(|c| c.norm()).collect(),
        }
    }

    /// Magnitude of the complex sum of several channels.
    pub fn of_sum(spec: &SpectrogramTensor, channels: &[usize]) -> Self {
        let n = spec.frames() * spec.bins();
        let values = (0..n)
            .map(|i| channels.iter().map(|&c| spec.channel(c)[i]).sum::<num_complex::Complex64>().norm())
            .collect();
        Magnitude {
            frames: spec.frames(),
            bins: spec.bins(),
            values,
        }
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Magnitude {
            frames,
            bins,
            values: vec![0.0; frames * bins],
        }
    }
}

/// Ideal ratio mask `|s| / (|s| + |n| + eps)`.
pub fn oracle_irm(
    target: &Magnitude,
    interferer: &Magnitude,
    epsilon: f64,
    node_id: usize,
    step: Step,
) -> Result<TfMask> {
    if (target.frames, target.bins) != (interferer.frames, interferer.bins)
        || target.values.len() != interferer.values.len()
    {
        return Err(Error::Format(format!(
            "target is {}x{}, interferer is {}x{}",
            target.frames, target.bins, interferer.frames, interferer.bins
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("IRM epsilon {epsilon} must be finite and >= 0")));
    }
    let mut values = Vec::with_capacity(target.values.len());
    for (&s, &n) in target.values.iter().zip(&interferer.values) {
        if s < 0.0 || n < 0.0 || s.is_nan() || n.is_nan() {
            return Err(Error::Format("magnitudes must be non-negative".into()));
        }
        let denom = s + n + epsilon;
        values.push(if denom > 0.0 { (s / denom).min(1.0) } else { 0.0 });
    }
    TfMask::new(target.frames, target.bins, values, node_id, step)
}

/// Loads a 2-D real tensor as a mask. Node and step come from the sidecar
/// when present, otherwise default to node 0, first step.
pub fn load_mask(path: impl AsRef<Path>) -> Result<TfMask> {
    let path = path.as_ref();
    let t = Tensor::load(path)?;
    let [frames, bins] = t.dims[..] else {
        return Err(Error::Format(format!(
            "{}: mask tensor must be 2-D, got {:?}",
            path.display(),
            t.dims
        )));
    };
    let mut values = t.data.to_f64()?;
    for v in values.iter_mut() {
        if v.is_nan() || *v < -LOAD_CLAMP_TOLERANCE || *v > 1.0 + LOAD_CLAMP_TOLERANCE {
            return Err(Error::Validation(format!(
                "{}: mask value {v} outside [0, 1]",
                path.display()
            )));
        }
        *v = v.clamp(0.0, 1.0);
    }
    let meta: MaskMeta = tensor::read_sidecar(path)?.unwrap_or_default();
    TfMask::new(
        frames,
        bins,
        values,
        meta.node_id.unwrap_or(0),
        meta.step.unwrap_or(Step::FirstStep),
    )
}

pub fn unit_mask(frames: usize, bins: usize) -> Result<TfMask> {
    if frames == 0 || bins == 0 {
        return Err(Error::Format(format!("unit mask needs positive dims, got {frames}x{bins}")));
    }
    TfMask::new(frames, bins, vec![1.0; frames * bins], 0, Step::FirstStep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    OracleIrm,
    File,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskProviderConfig {
    pub kind: MaskKind,
    /// Directory holding `node<k>_step<s>.dstn` files, for `kind = file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_path: Option<PathBuf>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl Default for MaskProviderConfig {
    fn default() -> Self {
        MaskProviderConfig {
            kind: MaskKind::OracleIrm,
            file_path: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl MaskProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be finite and >= 0", self.epsilon)));
        }
        if self.kind == MaskKind::File {
            let dir = self
                .file_path
                .as_ref()
                .ok_or_else(|| Error::Config("file mask provider needs file_path".into()))?;
            if !dir.is_dir() {
                return Err(Error::Config(format!(
                    "mask directory {} is not readable",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}

/// What a provider is asked for: one node, one step, plus the signals that
/// node sees at that step (local channels, and at the second step the
/// received compressed channels as well).
pub struct MaskRequest<'a> {
    pub node_id: usize,
    pub step: Step,
    pub inputs: &'a SpectrogramTensor,
}

/// Source of per-node masks. Implementations must return values in `[0, 1]`
/// shaped like `inputs`.
pub trait MaskProvider: Sync {
    fn mask(&self, request: &MaskRequest<'_>) -> Result<TfMask>;
}

/// Precomputed oracle masks, one per node. The second step reuses the
/// first-step mask of the node.
#[derive(Debug, Clone)]
pub struct OracleMasks {
    masks: Vec<TfMask>,
}

impl OracleMasks {
    pub fn new(masks: Vec<TfMask>) -> Self {
        OracleMasks { masks }
    }

    pub fn masks(&self) -> &[TfMask] {
        &self.masks
    }
}

impl MaskProvider for OracleMasks {
    fn mask(&self, request: &MaskRequest<'_>) -> Result<TfMask> {
        let m = self.masks.get(request.node_id).ok_or_else(|| {
            Error::Provider(format!("no oracle mask for node {}", request.node_id))
        })?;
        m.check_dims(request.inputs.frames(), request.inputs.bins())?;
        Ok(m.relabeled(request.node_id, request.step))
    }
}

/// Reads `<dir>/node<k>_step<s>.dstn`.
#[derive(Debug, Clone)]
pub struct FileMasks {
    dir: PathBuf,
}

impl FileMasks {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileMasks { dir: dir.into() }
    }

    pub fn path_for(&self, node_id: usize, step: Step) -> PathBuf {
        self.dir.join(mask_file_name(node_id, step))
    }
}

pub fn mask_file_name(node_id: usize, step: Step) -> String {
    format!("node{node_id}_step{}.dstn", step.index())
}

impl MaskProvider for FileMasks {
    fn mask(&self, request: &MaskRequest<'_>) -> Result<TfMask> {
        let path = self.path_for(request.node_id, request.step);
        if !path.is_file() {
            return Err(Error::Provider(format!(
                "missing mask for node {} at {}",
                request.node_id,
                path.display()
            )));
        }
        let m = load_mask(&path)?;
        m.check_dims(request.inputs.frames(), request.inputs.bins())?;
        Ok(m.relabeled(request.node_id, request.step))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UnitMasks;

impl MaskProvider for UnitMasks {
    fn mask(&self, request: &MaskRequest<'_>) -> Result<TfMask> {
        Ok(unit_mask(request.inputs.frames(), request.inputs.bins())?
            .relabeled(request.node_id, request.step))
    }
}
