//! Mask-driven spatial covariance estimation and the closed-form
//! multichannel Wiener filter `w = R_y^{-1} R_s e_ref`.

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mask::TfMask;
use crate::signal::{ChannelLabel, SpectrogramTensor};
use crate::tensor::{Tensor, TensorData};

pub const DEFAULT_LOADING: f64 = 1e-9;

/// Cholesky pivots below this fraction of the largest diagonal entry mark
/// the bin as singular.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// Per-bin Hermitian `dim x dim` matrices, row-major, bins outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub dim: usize,
    pub bins: usize,
    pub frames: usize,
    pub r_y: Vec<Complex64>,
    pub r_s: Vec<Complex64>,
}

impl CovarianceSet {
    pub fn r_y_bin(&self, bin: usize) -> &[Complex64] {
        let n = self.dim * self.dim;
        &self.r_y[bin * n..(bin + 1) * n]
    }

    pub fn r_s_bin(&self, bin: usize) -> &[Complex64] {
        let n = self.dim * self.dim;
        &self.r_s[bin * n..(bin + 1) * n]
    }

    /// `(r_y, r_s)` as `[bin][row][col]` complex64 tensors.
    pub fn to_tensors(&self) -> (Tensor, Tensor) {
        let dims = vec![self.bins, self.dim, self.dim];
        let narrow = |v: &[Complex64]| {
            TensorData::Complex64(v.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect())
        };
        (
            Tensor { dims: dims.clone(), data: narrow(&self.r_y) },
            Tensor { dims, data: narrow(&self.r_s) },
        )
    }
}

pub fn estimate_covariances(spec: &SpectrogramTensor, mask: &TfMask) -> Result<CovarianceSet> {
    estimate_covariances_with(Exec::default(), spec, mask)
}

/// Batch estimates over all frames: `R_y = (1/T) sum y y^H` and
/// `R_s = (1/T) sum (m y)(m y)^H` with one common mask for every channel.
pub fn estimate_covariances_with(
    exec: Exec,
    spec: &SpectrogramTensor,
    mask: &TfMask,
) -> Result<CovarianceSet> {
    let (dim, frames, bins) = (spec.channels(), spec.frames(), spec.bins());
    if frames == 0 {
        return Err(Error::Estimation("no frames to estimate from".into()));
    }
    if dim == 0 {
        return Err(Error::Estimation("no channels to estimate from".into()));
    }
    mask.check_dims(frames, bins)?;

    let per_bin = exec.map(bins, |f| {
        let mut r_y = vec![Complex64::new(0.0, 0.0); dim * dim];
        let mut r_s = vec![Complex64::new(0.0, 0.0); dim * dim];
        let mut y = vec![Complex64::new(0.0, 0.0); dim];
        let mut s = vec![Complex64::new(0.0, 0.0); dim];
        for t in 0..frames {
            let m = mask.get(t, f);
            for c in 0..dim {
                y[c] = spec.get(c, t, f);
                s[c] = y[c] * m;
            }
            accumulate_upper(&mut r_y, &y);
            accumulate_upper(&mut r_s, &s);
        }
        let inv_t = 1.0 / frames as f64;
        finish_hermitian(&mut r_y, dim, inv_t);
        finish_hermitian(&mut r_s, dim, inv_t);
        (r_y, r_s)
    });

    let mut out = CovarianceSet {
        dim,
        bins,
        frames,
        r_y: Vec::with_capacity(bins * dim * dim),
        r_s: Vec::with_capacity(bins * dim * dim),
    };
    for (r_y, r_s) in per_bin {
        out.r_y.extend_from_slice(&r_y);
        out.r_s.extend_from_slice(&r_s);
    }
    Ok(out)
}

#[inline]
fn accumulate_upper(r: &mut [Complex64], v: &[Complex64]) {
    let n = v.len();
    for i in 0..n {
        for j in i..n {
            r[i * n + j] += v[i] * v[j].conj();
        }
    }
}

fn finish_hermitian(r: &mut [Complex64], n: usize, scale: f64) {
    for i in 0..n {
        r[i * n + i] = Complex64::new(r[i * n + i].re * scale, 0.0);
        for j in i + 1..n {
            let v = r[i * n + j] * scale;
            r[i * n + j] = v;
            r[j * n + i] = v.conj();
        }
    }
}

/// Per-bin filter weights, bins outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub dim: usize,
    pub bins: usize,
    pub weights: Vec<Complex64>,
    pub ref_index: usize,
    pub loading: f64,
    /// Bins where the loaded system was singular and `e_ref` was used.
    pub degenerate_bins: Vec<usize>,
}

impl FilterBank {
    pub fn bin(&self, f: usize) -> &[Complex64] {
        &self.weights[f * self.dim..(f + 1) * self.dim]
    }

    /// Filter that passes channel `ref_index` through unchanged.
    pub fn selector(dim: usize, bins: usize, ref_index: usize) -> FilterBank {
        let mut weights = vec![Complex64::new(0.0, 0.0); dim * bins];
        for f in 0..bins {
            weights[f * dim + ref_index] = Complex64::new(1.0, 0.0);
        }
        FilterBank {
            dim,
            bins,
            weights,
            ref_index,
            loading: 0.0,
            degenerate_bins: Vec::new(),
        }
    }

    pub fn degeneracy_report(&self) -> DegeneracyReport {
        DegeneracyReport {
            total_bins: self.bins,
            degenerate_bins: self.degenerate_bins.clone(),
        }
    }

    /// `[bin][channel]` complex64 tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.bins, self.dim],
            data: TensorData::Complex64(
                self.weights.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegeneracyReport {
    pub total_bins: usize,
    pub degenerate_bins: Vec<usize>,
}

impl DegeneracyReport {
    pub fn all_degenerate(&self) -> bool {
        self.total_bins > 0 && self.degenerate_bins.len() == self.total_bins
    }
}

pub fn compute_mwf(cov: &CovarianceSet, ref_index: usize, loading: f64) -> Result<FilterBank> {
    compute_mwf_with(Exec::default(), cov, ref_index, loading)
}

/// Solves `(R_y + loading * tr(R_y)/M * I) w = R_s e_ref` in every bin.
pub fn compute_mwf_with(
    exec: Exec,
    cov: &CovarianceSet,
    ref_index: usize,
    loading: f64,
) -> Result<FilterBank> {
    let dim = cov.dim;
    if ref_index >= dim {
        return Err(Error::Format(format!(
            "reference channel {ref_index} out of range for {dim} channels"
        )));
    }
    if !(loading >= 0.0 && loading.is_finite()) {
        return Err(Error::Config(format!("diagonal loading {loading} must be finite and >= 0")));
    }
    if cov.r_y.len() != cov.bins * dim * dim || cov.r_s.len() != cov.r_y.len() {
        return Err(Error::Format("covariance set has inconsistent sizes".into()));
    }

    let solved = exec.map(cov.bins, |f| {
        let r_y = cov.r_y_bin(f);
        let r_s = cov.r_s_bin(f);
        let rhs: Vec<Complex64> = (0..dim).map(|i| r_s[i * dim + ref_index]).collect();
        let mut a = r_y.to_vec();
        let trace: f64 = (0..dim).map(|i| r_y[i * dim + i].re).sum();
        let shift = loading * trace / dim as f64;
        for i in 0..dim {
            a[i * dim + i] += shift;
        }
        if !(trace.is_finite() && trace > 0.0) {
            return None;
        }
        solve_hermitian(&mut a, dim, rhs)
    });

    let mut weights = Vec::with_capacity(cov.bins * dim);
    let mut degenerate_bins = Vec::new();
    for (f, w) in solved.into_iter().enumerate() {
        match w {
            Some(w) => weights.extend(w),
            None => {
                degenerate_bins.push(f);
                weights.extend((0..dim).map(|i| {
                    Complex64::new(if i == ref_index { 1.0 } else { 0.0 }, 0.0)
                }));
            }
        }
    }
    Ok(FilterBank {
        dim,
        bins: cov.bins,
        weights,
        ref_index,
        loading,
        degenerate_bins,
    })
}

/// Cholesky solve of a Hermitian positive-definite system. Overwrites `a`
/// with its factor; `None` when a pivot is non-positive or negligible.
fn solve_hermitian(a: &mut [Complex64], n: usize, mut b: Vec<Complex64>) -> Option<Vec<Complex64>> {
    let max_diag = (0..n).map(|i| a[i * n + i].re).fold(0.0f64, f64::max);
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= a[j * n + k].norm_sqr();
        }
        if !d.is_finite() || d <= PIVOT_TOLERANCE * max_diag {
            return None;
        }
        let ljj = d.sqrt();
        a[j * n + j] = Complex64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k].conj();
            }
            a[i * n + j] = s / ljj;
        }
    }
    // L z = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i].re;
    }
    // L^H w = z
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i].conj() * b[k];
        }
        b[i] = s / a[i * n + i].re;
    }
    b.iter().all(|c| c.re.is_finite() && c.im.is_finite()).then_some(b)
}

pub fn apply_filterbank(fb: &FilterBank, spec: &SpectrogramTensor) -> Result<SpectrogramTensor> {
    apply_filterbank_with(Exec::default(), fb, spec)
}

/// `out(f, t) = w(f)^H y(f, t)`.
pub fn apply_filterbank_with(
    exec: Exec,
    fb: &FilterBank,
    spec: &SpectrogramTensor,
) -> Result<SpectrogramTensor> {
    if spec.channels() != fb.dim || spec.bins() != fb.bins {
        return Err(Error::Format(format!(
            "filter is {} channels x {} bins, spectrogram is {} x {}",
            fb.dim,
            fb.bins,
            spec.channels(),
            spec.bins()
        )));
    }
    let (frames, bins) = (spec.frames(), spec.bins());
    let mut out = SpectrogramTensor::zeros(1, frames, bins, spec.config)
        .with_labels(vec![ChannelLabel::Unlabeled]);
    exec.for_each_chunk(out.channel_mut(0), bins.max(1), |t, row| {
        for (f, slot) in row.iter_mut().enumerate() {
            let w = fb.bin(f);
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, wc) in w.iter().enumerate() {
                acc += wc.conj() * spec.get(c, t, f);
            }
            *slot = acc;
        }
    });
    Ok(out)
}
