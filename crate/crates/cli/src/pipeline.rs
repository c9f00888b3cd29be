use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use distsep::audio::{load_recording, read_wav, save_recording};
use distsep::danse::{build_provider, estimate_file_name, run_with_providers, SeparationConfig};
use distsep::eval::{
    aggregate, evaluate_estimates, write_metrics_csv, write_plot_data, write_summary_csv, Grouping, MetricsRecord,
};
use distsep::scene::{compute_rirs_with, render_scene_with, sample_scene, RirConfig, SceneSpec};
use distsep::signal::Waveform;
use distsep::synth::speech_like_sources;
use distsep::Exec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Method;

pub const SCENE_EXT: &str = "json";

pub fn scene_name(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Samples `count` scenes with seeds `seed, seed + 1, ...`.
pub fn gen_scenes(exec: Exec, n: usize, k: usize, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    exec.try_map(count, |i| {
        let scene = sample_scene(seed + i as u64, n, k).with_context(|| format!("gen-scenes: scene {i}"))?;
        let path = out.join(format!("{}.{SCENE_EXT}", scene_name(i)));
        fs::write(&path, scene.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    })
}

/// Sorted entries of `dir` accepted by `keep`.
fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()).with_context(|| format!("reading {}", dir.display())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| keep(p))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_entries(dir, |p| p.is_file() && p.extension().is_some_and(|e| e == SCENE_EXT))
}

pub fn recording_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    sorted_entries(dir, |p| p.join("recording.json").is_file())
}

/// Usable 16 kHz mono corpus files, sorted by name.
pub struct Corpus {
    files: Vec<PathBuf>,
}

impl Corpus {
    pub fn open(dir: &Path, sample_rate_hz: u32) -> Result<Self> {
        let candidates = sorted_entries(dir, |p| {
            p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
        })?;
        let mut files = Vec::new();
        for path in candidates {
            let wave = read_wav(&path)?;
            let energy: f64 = wave.channels.iter().flatten().map(|x| x * x).sum();
            if wave.sample_rate_hz == sample_rate_hz && wave.channels.len() == 1 && energy > 0.0 {
                files.push(path);
            }
        }
        Ok(Corpus { files })
    }

    /// `count` distinct files picked by `seed`, each looped or trimmed to `len`.
    pub fn sources(&self, seed: u64, count: usize, len: usize) -> Result<Vec<Waveform>> {
        if self.files.len() < count {
            bail!("configuration error: corpus has {} usable files, scene needs {count}", self.files.len());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = rand::seq::index::sample(&mut rng, self.files.len(), count);
        picks
            .iter()
            .map(|i| {
                let wave = read_wav(&self.files[i])?;
                let x = &wave.channels[0];
                Ok(Waveform::mono(wave.sample_rate_hz, (0..len).map(|j| x[j % x.len()]).collect()))
            })
            .collect()
    }
}

/// Renders every scene file in `scenes` into `out/<scene>/`.
pub fn render(exec: Exec, scenes: &Path, corpus: Option<&Path>, duration_s: f64, out: &Path) -> Result<Vec<PathBuf>> {
    let files = scene_files(scenes)?;
    if files.is_empty() {
        bail!("render: no scene files in {}", scenes.display());
    }
    let specs = files
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SceneSpec::from_json(&text).with_context(|| format!("render: {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = match corpus {
        Some(dir) => Some(Corpus::open(dir, specs[0].sample_rate_hz)?),
        None => None,
    };
    exec.try_map(files.len(), |i| {
        let scene = &specs[i];
        let name = stem(&files[i]);
        let len = (duration_s * f64::from(scene.sample_rate_hz)).round() as usize;
        let dry = match &corpus {
            Some(c) => c.sources(scene.seed, scene.n_sources(), len)?,
            None => speech_like_sources(scene.seed, scene.n_sources(), len, scene.sample_rate_hz),
        };
        let rirs = compute_rirs_with(exec, scene, &RirConfig::default()).with_context(|| format!("render: {name}"))?;
        let rec = render_scene_with(exec, scene, &rirs, &dry).with_context(|| format!("render: {name}"))?;
        let dir = out.join(&name);
        save_recording(&dir, &rec, Some(&rirs))?;
        Ok(dir)
    })
}

/// Separates every recording in `recordings` into `out/<scene>/`.
pub fn separate(
    exec: Exec,
    recordings: &Path,
    method: Method,
    base: &SeparationConfig,
    masks_dir: Option<&Path>,
    tensors: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let config = method.configure(base);
    if method == Method::FileMasks && masks_dir.is_none() {
        bail!("separate: file-masks needs --masks-dir");
    }
    let dirs = recording_dirs(recordings)?;
    if dirs.is_empty() {
        bail!("separate: no recordings in {}", recordings.display());
    }
    exec.try_map(dirs.len(), |i| {
        let name = stem(&dirs[i]);
        let rec = load_recording(&dirs[i])?;
        let scene_masks = masks_dir.map(|d| d.join(&name));
        let provider = |cfg| {
            build_provider(exec, cfg, &rec, &config.stft, scene_masks.as_deref())
                .with_context(|| format!("separate: {name}"))
        };
        let first = provider(&config.first_step)?;
        let second = if method == Method::FileMasks { Some(provider(&config.second_step)?) } else { None };
        let second = second.as_deref().unwrap_or(first.as_ref());
        let output = run_with_providers(exec, &rec, &config, first.as_ref(), second)
            .with_context(|| format!("separate: {name}"))?;
        let dir = out.join(&name);
        output.write(&dir, rec.sample_rate_hz, tensors)?;
        Ok(dir)
    })
}

/// Scores separated outputs against their recordings; scene ids are
/// `prefix` joined with the recording directory name.
pub fn evaluate(
    exec: Exec,
    recordings: &Path,
    separated: &Path,
    method: &str,
    prefix: &str,
) -> Result<Vec<MetricsRecord>> {
    let dirs = recording_dirs(recordings)?;
    let per_scene = exec.try_map(dirs.len(), |i| -> Result<Vec<MetricsRecord>> {
        let name = stem(&dirs[i]);
        let rec = load_recording(&dirs[i])?;
        let estimates = (0..rec.scene.n_nodes())
            .map(|k| {
                let path = separated.join(&name).join(estimate_file_name(k));
                let wave = read_wav(&path)?;
                wave.channels
                    .into_iter()
                    .next()
                    .ok_or_else(|| anyhow!("eval: {} has no channels", path.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = estimates.iter().map(Vec::as_slice).collect();
        let scene_id = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
        Ok(evaluate_estimates(&scene_id, method, &refs, &rec)
            .with_context(|| format!("eval: {name}"))?
            .records)
    })?;
    Ok(per_scene.into_iter().flatten().collect())
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_metrics_csv(file, records).with_context(|| format!("writing {}", path.display()))
}

/// Writes `summary.csv`, `summary_all.csv` and `plot_data.csv` into `out`.
pub fn report(records: &[MetricsRecord], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let by_condition = aggregate(records, Grouping::Condition).context("report")?;
    let overall = aggregate(records, Grouping::All).context("report")?;
    let mut written = Vec::new();
    for (name, summary, plot) in [
        ("summary.csv", &by_condition, false),
        ("summary_all.csv", &overall, false),
        ("plot_data.csv", &by_condition, true),
    ] {
        let path = out.join(name);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        if plot {
            write_plot_data(file, summary)
        } else {
            write_summary_csv(file, summary)
        }
        .with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}
