//! `distsep`: batch driver for distributed speech-separation experiments.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use distsep::danse::SeparationConfig;
use distsep::eval::{read_metrics_csv, MetricsRecord};
use distsep::Exec;
use serde::Serialize;

use config::{ExperimentConfig, Method, DEFAULT_DURATION_S};

#[derive(Parser)]
#[command(name = "distsep", version, about = "Simulate, separate and score distributed speech-separation experiments")]
struct Cli {
    /// Base seed for scene sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; changes wall time only.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample meeting-room scenes.
    GenScenes {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize multichannel recordings for a directory of scenes.
    Render {
        #[arg(long)]
        scenes: PathBuf,
        /// Directory of 16 kHz mono WAVs; synthetic sources when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Scene duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-step separation on rendered recordings.
    Separate {
        #[arg(long)]
        recordings: PathBuf,
        #[arg(long, value_enum, default_value = "oracle-irm")]
        method: Method,
        /// Per-scene mask directories `<dir>/<scene>/node<k>_step<s>.dstn`.
        #[arg(long)]
        masks_dir: Option<PathBuf>,
        /// Also write masks and filters.
        #[arg(long)]
        tensors: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score separated outputs and write a metrics CSV.
    Eval {
        #[arg(long)]
        recordings: PathBuf,
        #[arg(long)]
        separated: PathBuf,
        /// Method label in the metrics; defaults to the separated directory name.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate metrics CSVs into summary tables and plot data.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage for the configured (N, K) grid.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        set_jobs(jobs)?;
    }
    let exec = Exec::default();
    let experiment = cli.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let separation = experiment.as_ref().map(|c| c.separation.clone()).unwrap_or_default();
    match cli.command {
        Command::GenScenes { n, k, count, out } => {
            let seed = cli.seed.or(experiment.as_ref().map(|c| c.seed)).unwrap_or(0);
            pipeline::gen_scenes(exec, n, k, count, seed, &out)?;
        }
        Command::Render { scenes, corpus, duration, out } => {
            let corpus = corpus.or_else(|| experiment.as_ref().and_then(|c| c.corpus_dir.clone()));
            let duration = duration
                .or(experiment.as_ref().map(|c| c.duration_s))
                .unwrap_or(DEFAULT_DURATION_S);
            if !(duration > 0.0 && duration.is_finite()) {
                bail!("render: duration must be positive");
            }
            pipeline::render(exec, &scenes, corpus.as_deref(), duration, &out)?;
        }
        Command::Separate { recordings, method, masks_dir, tensors, out } => {
            pipeline::separate(exec, &recordings, method, &separation, masks_dir.as_deref(), tensors, &out)?;
        }
        Command::Eval { recordings, separated, method, out } => {
            let label = method.unwrap_or_else(|| {
                separated
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "unknown".into())
            });
            let records = pipeline::evaluate(exec, &recordings, &separated, &label, "")?;
            pipeline::write_metrics(&out, &records)?;
        }
        Command::Report { metrics, out } => {
            let mut records = Vec::new();
            for path in &metrics {
                records.extend(read_metrics(path)?);
            }
            pipeline::report(&records, &out)?;
        }
        Command::All => {
            let Some(mut experiment) = experiment else {
                bail!("all: --config is required");
            };
            if let Some(seed) = cli.seed {
                experiment.seed = seed;
            }
            run_all(exec, &experiment)?;
        }
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn set_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .context("starting worker pool")
}

#[cfg(not(feature = "parallel"))]
fn set_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    Ok(())
}

fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_metrics_csv(file).with_context(|| format!("reading {}", path.display()))
}

#[derive(Serialize)]
struct RunIndex<'a> {
    config_hash: String,
    experiment: &'a ExperimentConfig,
    artifacts: Vec<String>,
}

fn run_all(exec: Exec, cfg: &ExperimentConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let separation: SeparationConfig = cfg.method.configure(&cfg.separation);
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for cond in &cfg.grid {
        let tag = format!("n{}_k{}", cond.n_sources, cond.n_nodes);
        let root = out.join(&tag);
        let scenes = root.join("scenes");
        let recordings = root.join("recordings");
        let separated = root.join("separated").join(cfg.method.label());
        artifacts.extend(pipeline::gen_scenes(
            exec,
            cond.n_sources,
            cond.n_nodes,
            cfg.scenes_per_condition,
            cfg.seed,
            &scenes,
        )?);
        artifacts.extend(pipeline::render(exec, &scenes, cfg.corpus_dir.as_deref(), cfg.duration_s, &recordings)?);
        let masks = cfg.masks_dir.as_ref().map(|d| d.join(&tag));
        artifacts.extend(pipeline::separate(
            exec,
            &recordings,
            cfg.method,
            &cfg.separation,
            masks.as_deref(),
            cfg.write_tensors,
            &separated,
        )?);
        records.extend(pipeline::evaluate(exec, &recordings, &separated, cfg.method.label(), &tag)?);
    }
    let metrics = out.join("metrics.csv");
    pipeline::write_metrics(&metrics, &records)?;
    artifacts.push(metrics);
    artifacts.extend(pipeline::report(&records, out)?);

    let index = RunIndex {
        config_hash: separation.hash(),
        experiment: cfg,
        artifacts: artifacts
            .iter()
            .map(|p| p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned())
            .collect(),
    };
    let path = out.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
