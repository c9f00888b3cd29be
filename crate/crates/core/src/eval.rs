//! SI-SDR scoring against reverberant source images and confidence-interval
//! aggregation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::danse::SeparationOutput;
use crate::error::{Error, Result};
use crate::scene::SceneRecording;

pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant SDR in dB, clamped to `[-100, 100]`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Format(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy: f64 = reference.iter().map(|x| x * x).sum();
    if ref_energy <= 0.0 {
        return Err(Error::Metric("reference is identically zero".into()));
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(a, b)| a * b).sum();
    let alpha = dot / ref_energy;
    let mut target = 0.0;
    let mut error = 0.0;
    for (&e, &r) in estimate.iter().zip(reference) {
        let t = alpha * r;
        target += t * t;
        error += (t - e) * (t - e);
    }
    let value = 10.0 * (target / error).log10();
    Ok(if value.is_nan() { -SI_SDR_CAP_DB } else { value.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scene_id: String,
    pub method: String,
    pub n_sources: usize,
    pub n_nodes: usize,
    pub node_id: usize,
    pub source_id: usize,
    pub si_sdr_in_db: f64,
    pub si_sdr_out_db: f64,
    pub delta_db: f64,
}

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 9] = [
    "scene_id",
    "method",
    "n_sources",
    "n_nodes",
    "node_id",
    "source_id",
    "si_sdr_in_db",
    "si_sdr_out_db",
    "delta_db",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScores {
    pub records: Vec<MetricsRecord>,
    /// Nodes without an associated source; not scored.
    pub unscored_nodes: Vec<usize>,
}

/// Scores one estimate per node against the image of the node's source at
/// its first microphone.
pub fn evaluate_estimates(
    scene_id: &str,
    method: &str,
    estimates: &[&[f64]],
    recording: &SceneRecording,
) -> Result<SceneScores> {
    let scene = &recording.scene;
    if estimates.len() != scene.n_nodes() {
        return Err(Error::Evaluation(format!(
            "{} estimates for {} nodes",
            estimates.len(),
            scene.n_nodes()
        )));
    }
    let mut records = Vec::new();
    let mut unscored_nodes = Vec::new();
    for (k, node) in scene.nodes.iter().enumerate() {
        let Some(n) = node.associated_source else {
            unscored_nodes.push(k);
            continue;
        };
        let reference = recording
            .images
            .get(k)
            .and_then(|mics| mics.first())
            .and_then(|srcs| srcs.get(n))
            .ok_or_else(|| Error::Evaluation(format!("no image of source {n} at node {k}")))?;
        let si_sdr_in_db = si_sdr(&recording.mixture[k][0], reference)?;
        let si_sdr_out_db = si_sdr(estimates[k], reference)?;
        records.push(MetricsRecord {
            scene_id: scene_id.to_owned(),
            method: method.to_owned(),
            n_sources: scene.n_sources(),
            n_nodes: scene.n_nodes(),
            node_id: k,
            source_id: n,
            si_sdr_in_db,
            si_sdr_out_db,
            delta_db: si_sdr_out_db - si_sdr_in_db,
        });
    }
    Ok(SceneScores {
        records,
        unscored_nodes,
    })
}

pub fn evaluate_scene(
    scene_id: &str,
    method: &str,
    output: &SeparationOutput,
    recording: &SceneRecording,
) -> Result<SceneScores> {
    evaluate_estimates(scene_id, method, &output.estimates(), recording)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// One group per (N, K, method).
    Condition,
    /// A single group over every record.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionKey {
    pub n_sources: usize,
    pub n_nodes: usize,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n_sources: usize,
    pub n_nodes: usize,
    pub method: String,
    pub count: usize,
    pub mean_si_sdr_db: f64,
    pub ci95_si_sdr_db: f64,
    pub mean_delta_db: f64,
    pub ci95_delta_db: f64,
    pub mean_si_sdr_in_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Mean and normal-approximation 95 % half-width `1.96 s / sqrt(n)` with the
/// unbiased sample deviation; zero width for a single value.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Aggregation("empty group".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, 1.96 * var.sqrt() / (n as f64).sqrt()))
}

/// Groups are emitted sorted by (N, K, method). Record order does not matter.
pub fn aggregate(records: &[MetricsRecord], grouping: Grouping) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Aggregation("no records to aggregate".into()));
    }
    let mut groups: BTreeMap<ConditionKey, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        let key = match grouping {
            Grouping::Condition => ConditionKey {
                n_sources: r.n_sources,
                n_nodes: r.n_nodes,
                method: r.method.clone(),
            },
            Grouping::All => ConditionKey {
                n_sources: 0,
                n_nodes: 0,
                method: "all".into(),
            },
        };
        groups.entry(key).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|(key, mut group)| {
            // Fixed summation order regardless of input order.
            group.sort_by(|a, b| {
                (&a.scene_id, a.node_id, a.source_id)
                    .cmp(&(&b.scene_id, b.node_id, b.source_id))
                    .then(a.si_sdr_out_db.total_cmp(&b.si_sdr_out_db))
                    .then(a.si_sdr_in_db.total_cmp(&b.si_sdr_in_db))
            });
            let out: Vec<f64> = group.iter().map(|r| r.si_sdr_out_db).collect();
            let delta: Vec<f64> = group.iter().map(|r| r.delta_db).collect();
            let input: Vec<f64> = group.iter().map(|r| r.si_sdr_in_db).collect();
            let (mean_si_sdr_db, ci95_si_sdr_db) = mean_ci95(&out)?;
            let (mean_delta_db, ci95_delta_db) = mean_ci95(&delta)?;
            let (mean_si_sdr_in_db, _) = mean_ci95(&input)?;
            Ok(SummaryRow {
                n_sources: key.n_sources,
                n_nodes: key.n_nodes,
                method: key.method,
                count: group.len(),
                mean_si_sdr_db,
                ci95_si_sdr_db,
                mean_delta_db,
                ci95_delta_db,
                mean_si_sdr_in_db,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Summary { rows })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}

pub fn write_metrics_csv<W: Write>(w: W, records: &[MetricsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if records.is_empty() {
        out.write_record(METRICS_COLUMNS).map_err(csv_err)?;
    }
    for r in records {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(format!("CSV: {e}")))
}

pub fn read_metrics_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricsRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

pub fn write_summary_csv<W: Write>(w: W, summary: &Summary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in &summary.rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(format!("CSV: {e}")))
}

/// `x,y,err` rows for external plotting: condition label, mean SI-SDR and
/// CI half-width, followed by the same for the improvement.
pub fn write_plot_data<W: Write>(w: W, summary: &Summary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "metric", "y", "err"]).map_err(csv_err)?;
    for r in &summary.rows {
        let x = format!("N{}K{}-{}", r.n_sources, r.n_nodes, r.method);
        out.write_record([x.as_str(), "si_sdr", &r.mean_si_sdr_db.to_string(), &r.ci95_si_sdr_db.to_string()])
            .map_err(csv_err)?;
        out.write_record([x.as_str(), "delta_si_sdr", &r.mean_delta_db.to_string(), &r.ci95_delta_db.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Format(format!("CSV: {e}")))
}
