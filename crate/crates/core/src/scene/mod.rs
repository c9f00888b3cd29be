//! Randomized meeting-room scenes: a round table in a shoebox room, talkers
//! evenly spaced around it, and one multi-microphone device on the table in
//! front of each talker.

mod render;
mod rir;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use render::{render_scene, render_scene_with, SceneRecording, REFERENCE_POWER};
pub use rir::{compute_rirs, compute_rirs_with, RirConfig, RirSet};

pub const SCHEMA_VERSION: u32 = 1;
pub const SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

pub const ROOM_LENGTH_RANGE: (f64, f64) = (3.0, 9.0);
pub const ROOM_WIDTH_RANGE: (f64, f64) = (3.0, 7.0);
pub const ROOM_HEIGHT_RANGE: (f64, f64) = (2.5, 3.0);
pub const T60_RANGE: (f64, f64) = (0.3, 0.6);
pub const TABLE_RADIUS_RANGE: (f64, f64) = (0.3, 2.5);
pub const TABLE_HEIGHT_RANGE: (f64, f64) = (0.8, 0.9);
pub const SOURCE_EDGE_DISTANCE_RANGE: (f64, f64) = (0.0, 0.5);
pub const SOURCE_HEIGHT_RANGE: (f64, f64) = (1.15, 1.80);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub t60_s: f64,
}

impl RoomSpec {
    pub fn volume(&self) -> f64 {
        self.length_m * self.width_m * self.height_m
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.length_m * self.width_m
            + self.length_m * self.height_m
            + self.width_m * self.height_m)
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.length_m, self.width_m, self.height_m]
    }

    pub fn contains_strictly(&self, p: &[f64; 3]) -> bool {
        p.iter().zip(self.dims()).all(|(&x, d)| x > 0.0 && x < d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub center_xy: [f64; 2],
    pub radius_m: f64,
    pub height_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcePlacement {
    pub source_id: usize,
    pub position_xyz: [f64; 3],
    /// Angle around the table centre.
    pub azimuth_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePlacement {
    pub node_id: usize,
    pub azimuth_rad: f64,
    pub mic_positions_xyz: Vec<[f64; 3]>,
    /// Source this node sits in front of, if any.
    pub associated_source: Option<usize>,
}

/// One simulated meeting. Ids are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub schema_version: u32,
    pub room: RoomSpec,
    pub table: TableSpec,
    pub sources: Vec<SourcePlacement>,
    pub nodes: Vec<NodePlacement>,
    pub sample_rate_hz: u32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported scene schema version {}",
                self.schema_version
            )));
        }
        if self.sources.is_empty() || self.nodes.is_empty() {
            return Err(Error::Config("a scene needs at least one source and one node".into()));
        }
        let r = &self.room;
        if ![r.length_m, r.width_m, r.height_m, r.t60_s]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(Error::Config("room dimensions and T60 must be positive".into()));
        }
        for s in &self.sources {
            if !r.contains_strictly(&s.position_xyz) {
                return Err(Error::Config(format!("source {} lies outside the room", s.source_id)));
            }
        }
        for n in &self.nodes {
            if n.mic_positions_xyz.is_empty() {
                return Err(Error::Config(format!("node {} has no microphones", n.node_id)));
            }
            if let Some(m) = n.mic_positions_xyz.iter().find(|m| !r.contains_strictly(m)) {
                return Err(Error::Config(format!(
                    "node {} microphone {m:?} lies outside the room",
                    n.node_id
                )));
            }
            if n.associated_source.is_some_and(|s| s >= self.sources.len()) {
                return Err(Error::Config(format!(
                    "node {} is associated with a missing source",
                    n.node_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(format!("scene encode: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: SceneSpec =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("scene decode: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Device geometry and placement knobs for [`sample_scene_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub mics_per_node: usize,
    /// Side of the square (or chord of the ring) the node's mics sit on.
    pub mic_spacing_m: f64,
    /// How far inside the table edge a device sits.
    pub node_inset_m: f64,
    /// Minimum clearance between any talker and a wall.
    pub wall_clearance_m: f64,
    pub sample_rate_hz: u32,
    pub max_attempts: usize,
}

impl Default for SceneLayout {
    fn default() -> Self {
        SceneLayout {
            mics_per_node: 4,
            mic_spacing_m: 0.05,
            node_inset_m: 0.05,
            wall_clearance_m: 0.1,
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            max_attempts: 1000,
        }
    }
}

pub fn sample_scene(seed: u64, n_sources: usize, n_nodes: usize) -> Result<SceneSpec> {
    sample_scene_with(seed, n_sources, n_nodes, &SceneLayout::default())
}

pub fn sample_scene_with(
    seed: u64,
    n_sources: usize,
    n_nodes: usize,
    layout: &SceneLayout,
) -> Result<SceneSpec> {
    if n_sources == 0 || n_nodes == 0 {
        return Err(Error::Config(format!(
            "need at least one source and one node, got N={n_sources} K={n_nodes}"
        )));
    }
    if layout.mics_per_node == 0 {
        return Err(Error::Config("nodes need at least one microphone".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_failure = String::new();

    for _ in 0..layout.max_attempts.max(1) {
        let room = RoomSpec {
            length_m: uniform(&mut rng, ROOM_LENGTH_RANGE),
            width_m: uniform(&mut rng, ROOM_WIDTH_RANGE),
            height_m: uniform(&mut rng, ROOM_HEIGHT_RANGE),
            t60_s: uniform(&mut rng, T60_RANGE),
        };
        let radius = uniform(&mut rng, TABLE_RADIUS_RANGE);
        let table_height = uniform(&mut rng, TABLE_HEIGHT_RANGE);
        let offsets: Vec<f64> = (0..n_sources)
            .map(|_| uniform(&mut rng, SOURCE_EDGE_DISTANCE_RANGE))
            .collect();
        let heights: Vec<f64> = (0..n_sources)
            .map(|_| uniform(&mut rng, SOURCE_HEIGHT_RANGE))
            .collect();
        let phase = rng.random_range(0.0..TAU);
        let (u, v): (f64, f64) = (rng.random(), rng.random());

        if let Err(e) = t60_to_absorption(room.t60_s, &room) {
            last_failure = e.to_string();
            continue;
        }
        let reach = radius + offsets.iter().cloned().fold(0.0, f64::max) + layout.wall_clearance_m;
        let free_x = room.length_m - 2.0 * reach;
        let free_y = room.width_m - 2.0 * reach;
        if free_x <= 0.0 || free_y <= 0.0 {
            last_failure = format!(
                "table of radius {radius:.2} m with talkers does not fit a {:.2} x {:.2} m floor",
                room.length_m, room.width_m
            );
            continue;
        }
        let center = [reach + u * free_x, reach + v * free_y];
        let table = TableSpec {
            center_xy: center,
            radius_m: radius,
            height_m: table_height,
        };

        let sources = (0..n_sources)
            .map(|n| {
                let az = wrap_angle(phase + TAU * n as f64 / n_sources as f64);
                let d = radius + offsets[n];
                SourcePlacement {
                    source_id: n,
                    position_xyz: [center[0] + d * az.cos(), center[1] + d * az.sin(), heights[n]],
                    azimuth_rad: az,
                }
            })
            .collect::<Vec<_>>();

        let azimuths = node_azimuths(phase, n_sources, n_nodes);
        let nodes = azimuths
            .into_iter()
            .enumerate()
            .map(|(k, az)| {
                let d = (radius - layout.node_inset_m).max(0.0);
                let c = [center[0] + d * az.cos(), center[1] + d * az.sin(), table_height];
                NodePlacement {
                    node_id: k,
                    azimuth_rad: az,
                    mic_positions_xyz: mic_ring(c, az, layout.mics_per_node, layout.mic_spacing_m),
                    associated_source: (k < n_sources).then_some(k),
                }
            })
            .collect();

        let scene = SceneSpec {
            schema_version: SCHEMA_VERSION,
            room,
            table,
            sources,
            nodes,
            sample_rate_hz: layout.sample_rate_hz,
            seed,
        };
        match scene.validate() {
            Ok(()) => return Ok(scene),
            Err(e) => last_failure = e.to_string(),
        }
    }
    Err(Error::Sampling {
        constraint: last_failure,
    })
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

fn wrap_angle(a: f64) -> f64 {
    a.rem_euclid(TAU)
}

/// Node `k < N` faces source `k`. Extra nodes are spread over the gaps
/// between talkers, round-robin, evenly within each gap.
fn node_azimuths(phase: f64, n_sources: usize, n_nodes: usize) -> Vec<f64> {
    let gap = TAU / n_sources as f64;
    let mut az: Vec<f64> = (0..n_nodes.min(n_sources))
        .map(|k| wrap_angle(phase + gap * k as f64))
        .collect();
    let extra = n_nodes.saturating_sub(n_sources);
    let mut per_gap = vec![0usize; n_sources];
    for j in 0..extra {
        per_gap[j % n_sources] += 1;
    }
    let mut slot = vec![0usize; n_sources];
    for j in 0..extra {
        let g = j % n_sources;
        slot[g] += 1;
        let frac = slot[g] as f64 / (per_gap[g] + 1) as f64;
        az.push(wrap_angle(phase + gap * (g as f64 + frac)));
    }
    az
}

/// `count` mics on a ring at table height, rotated with the device. Four
/// mics form a square of side `spacing`.
fn mic_ring(center: [f64; 3], azimuth: f64, count: usize, spacing: f64) -> Vec<[f64; 3]> {
    if count == 1 {
        return vec![center];
    }
    let radius = spacing / (2.0 * (PI / count as f64).sin());
    (0..count)
        .map(|i| {
            let a = azimuth + PI / count as f64 + TAU * i as f64 / count as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin(), center[2]]
        })
        .collect()
}

/// Sabine inversion `alpha = 0.161 V / (S T60)`, one coefficient for every
/// surface.
pub fn t60_to_absorption(t60_s: f64, room: &RoomSpec) -> Result<f64> {
    if !(t60_s > 0.0 && t60_s.is_finite()) {
        return Err(Error::InfeasibleAcoustics(format!("T60 {t60_s} s must be positive")));
    }
    let alpha = 0.161 * room.volume() / (room.surface() * t60_s);
    if alpha.is_nan() || alpha >= 1.0 {
        return Err(Error::InfeasibleAcoustics(format!(
            "T60 {t60_s} s needs absorption {alpha:.3} >= 1 in a {:.2} x {:.2} x {:.2} m room",
            room.length_m, room.width_m, room.height_m
        )));
    }
    Ok(alpha)
}
