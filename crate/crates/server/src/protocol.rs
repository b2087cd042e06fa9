//! Message schemas. Every message is one JSON object per line with a
//! `type` tag; field names follow the protocol document in `docs/`.

use capascan_core::electrodes::ElectrodeAssembly;
use capascan_core::imaging::Detection;
use capascan_core::scene::{Scene, Violation};
use capascan_core::sensor::ConverterConfig;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: [u32; 1] = [PROTOCOL_VERSION];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssemblyRef {
    Named(String),
    Inline(ElectrodeAssembly),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        protocol_version: u32,
    },
    /// Exactly one of `scene` and `preset`.
    LoadScene {
        #[serde(default)]
        scene: Option<Scene>,
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        assembly: Option<AssemblyRef>,
        #[serde(default)]
        converter: Option<ConverterConfig>,
    },
    BeginLine {
        origin: [f64; 2],
        direction: [f64; 2],
    },
    MoveHead {
        x: f64,
        y: f64,
    },
    EndLine {},
    Detect {
        #[serde(default)]
        k_mad: Option<f64>,
        #[serde(default)]
        metal_ratio: Option<f64>,
    },
    Export {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_digest: String,
    pub extents_mm: [f64; 3],
    pub voxel_size_mm: f64,
    pub assembly: ElectrodeAssembly,
    pub tick_distance_mm: f64,
    pub background_pf: f64,
    /// `[x_min, y_min, x_max, y_max]` reachable by the head.
    pub head_bounds_mm: [f64; 4],
    /// Full scene, hidden objects included; clients decide what to show.
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub index: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol_versions: Vec<u32>,
        artifact_version: String,
        scene: Option<SceneSummary>,
    },
    SceneOk {
        scene: SceneSummary,
    },
    SceneError {
        violations: Vec<Violation>,
    },
    LineOk {
        line_id: usize,
    },
    Sample {
        line_id: usize,
        tick: u32,
        #[serde(rename = "calibrated_pF")]
        calibrated_pf: f64,
        flags: u8,
    },
    LineDone {
        line_id: usize,
        n_samples: usize,
    },
    /// Rows that differ from the previous update; all rows when the shape changed.
    ImageUpdate {
        rows_total: usize,
        cols: usize,
        origin_mm: [f64; 2],
        along: [f64; 2],
        across: [f64; 2],
        x_pitch_mm: f64,
        y_pitch_mm: f64,
        value_range: [f64; 2],
        provenance: String,
        rows: Vec<ImageRow>,
    },
    Detections {
        threshold_pf: f64,
        detections: Vec<Detection>,
    },
    Session {
        document: String,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    VersionMismatch,
    NoScene,
    NoActiveLine,
    LineActive,
    OutOfBounds,
    NoImage,
    InvalidParameter,
    Internal,
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }
}
