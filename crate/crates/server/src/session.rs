//! Per-connection state machine. Pure and synchronous: one client message in,
//! an ordered list of server messages out.

use std::sync::Arc;

use capascan_core::electrodes::ElectrodeAssembly;
use capascan_core::imaging::{self, SubsurfaceImage, DEFAULT_K_MAD, DEFAULT_METAL_RATIO};
use capascan_core::io::{self, DetectionReport, ARTIFACT_VERSION};
use capascan_core::scan::{scene_digest, KernelModel, ScanLine, ScanMode, ScanPath, ScanSession, PRESET_LINE_SPACING_MM};
use capascan_core::scene::{PermittivityGrid, Scene, Violation};
use capascan_core::sensor::{Converter, ConverterConfig, EncoderModel, ScanSample};
use capascan_core::solver::SolverConfig;
use capascan_core::Error;

use crate::protocol::*;

/// Cross-track pitch of the live image.
pub const LIVE_Y_PITCH_MM: f64 = 10.0;

/// A scene with its background solve done; shareable across connections.
#[derive(Debug)]
pub struct LoadedScene {
    pub scene: Scene,
    pub grid: PermittivityGrid,
    pub assembly: ElectrodeAssembly,
    pub kernel: KernelModel,
    pub scene_digest: String,
    pub solver: SolverConfig,
    pub head_bounds_mm: [f64; 4],
}

impl LoadedScene {
    pub fn build(scene: Scene, assembly: ElectrodeAssembly, solver: SolverConfig) -> capascan_core::Result<LoadedScene> {
        assembly.validate()?;
        let grid = scene.rasterize()?;
        let h = grid.voxel_size_mm();
        let ext = grid.extents_mm();
        let (x0, x1, y0, y1) = assembly.local_bounds();
        // one voxel of slack covers lattice snapping of the anchor
        let bounds = [-x0 + h, -y0 + h, ext[0] - x1 - h, ext[1] - y1 - h];
        if bounds[0] > bounds[2] || bounds[1] > bounds[3] {
            return Err(Error::OutOfDomain(format!(
                "scene {:?} mm is too small for the electrode footprint",
                [ext[0], ext[1]]
            )));
        }
        for head in [[bounds[0], bounds[1]], [bounds[2], bounds[3]]] {
            assembly.footprint(&grid, head)?;
        }
        let kernel = KernelModel::build(&grid, &assembly, &solver)?;
        Ok(LoadedScene {
            scene_digest: scene_digest(&scene),
            scene,
            grid,
            assembly,
            kernel,
            solver,
            head_bounds_mm: bounds,
        })
    }

    pub fn summary(&self, encoder: &EncoderModel) -> SceneSummary {
        SceneSummary {
            scene_digest: self.scene_digest.clone(),
            extents_mm: self.scene.extents_mm,
            voxel_size_mm: self.scene.voxel_size_mm,
            assembly: self.assembly.clone(),
            tick_distance_mm: encoder.tick_distance_mm(),
            background_pf: self.kernel.background_pf,
            head_bounds_mm: self.head_bounds_mm,
            scene: self.scene.clone(),
        }
    }

    fn clamp(&self, p: [f64; 2]) -> [f64; 2] {
        let b = self.head_bounds_mm;
        [p[0].clamp(b[0], b[2]), p[1].clamp(b[1], b[3])]
    }

    fn capacitance_pf(&self, head: [f64; 2]) -> capascan_core::Result<f64> {
        let fp = self.assembly.footprint(&self.grid, head)?;
        Ok(self.kernel.capacitance_pf(fp.anchor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Scanning,
    Finished,
}

#[derive(Debug)]
struct ActiveLine {
    id: usize,
    origin: [f64; 2],
    direction: [f64; 2],
    converter: Converter,
    samples: Vec<ScanSample>,
    head: [f64; 2],
    next_tick: u32,
}

#[derive(Debug)]
struct DoneLine {
    origin: [f64; 2],
    direction: [f64; 2],
    samples: Vec<ScanSample>,
}

#[derive(Debug, Default)]
pub struct Reply {
    pub messages: Vec<ServerMessage>,
    /// The transport should close the connection after sending.
    pub close: bool,
}

#[derive(Debug)]
pub struct LiveSession {
    loaded: Option<Arc<LoadedScene>>,
    converter: ConverterConfig,
    encoder: EncoderModel,
    done: Vec<DoneLine>,
    active: Option<ActiveLine>,
    head: Option<[f64; 2]>,
    image: Option<SubsurfaceImage>,
}

impl LiveSession {
    pub fn new(loaded: Option<Arc<LoadedScene>>) -> Self {
        LiveSession {
            loaded,
            converter: ConverterConfig::default(),
            encoder: EncoderModel::default(),
            done: Vec::new(),
            active: None,
            head: None,
            image: None,
        }
    }

    pub fn phase(&self) -> Phase {
        match (&self.active, self.done.is_empty()) {
            (Some(_), _) => Phase::Scanning,
            (None, true) => Phase::Idle,
            (None, false) => Phase::Finished,
        }
    }

    pub fn head_mm(&self) -> Option<[f64; 2]> {
        self.head
    }

    pub fn completed_lines(&self) -> usize {
        self.done.len()
    }

    pub fn image(&self) -> Option<&SubsurfaceImage> {
        self.image.as_ref()
    }

    /// Process one line of input.
    pub fn handle(&mut self, text: &str) -> Reply {
        let msg = match serde_json::from_str::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) => return reply(ServerMessage::error(ErrorCode::Malformed, e.to_string())),
        };
        self.handle_message(msg)
    }

    pub fn handle_message(&mut self, msg: ClientMessage) -> Reply {
        match msg {
            ClientMessage::Hello { protocol_version } => {
                if !SUPPORTED_VERSIONS.contains(&protocol_version) {
                    return Reply {
                        messages: vec![ServerMessage::error(
                            ErrorCode::VersionMismatch,
                            format!("client speaks version {protocol_version}, server supports {SUPPORTED_VERSIONS:?}"),
                        )],
                        close: true,
                    };
                }
                reply(ServerMessage::Hello {
                    protocol_versions: SUPPORTED_VERSIONS.to_vec(),
                    artifact_version: ARTIFACT_VERSION.to_owned(),
                    scene: self.loaded.as_ref().map(|l| l.summary(&self.encoder)),
                })
            }
            ClientMessage::LoadScene {
                scene,
                preset,
                assembly,
                converter,
            } => self.load_scene(scene, preset, assembly, converter),
            ClientMessage::BeginLine { origin, direction } => self.begin_line(origin, direction),
            ClientMessage::MoveHead { x, y } => self.move_head([x, y]),
            ClientMessage::EndLine {} => self.end_line(),
            ClientMessage::Detect { k_mad, metal_ratio } => {
                let Some(img) = &self.image else {
                    return reply(ServerMessage::error(ErrorCode::NoImage, "finish a line first"));
                };
                let k = k_mad.unwrap_or(DEFAULT_K_MAD);
                let ratio = metal_ratio.unwrap_or(DEFAULT_METAL_RATIO);
                if !(k > 0.0 && ratio > 0.0 && k.is_finite() && ratio.is_finite()) {
                    return reply(ServerMessage::error(ErrorCode::InvalidParameter, "k_mad and metal_ratio must be positive"));
                }
                let r = DetectionReport::new(img, k, ratio);
                reply(ServerMessage::Detections {
                    threshold_pf: r.threshold_pf,
                    detections: r.detections,
                })
            }
            ClientMessage::Export {} => match self.session(false) {
                Some(s) => reply(ServerMessage::Session {
                    document: io::session_to_string(&s),
                }),
                None => reply(ServerMessage::error(ErrorCode::NoImage, "no completed lines to export")),
            },
        }
    }

    fn load_scene(
        &mut self,
        scene: Option<Scene>,
        preset: Option<String>,
        assembly: Option<AssemblyRef>,
        converter: Option<ConverterConfig>,
    ) -> Reply {
        let violation = |field: &str, rule: String| {
            reply(ServerMessage::SceneError {
                violations: vec![Violation {
                    field: field.to_owned(),
                    rule,
                }],
            })
        };
        let scene = match (scene, preset) {
            (Some(s), None) => s,
            (None, Some(name)) => match Scene::preset(&name) {
                Ok(s) => s,
                Err(e) => return violation("preset", e.to_string()),
            },
            _ => return violation("scene", "give exactly one of `scene` and `preset`".into()),
        };
        let assembly = match assembly {
            None => match &scene.assembly {
                Some(a) => a.clone(),
                None => ElectrodeAssembly::lookup("comb_default").expect("preset assembly"),
            },
            Some(AssemblyRef::Named(n)) => match ElectrodeAssembly::lookup(&n) {
                Ok(a) => a,
                Err(e) => return violation("assembly", e.to_string()),
            },
            Some(AssemblyRef::Inline(a)) => a,
        };
        let converter = converter.unwrap_or_default();
        if let Err(e) = converter.validate() {
            return violation("converter", e.to_string());
        }
        match LoadedScene::build(scene, assembly, SolverConfig::default()) {
            Ok(l) => {
                self.reset(Some(Arc::new(l)), converter);
                let summary = self.loaded.as_ref().unwrap().summary(&self.encoder);
                reply(ServerMessage::SceneOk { scene: summary })
            }
            Err(Error::InvalidScene(v)) => reply(ServerMessage::SceneError { violations: v }),
            Err(e) => violation("scene", e.to_string()),
        }
    }

    fn reset(&mut self, loaded: Option<Arc<LoadedScene>>, converter: ConverterConfig) {
        *self = LiveSession {
            converter,
            ..LiveSession::new(loaded)
        };
    }

    fn begin_line(&mut self, origin: [f64; 2], direction: [f64; 2]) -> Reply {
        let Some(loaded) = self.loaded.clone() else {
            return reply(ServerMessage::error(ErrorCode::NoScene, "load a scene first"));
        };
        if let Some(a) = &self.active {
            return reply(ServerMessage::error(ErrorCode::LineActive, format!("line {} is still open", a.id)));
        }
        let norm = direction[0].hypot(direction[1]);
        if !(norm.is_finite() && norm > 0.0 && origin.iter().all(|v| v.is_finite())) {
            return reply(ServerMessage::error(ErrorCode::InvalidParameter, "direction must be a finite non-zero vector"));
        }
        let direction = [direction[0] / norm, direction[1] / norm];
        let mut out = Vec::new();
        let start = loaded.clamp(origin);
        if start != origin {
            out.push(out_of_bounds(origin, start));
        }
        let id = self.done.len();
        let mut line = ActiveLine {
            id,
            origin: start,
            direction,
            converter: self.converter.for_line(id),
            samples: Vec::new(),
            head: start,
            next_tick: 0,
        };
        out.push(ServerMessage::LineOk { line_id: id });
        // the head is set down on tick 0
        if let Err(e) = sample_tick(&loaded, &mut line, start, self.encoder.tick_distance_mm(), &mut out) {
            return reply(ServerMessage::error(ErrorCode::Internal, e.to_string()));
        }
        self.head = Some(start);
        self.active = Some(line);
        Reply {
            messages: out,
            close: false,
        }
    }

    fn move_head(&mut self, target: [f64; 2]) -> Reply {
        let Some(loaded) = self.loaded.clone() else {
            return reply(ServerMessage::error(ErrorCode::NoScene, "load a scene first"));
        };
        if !(target[0].is_finite() && target[1].is_finite()) {
            return reply(ServerMessage::error(ErrorCode::InvalidParameter, "head position must be finite"));
        }
        let mut out = Vec::new();
        let to = loaded.clamp(target);
        if to != target {
            out.push(out_of_bounds(target, to));
        }
        self.head = Some(to);
        let Some(line) = self.active.as_mut() else {
            // repositioning between lines is allowed and samples nothing
            return Reply {
                messages: out,
                close: false,
            };
        };
        let td = self.encoder.tick_distance_mm();
        let along = |p: [f64; 2]| (p[0] - line.origin[0]) * line.direction[0] + (p[1] - line.origin[1]) * line.direction[1];
        let from = line.head;
        let (s0, s1) = (along(from), along(to));
        loop {
            let s_tick = line.next_tick as f64 * td;
            if s_tick > s1 + 1e-9 {
                break;
            }
            let t = if s1 > s0 { ((s_tick - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 1.0 };
            let at = [from[0] + t * (to[0] - from[0]), from[1] + t * (to[1] - from[1])];
            if let Err(e) = sample_tick(&loaded, line, at, td, &mut out) {
                out.push(ServerMessage::error(ErrorCode::Internal, e.to_string()));
                break;
            }
        }
        line.head = to;
        Reply {
            messages: out,
            close: false,
        }
    }

    fn end_line(&mut self) -> Reply {
        let Some(line) = self.active.take() else {
            return reply(ServerMessage::error(ErrorCode::NoActiveLine, "no line is open"));
        };
        let mut out = vec![ServerMessage::LineDone {
            line_id: line.id,
            n_samples: line.samples.len(),
        }];
        self.done.push(DoneLine {
            origin: line.origin,
            direction: line.direction,
            samples: line.samples,
        });
        let session = self.session(true).expect("at least one line");
        match imaging::assemble(&session, LIVE_Y_PITCH_MM) {
            Ok(img) => {
                out.push(image_update(self.image.as_ref(), &img));
                self.image = Some(img);
            }
            Err(e) => out.push(ServerMessage::error(ErrorCode::Internal, e.to_string())),
        }
        Reply {
            messages: out,
            close: false,
        }
    }

    /// Completed lines as a session, ordered by cross-track offset from the
    /// first line. `for_image` truncates every line to the shortest one.
    pub fn session(&self, for_image: bool) -> Option<ScanSession> {
        let loaded = self.loaded.as_ref()?;
        let first = self.done.first()?;
        let across = [-first.direction[1], first.direction[0]];
        let mut lines: Vec<ScanLine> = self
            .done
            .iter()
            .map(|l| ScanLine {
                offset_mm: (l.origin[0] - first.origin[0]) * across[0] + (l.origin[1] - first.origin[1]) * across[1],
                samples: l.samples.clone(),
            })
            .collect();
        lines.sort_by(|a, b| a.offset_mm.total_cmp(&b.offset_mm));
        if for_image {
            let n = lines.iter().map(|l| l.samples.len()).min().unwrap_or(0);
            for l in &mut lines {
                l.samples.truncate(n);
            }
        }
        let span = lines.last().unwrap().offset_mm - lines[0].offset_mm;
        let longest = self.done.iter().map(|l| l.samples.len()).max().unwrap_or(1);
        Some(ScanSession {
            path: ScanPath {
                origin_mm: first.origin,
                direction: first.direction,
                line_length_mm: ((longest - 1) as f64 * self.encoder.tick_distance_mm()).max(f64::MIN_POSITIVE),
                num_lines: lines.len(),
                line_spacing_mm: if lines.len() > 1 && span > 0.0 {
                    span / (lines.len() - 1) as f64
                } else {
                    PRESET_LINE_SPACING_MM
                },
            },
            assembly: loaded.assembly.clone(),
            encoder: self.encoder,
            converter: self.converter,
            solver: loaded.solver,
            mode: ScanMode::Kernel,
            scene_digest: loaded.scene_digest.clone(),
            lines,
        })
    }
}

fn reply(m: ServerMessage) -> Reply {
    Reply {
        messages: vec![m],
        close: false,
    }
}

fn out_of_bounds(asked: [f64; 2], clamped: [f64; 2]) -> ServerMessage {
    ServerMessage::error(
        ErrorCode::OutOfBounds,
        format!(
            "({:.3}, {:.3}) mm is outside the reachable area; head clamped to ({:.3}, {:.3})",
            asked[0], asked[1], clamped[0], clamped[1]
        ),
    )
}

fn sample_tick(
    loaded: &LoadedScene,
    line: &mut ActiveLine,
    at: [f64; 2],
    td: f64,
    out: &mut Vec<ServerMessage>,
) -> capascan_core::Result<()> {
    let c = loaded.capacitance_pf(at)?;
    let tick = line.next_tick;
    let along = tick as f64 * td;
    let s = line.converter.measure(c, tick, along);
    out.push(ServerMessage::Sample {
        line_id: line.id,
        tick,
        calibrated_pf: s.calibrated_pf,
        flags: s.flags(),
    });
    line.samples.push(s);
    line.next_tick += 1;
    Ok(())
}

fn image_update(prev: Option<&SubsurfaceImage>, img: &SubsurfaceImage) -> ServerMessage {
    let same_shape = prev.is_some_and(|p| p.rows == img.rows && p.cols == img.cols && p.origin_mm == img.origin_mm);
    let rows = (0..img.rows)
        .filter(|&r| !same_shape || prev.unwrap().row(r) != img.row(r))
        .map(|r| ImageRow {
            index: r,
            values: img.row(r).to_vec(),
        })
        .collect();
    let (lo, hi) = img.value_range();
    ServerMessage::ImageUpdate {
        rows_total: img.rows,
        cols: img.cols,
        origin_mm: img.origin_mm,
        along: img.along,
        across: img.across,
        x_pitch_mm: img.x_pitch_mm,
        y_pitch_mm: img.y_pitch_mm,
        value_range: [lo, hi],
        provenance: img.provenance.clone(),
        rows,
    }
}
