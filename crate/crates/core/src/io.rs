//! File formats and the device wire protocol.
//!
//! Frames are 16 bytes:
//!
//! | bytes  | field                                  |
//! |--------|----------------------------------------|
//! | 0..2   | sync `AA 55`                           |
//! | 2      | version `01`                           |
//! | 3      | line id                                |
//! | 4..8   | tick, u32 little-endian                |
//! | 8..12  | calibrated capacitance, i32 LE, aF     |
//! | 12     | CAPDAC index                           |
//! | 13     | flags (bit0 recalibrated, bit1 saturated) |
//! | 14..16 | CRC-16/CCITT-FALSE of bytes 2..14, big-endian |

use std::fmt::Write as _;
use std::path::Path;

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};

use crate::electrodes::ElectrodeAssembly;
use crate::error::{Error, Result};
use crate::imaging::{self, Detection, SubsurfaceImage};
use crate::scan::{ScanLine, ScanMode, ScanPath, ScanSession};
use crate::sensor::{ConverterConfig, EncoderModel, ScanSample, FLAG_RECALIBRATED, FLAG_SATURATED};
use crate::solver::SolverConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const FRAME_LEN: usize = 16;
pub const FRAME_SYNC: [u8; 2] = [0xAA, 0x55];
pub const FRAME_VERSION: u8 = 0x01;

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub line_id: u8,
    pub tick: u32,
    pub capacitance_af: i32,
    pub capdac_index: u8,
    pub flags: u8,
}

impl Frame {
    pub fn from_sample(sample: &ScanSample, line_id: u8, capdac_step_pf: f64) -> Result<Frame> {
        let af = (sample.calibrated_pf * 1e6).round();
        if !(af.is_finite() && af >= i32::MIN as f64 && af <= i32::MAX as f64) {
            return Err(Error::InvalidParameter(format!(
                "calibrated capacitance {} pF does not fit the 32-bit attofarad field",
                sample.calibrated_pf
            )));
        }
        Ok(Frame {
            line_id,
            tick: sample.tick,
            capacitance_af: af as i32,
            capdac_index: sample.capdac_index(capdac_step_pf),
            flags: sample.flags(),
        })
    }

    pub fn encode(&self) -> [u8; FRAME_LEN] {
        let mut b = [0u8; FRAME_LEN];
        b[0..2].copy_from_slice(&FRAME_SYNC);
        b[2] = FRAME_VERSION;
        b[3] = self.line_id;
        b[4..8].copy_from_slice(&self.tick.to_le_bytes());
        b[8..12].copy_from_slice(&self.capacitance_af.to_le_bytes());
        b[12] = self.capdac_index;
        b[13] = self.flags;
        let crc = crc16(&b[2..14]);
        b[14..16].copy_from_slice(&crc.to_be_bytes());
        b
    }

    /// Decode one aligned frame; `None` on bad sync, version or CRC.
    pub fn decode(b: &[u8; FRAME_LEN]) -> Option<Frame> {
        if b[0..2] != FRAME_SYNC || b[2] != FRAME_VERSION {
            return None;
        }
        if crc16(&b[2..14]) != u16::from_be_bytes([b[14], b[15]]) {
            return None;
        }
        Some(Frame {
            line_id: b[3],
            tick: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
            capacitance_af: i32::from_le_bytes([b[8], b[9], b[10], b[11]]),
            capdac_index: b[12],
            flags: b[13],
        })
    }

    pub fn calibrated_pf(&self) -> f64 {
        self.capacitance_af as f64 / 1e6
    }

    pub fn recalibrated(&self) -> bool {
        self.flags & FLAG_RECALIBRATED != 0
    }

    pub fn saturated(&self) -> bool {
        self.flags & FLAG_SATURATED != 0
    }
}

pub fn encode_frame(sample: &ScanSample, line_id: u8, capdac_step_pf: f64) -> Result<[u8; FRAME_LEN]> {
    Ok(Frame::from_sample(sample, line_id, capdac_step_pf)?.encode())
}

/// One run of bytes that did not form a valid frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropEvent {
    pub offset: u64,
    pub len: u64,
}

/// Cap on the number of individually recorded drop events.
pub const MAX_DROP_EVENTS: usize = 1024;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub frames: u64,
    pub bytes: u64,
    /// Skipped bytes counted in frame-sized units, rounded up per run.
    pub dropped_frames: u64,
    pub skipped_bytes: u64,
    pub drops: Vec<DropEvent>,
}

/// Resumable frame scanner: feed chunks, collect frames, then `finish`.
#[derive(Debug, Default)]
pub struct FrameParser {
    buf: Vec<u8>,
    /// Stream offset of `buf[0]`.
    base: u64,
    garbage_start: u64,
    garbage_len: u64,
    diag: ParseDiagnostics,
}

impl FrameParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &[u8], out: &mut Vec<Frame>) {
        self.diag.bytes += chunk.len() as u64;
        self.buf.extend_from_slice(chunk);
        let mut p = 0;
        let n = self.buf.len();
        while p + FRAME_LEN <= n {
            if self.buf[p] == FRAME_SYNC[0] && self.buf[p + 1] == FRAME_SYNC[1] {
                let window: &[u8; FRAME_LEN] = self.buf[p..p + FRAME_LEN].try_into().unwrap();
                if let Some(f) = Frame::decode(window) {
                    self.close_garbage();
                    out.push(f);
                    self.diag.frames += 1;
                    p += FRAME_LEN;
                    continue;
                }
            }
            self.skip(self.base + p as u64);
            p += 1;
        }
        // keep a possible frame start; everything before it is garbage already counted
        self.buf.drain(..p);
        self.base += p as u64;
    }

    fn skip(&mut self, offset: u64) {
        if self.garbage_len == 0 {
            self.garbage_start = offset;
        }
        self.garbage_len += 1;
    }

    fn close_garbage(&mut self) {
        if self.garbage_len > 0 {
            self.diag.dropped_frames += self.garbage_len.div_ceil(FRAME_LEN as u64);
            self.diag.skipped_bytes += self.garbage_len;
            if self.diag.drops.len() < MAX_DROP_EVENTS {
                self.diag.drops.push(DropEvent {
                    offset: self.garbage_start,
                    len: self.garbage_len,
                });
            }
            self.garbage_len = 0;
        }
    }

    pub fn diagnostics(&self) -> &ParseDiagnostics {
        &self.diag
    }

    /// End of stream: a trailing partial frame counts as dropped.
    pub fn finish(mut self) -> ParseDiagnostics {
        for k in 0..self.buf.len() as u64 {
            self.skip(self.base + k);
        }
        self.close_garbage();
        self.diag
    }
}

pub fn parse_stream(bytes: &[u8]) -> (Vec<Frame>, ParseDiagnostics) {
    let mut p = FrameParser::new();
    let mut out = Vec::with_capacity(bytes.len() / FRAME_LEN);
    p.push(bytes, &mut out);
    (out, p.finish())
}

/// All samples of a session as a frame stream, line by line.
pub fn session_frames(session: &ScanSession) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (j, line) in session.lines.iter().enumerate() {
        let id = u8::try_from(j).map_err(|_| Error::InvalidParameter("more than 256 lines".into()))?;
        for s in &line.samples {
            out.extend_from_slice(&encode_frame(s, id, session.converter.capdac_step_pf)?);
        }
    }
    Ok(out)
}

pub const SESSION_MAGIC: &str = "# capascan-session v1";
pub const SESSION_COLUMNS: &str = "line,tick,along_track_mm,raw_pF,capdac_pF,calibrated_pF,flags";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionHeader {
    artifact_version: String,
    path: ScanPath,
    assembly: ElectrodeAssembly,
    encoder: EncoderModel,
    converter: ConverterConfig,
    solver: SolverConfig,
    mode: ScanMode,
    scene_digest: String,
    line_offsets_mm: Vec<f64>,
    samples_per_line: Vec<usize>,
}

/// Header line, JSON parameter line, column line, then one row per sample.
pub fn session_to_string(s: &ScanSession) -> String {
    let header = SessionHeader {
        artifact_version: ARTIFACT_VERSION.to_owned(),
        path: s.path,
        assembly: s.assembly.clone(),
        encoder: s.encoder,
        converter: s.converter,
        solver: s.solver,
        mode: s.mode,
        scene_digest: s.scene_digest.clone(),
        line_offsets_mm: s.lines.iter().map(|l| l.offset_mm).collect(),
        samples_per_line: s.lines.iter().map(|l| l.samples.len()).collect(),
    };
    let mut out = String::new();
    out.push_str(SESSION_MAGIC);
    out.push('\n');
    writeln!(out, "# {}", serde_json::to_string(&header).unwrap()).unwrap();
    out.push_str(SESSION_COLUMNS);
    out.push('\n');
    for (j, line) in s.lines.iter().enumerate() {
        for x in &line.samples {
            writeln!(
                out,
                "{j},{},{},{},{},{},{}",
                x.tick,
                x.along_track_mm,
                x.raw_pf,
                x.capdac_pf,
                x.calibrated_pf,
                x.flags()
            )
            .unwrap();
        }
    }
    out
}

pub fn session_from_str(text: &str) -> Result<ScanSession> {
    let mut lines = text.lines().enumerate().peekable();
    let mut header: Option<SessionHeader> = None;
    if let Some((_, first)) = lines.peek() {
        if first.starts_with("# capascan-session") {
            if first.trim_end() != SESSION_MAGIC {
                return Err(Error::format(format!(
                    "unsupported session version `{}` (expected `{SESSION_MAGIC}`)",
                    first.trim_end()
                )));
            }
            lines.next();
        }
    }
    while let Some((no, l)) = lines.peek() {
        let Some(rest) = l.strip_prefix('#') else { break };
        let rest = rest.trim();
        if rest.starts_with('{') {
            header = Some(
                serde_json::from_str(rest)
                    .map_err(|e| Error::format(format!("line {}: bad session header: {e}", no + 1)))?,
            );
        }
        lines.next();
    }
    match lines.next() {
        Some((_, l)) if l.trim_end() == SESSION_COLUMNS => {}
        Some((no, l)) => {
            return Err(Error::format(format!(
                "line {}: expected column header `{SESSION_COLUMNS}`, found `{}`",
                no + 1,
                l.trim_end()
            )))
        }
        None => return Err(Error::format("session has no column header")),
    }
    let mut out: Vec<ScanLine> = Vec::new();
    let mut last_good: Option<(usize, usize, u32)> = None;
    let describe = |g: Option<(usize, usize, u32)>| match g {
        Some((no, line, tick)) => format!("last good row is file line {no} (line {line}, tick {tick})"),
        None => "no rows were read".to_owned(),
    };
    for (no, l) in lines {
        let no = no + 1;
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        let malformed = |why: String| Error::format(format!("line {no}: {why}; {}", describe(last_good)));
        if fields.len() != 7 {
            return Err(malformed(format!("expected 7 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("field {} `{}` is not a finite number", k + 1, fields[k])))
        };
        let line: usize = fields[0]
            .parse()
            .map_err(|_| malformed(format!("bad line index `{}`", fields[0])))?;
        let tick: u32 = fields[1]
            .parse()
            .map_err(|_| malformed(format!("bad tick `{}`", fields[1])))?;
        let flags: u8 = fields[6]
            .parse()
            .ok()
            .filter(|f| f & !(FLAG_RECALIBRATED | FLAG_SATURATED) == 0)
            .ok_or_else(|| malformed(format!("bad flags `{}`", fields[6])))?;
        let sample = ScanSample {
            tick,
            along_track_mm: num(2)?,
            raw_pf: num(3)?,
            capdac_pf: num(4)?,
            calibrated_pf: num(5)?,
            recalibrated: flags & FLAG_RECALIBRATED != 0,
            saturated: flags & FLAG_SATURATED != 0,
        };
        if (sample.raw_pf + sample.capdac_pf - sample.calibrated_pf).abs() > 1e-9 {
            return Err(malformed("calibrated_pF differs from raw_pF + capdac_pF".into()));
        }
        if line == out.len() {
            out.push(ScanLine {
                offset_mm: 0.0,
                samples: Vec::new(),
            });
        } else if line + 1 != out.len() {
            return Err(malformed(format!("line index {line} out of order")));
        }
        let cur = &mut out[line].samples;
        let expected = cur.last().map_or(0, |s| s.tick + 1);
        if tick != expected {
            return Err(malformed(format!("tick {tick} out of order (expected {expected})")));
        }
        cur.push(sample);
        last_good = Some((no, line, tick));
    }
    let total: usize = out.iter().map(|l| l.samples.len()).sum();
    let session = match header {
        Some(h) => {
            let expected: usize = h.samples_per_line.iter().sum();
            let counts: Vec<usize> = out.iter().map(|l| l.samples.len()).collect();
            if counts != h.samples_per_line {
                return Err(Error::format(format!(
                    "truncated or inconsistent session: header declares {expected} rows in {} lines, found {total} rows in {} lines; {}",
                    h.samples_per_line.len(),
                    out.len(),
                    describe(last_good)
                )));
            }
            for (l, off) in out.iter_mut().zip(&h.line_offsets_mm) {
                l.offset_mm = *off;
            }
            ScanSession {
                path: h.path,
                assembly: h.assembly,
                encoder: h.encoder,
                converter: h.converter,
                solver: h.solver,
                mode: h.mode,
                scene_digest: h.scene_digest,
                lines: out,
            }
        }
        None => {
            // bare table: default parameters, lines one preset spacing apart
            let mut path = ScanPath::preset("fig7").unwrap();
            path.num_lines = out.len().max(1);
            for (j, l) in out.iter_mut().enumerate() {
                l.offset_mm = path.line_offset_mm(j);
            }
            ScanSession {
                path,
                assembly: ElectrodeAssembly::lookup("comb_default").unwrap(),
                encoder: EncoderModel::default(),
                converter: ConverterConfig::default(),
                solver: SolverConfig::default(),
                mode: ScanMode::Exact,
                scene_digest: String::new(),
                lines: out,
            }
        }
    };
    Ok(session)
}

pub fn save_session(session: &ScanSession, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, session_to_string(session))?;
    Ok(())
}

pub fn load_session(path: impl AsRef<Path>) -> Result<ScanSession> {
    session_from_str(&std::fs::read_to_string(path)?)
}

pub const IMAGE_MAGIC: &str = "# capascan-image v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageHeader {
    artifact_version: String,
    rows: usize,
    cols: usize,
    origin_mm: [f64; 2],
    along: [f64; 2],
    across: [f64; 2],
    x_pitch_mm: f64,
    y_pitch_mm: f64,
    noise_floor_pf: f64,
    provenance: String,
}

/// Row-major matrix of anomalies in pF; rows run across track.
pub fn image_to_csv(img: &SubsurfaceImage) -> String {
    let h = ImageHeader {
        artifact_version: ARTIFACT_VERSION.to_owned(),
        rows: img.rows,
        cols: img.cols,
        origin_mm: img.origin_mm,
        along: img.along,
        across: img.across,
        x_pitch_mm: img.x_pitch_mm,
        y_pitch_mm: img.y_pitch_mm,
        noise_floor_pf: img.noise_floor_pf,
        provenance: img.provenance.clone(),
    };
    let mut out = String::new();
    out.push_str(IMAGE_MAGIC);
    out.push('\n');
    writeln!(out, "# {}", serde_json::to_string(&h).unwrap()).unwrap();
    for r in 0..img.rows {
        let row: Vec<String> = (0..img.cols).map(|c| format!("{}", img.get(r, c))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn image_from_csv(text: &str) -> Result<SubsurfaceImage> {
    let mut it = text.lines().enumerate();
    match it.next() {
        Some((_, l)) if l.trim_end() == IMAGE_MAGIC => {}
        _ => return Err(Error::format(format!("not an image file (expected `{IMAGE_MAGIC}`)"))),
    }
    let h: ImageHeader = match it.next() {
        Some((_, l)) => serde_json::from_str(l.trim_start_matches('#').trim())
            .map_err(|e| Error::format(format!("line 2: bad image header: {e}")))?,
        None => return Err(Error::format("image file has no header")),
    };
    let mut values = Vec::with_capacity(h.rows * h.cols);
    let mut rows = 0;
    for (no, l) in it {
        if l.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = l
            .split(',')
            .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::format(format!("line {}: malformed image row", no + 1)))?;
        if row.len() != h.cols {
            return Err(Error::format(format!(
                "line {}: expected {} values, found {}",
                no + 1,
                h.cols,
                row.len()
            )));
        }
        values.extend(row);
        rows += 1;
    }
    if rows != h.rows {
        return Err(Error::format(format!("expected {} image rows, found {rows}", h.rows)));
    }
    Ok(SubsurfaceImage {
        rows: h.rows,
        cols: h.cols,
        values,
        origin_mm: h.origin_mm,
        along: h.along,
        across: h.across,
        x_pitch_mm: h.x_pitch_mm,
        y_pitch_mm: h.y_pitch_mm,
        noise_floor_pf: h.noise_floor_pf,
        provenance: h.provenance,
    })
}

/// Detection listing with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionReport {
    pub artifact_version: String,
    pub image_provenance: String,
    pub k_mad: f64,
    pub metal_ratio: f64,
    pub threshold_pf: f64,
    pub detections: Vec<Detection>,
}

impl DetectionReport {
    pub fn new(img: &SubsurfaceImage, k_mad: f64, metal_ratio: f64) -> DetectionReport {
        let found = imaging::detect(img, k_mad);
        DetectionReport {
            artifact_version: ARTIFACT_VERSION.to_owned(),
            image_provenance: img.provenance.clone(),
            k_mad,
            metal_ratio,
            threshold_pf: imaging::threshold_pf(img, k_mad),
            detections: imaging::classify(&found, img, k_mad, metal_ratio),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<DetectionReport> {
        serde_json::from_str(text).map_err(|e| Error::format(format!("detection report: {e}")))
    }
}
