//! Moves the virtual head along parallel lines and samples the converter at
//! every encoder tick, either with a full solve per tick or through the
//! first-order sensitivity kernel of the object-free background.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::electrodes::ElectrodeAssembly;
use crate::error::{Error, Result};
use crate::scene::{PermittivityGrid, Scene, PRESET_NAMES};
use crate::sensor::{ConverterConfig, EncoderModel, ScanSample};
use crate::solver::{self, SensitivityMap, SolverConfig, EPS0_PF_PER_MM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Exact,
    Kernel,
}

impl std::str::FromStr for ScanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ScanMode::Exact),
            "kernel" => Ok(ScanMode::Kernel),
            other => Err(Error::InvalidParameter(format!(
                "unknown scan mode `{other}` (expected exact or kernel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanPath {
    pub origin_mm: [f64; 2],
    pub direction: [f64; 2],
    pub line_length_mm: f64,
    pub num_lines: usize,
    pub line_spacing_mm: f64,
}

/// Along-track start, first-line offset, length and spacing of the preset paths.
pub const PRESET_ORIGIN_MM: [f64; 2] = [20.0, 30.0];
pub const PRESET_LINE_LENGTH_MM: f64 = 300.0;
/// The metal/wood scene is wider so most of each line sees bare plywood.
pub const FIG10_LINE_LENGTH_MM: f64 = 460.0;
pub const PRESET_LINES: usize = 5;
pub const PRESET_LINE_SPACING_MM: f64 = 50.0;

impl ScanPath {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let norm = self.direction[0].hypot(self.direction[1]);
        if !(norm.is_finite() && (norm - 1.0).abs() < 1e-6) {
            return bad(format!("direction must be a unit vector, got {:?}", self.direction));
        }
        if !(self.line_length_mm.is_finite() && self.line_length_mm > 0.0) {
            return bad(format!("line_length_mm must be positive, got {}", self.line_length_mm));
        }
        if self.num_lines == 0 {
            return bad("num_lines must be at least 1".into());
        }
        if self.num_lines > 1 && !(self.line_spacing_mm.is_finite() && self.line_spacing_mm > 0.0) {
            return bad(format!("line_spacing_mm must be positive, got {}", self.line_spacing_mm));
        }
        if !(self.origin_mm[0].is_finite() && self.origin_mm[1].is_finite()) {
            return bad("origin_mm must be finite".into());
        }
        Ok(())
    }

    /// Five lines along +x, 50 mm apart, as used for every scene preset.
    pub fn preset(name: &str) -> Result<ScanPath> {
        let known = PRESET_NAMES.contains(&name) || matches!(name, "fig7" | "fig8" | "fig9" | "fig10");
        if !known {
            return Err(Error::UnknownPreset(name.to_owned()));
        }
        let line_length_mm = if matches!(name, "fig10" | "fig10_metal_and_wood") {
            FIG10_LINE_LENGTH_MM
        } else {
            PRESET_LINE_LENGTH_MM
        };
        Ok(ScanPath {
            origin_mm: PRESET_ORIGIN_MM,
            direction: [1.0, 0.0],
            line_length_mm,
            num_lines: PRESET_LINES,
            line_spacing_mm: PRESET_LINE_SPACING_MM,
        })
    }

    /// Unit vector from one line to the next (direction turned +90°).
    pub fn across(&self) -> [f64; 2] {
        [-self.direction[1], self.direction[0]]
    }

    pub fn line_offset_mm(&self, line: usize) -> f64 {
        line as f64 * self.line_spacing_mm
    }

    pub fn samples_per_line(&self, encoder: &EncoderModel) -> usize {
        (self.line_length_mm / encoder.tick_distance_mm() + 1e-9).floor() as usize + 1
    }

    pub fn head_mm(&self, line: usize, along_mm: f64) -> [f64; 2] {
        let a = self.across();
        let off = self.line_offset_mm(line);
        [
            self.origin_mm[0] + off * a[0] + along_mm * self.direction[0],
            self.origin_mm[1] + off * a[1] + along_mm * self.direction[1],
        ]
    }

    /// Same lines traversed in the opposite direction.
    pub fn reversed(&self, encoder: &EncoderModel) -> ScanPath {
        let n = self.samples_per_line(encoder);
        let end = (n - 1) as f64 * encoder.tick_distance_mm();
        let start = [
            self.origin_mm[0] + end * self.direction[0],
            self.origin_mm[1] + end * self.direction[1],
        ];
        // the reversed direction flips `across`, so walk the lines backward
        let a = self.across();
        let last = self.line_offset_mm(self.num_lines - 1);
        ScanPath {
            origin_mm: [start[0] + last * a[0], start[1] + last * a[1]],
            direction: [-self.direction[0], -self.direction[1]],
            line_length_mm: end.max(f64::MIN_POSITIVE),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanLine {
    pub offset_mm: f64,
    pub samples: Vec<ScanSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSession {
    pub path: ScanPath,
    pub assembly: ElectrodeAssembly,
    pub encoder: EncoderModel,
    pub converter: ConverterConfig,
    pub solver: SolverConfig,
    pub mode: ScanMode,
    pub scene_digest: String,
    pub lines: Vec<ScanLine>,
}

impl ScanSession {
    /// SHA-256 of the canonical session document.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(crate::io::session_to_string(self).as_bytes()))
    }
}

pub fn scene_digest(scene: &Scene) -> String {
    hex::encode(Sha256::digest(scene.to_json().as_bytes()))
}

/// Background capacitance plus the sensitivity kernel, placed relative to the
/// footprint anchor so it can be slid along the lattice.
#[derive(Debug, Clone)]
pub struct KernelModel {
    pub background_pf: f64,
    kernel: SensitivityMap,
    /// Kernel origin minus the anchor, in cells (z is absolute).
    rel_origin: [i64; 3],
    /// `(global cell, effective permittivity contrast)` for every cell that differs from the background.
    contrast: Vec<([i64; 3], f64)>,
    /// `eps0 * h^3`, pF/mm^2 * mm^3.
    scale: f64,
}

/// Contrast given to a conductor cell in kernel mode: the high-permittivity
/// limit of the Clausius-Mossotti factor, `3 eps_b`.
pub fn conductor_contrast(background_eps: f64) -> f64 {
    3.0 * background_eps
}

impl KernelModel {
    pub fn build(grid: &PermittivityGrid, assembly: &ElectrodeAssembly, config: &SolverConfig) -> Result<KernelModel> {
        let ext = grid.extents_mm();
        let bg = background_grid(grid);
        let field = solver::solve(&bg, assembly, [ext[0] / 2.0, ext[1] / 2.0], config)?;
        let anchor = field.domain.gap_node;
        let kernel = field.sensitivity_map();
        let rel_origin = [
            kernel.origin[0] - anchor[0],
            kernel.origin[1] - anchor[1],
            kernel.origin[2],
        ];
        let h = grid.voxel_size_mm();
        let [nx, ny, nz] = grid.dims();
        let mut contrast = Vec::new();
        for iz in 0..nz {
            let b = grid.background(iz);
            for iy in 0..ny {
                for ix in 0..nx {
                    let c = grid.cell(ix as i64, iy as i64, iz as i64);
                    let d = if c.conductor {
                        conductor_contrast(b.eps_r)
                    } else {
                        c.eps_r - b.eps_r
                    };
                    if d != 0.0 || c.conductor != b.conductor {
                        contrast.push(([ix as i64, iy as i64, iz as i64], d));
                    }
                }
            }
        }
        Ok(KernelModel {
            background_pf: field.capacitance_energy_pf(),
            kernel,
            rel_origin,
            contrast,
            scale: EPS0_PF_PER_MM * h * h * h,
        })
    }

    /// Capacitance with the gap node at lattice node `anchor`.
    pub fn capacitance_pf(&self, anchor: [i64; 2]) -> f64 {
        let o = [
            anchor[0] + self.rel_origin[0],
            anchor[1] + self.rel_origin[1],
            self.rel_origin[2],
        ];
        let dims = self.kernel.dims;
        let mut s = 0.0;
        for &(g, d) in &self.contrast {
            let l = [g[0] - o[0], g[1] - o[1], g[2] - o[2]];
            if (0..3).all(|a| l[a] >= 0 && l[a] < dims[a] as i64) {
                let i = (l[2] as usize * dims[1] + l[1] as usize) * dims[0] + l[0] as usize;
                s += d * self.kernel.values[i];
            }
        }
        self.background_pf + self.scale * s
    }

    pub fn kernel(&self) -> &SensitivityMap {
        &self.kernel
    }
}

/// The grid with every embedded object replaced by its layer.
pub fn background_grid(grid: &PermittivityGrid) -> PermittivityGrid {
    let mut g = grid.clone();
    g.clear_objects();
    g
}

#[derive(Debug)]
enum Engine {
    Exact,
    Kernel(KernelModel),
}

/// A validated scan set-up: bounds are checked for every tick up front.
#[derive(Debug)]
pub struct Scanner {
    pub grid: PermittivityGrid,
    pub scene_digest: String,
    pub assembly: ElectrodeAssembly,
    pub path: ScanPath,
    pub encoder: EncoderModel,
    pub converter: ConverterConfig,
    pub solver: SolverConfig,
    pub mode: ScanMode,
    engine: Engine,
}

impl Scanner {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        scene: &Scene,
        assembly: &ElectrodeAssembly,
        path: &ScanPath,
        encoder: &EncoderModel,
        converter: &ConverterConfig,
        mode: ScanMode,
        solver_config: &SolverConfig,
    ) -> Result<Scanner> {
        path.validate()?;
        encoder.validate()?;
        converter.validate()?;
        solver_config.validate()?;
        assembly.validate()?;
        let grid = scene.rasterize()?;
        let n = path.samples_per_line(encoder);
        let td = encoder.tick_distance_mm();
        for line in 0..path.num_lines {
            for tick in 0..n {
                let head = path.head_mm(line, tick as f64 * td);
                assembly.footprint(&grid, head).map_err(|e| Error::Scan {
                    line,
                    tick,
                    source: Box::new(e),
                })?;
            }
        }
        let engine = match mode {
            ScanMode::Exact => Engine::Exact,
            ScanMode::Kernel => Engine::Kernel(KernelModel::build(&grid, assembly, solver_config)?),
        };
        Ok(Scanner {
            grid,
            scene_digest: scene_digest(scene),
            assembly: assembly.clone(),
            path: *path,
            encoder: *encoder,
            converter: *converter,
            solver: *solver_config,
            mode,
            engine,
        })
    }

    pub fn samples_per_line(&self) -> usize {
        self.path.samples_per_line(&self.encoder)
    }

    pub fn line(&self, line: usize) -> LineRun<'_> {
        LineRun {
            scanner: self,
            line,
            tick: 0,
            converter: self.converter.for_line(line),
            warm: None,
            failed: false,
        }
    }

    pub fn run(&self) -> Result<ScanSession> {
        let lines: Vec<Result<ScanLine>> = (0..self.path.num_lines)
            .into_par_iter()
            .map(|j| {
                let samples = self.line(j).collect::<Result<Vec<_>>>()?;
                Ok(ScanLine {
                    offset_mm: self.path.line_offset_mm(j),
                    samples,
                })
            })
            .collect();
        Ok(self.session(lines.into_iter().collect::<Result<Vec<_>>>()?))
    }

    pub fn stream(&self) -> ScanStream<'_> {
        ScanStream {
            scanner: self,
            current: None,
            partial: Vec::new(),
            done: Vec::new(),
            cancelled: false,
        }
    }

    fn session(&self, lines: Vec<ScanLine>) -> ScanSession {
        ScanSession {
            path: self.path,
            assembly: self.assembly.clone(),
            encoder: self.encoder,
            converter: self.converter,
            solver: self.solver,
            mode: self.mode,
            scene_digest: self.scene_digest.clone(),
            lines,
        }
    }

    /// True capacitance with the head at `head_mm`.
    pub fn true_capacitance_pf(&self, head_mm: [f64; 2], warm: &mut Option<Vec<f64>>) -> Result<f64> {
        match &self.engine {
            Engine::Exact => {
                let f = solver::solve_with_guess(&self.grid, &self.assembly, head_mm, &self.solver, warm.as_deref())?;
                let c = f.capacitance_energy_pf();
                *warm = Some(f.phi);
                Ok(c)
            }
            Engine::Kernel(k) => {
                let fp = self.assembly.footprint(&self.grid, head_mm)?;
                Ok(k.capacitance_pf(fp.anchor))
            }
        }
    }
}

/// Samples of one line in tick order.
pub struct LineRun<'a> {
    scanner: &'a Scanner,
    line: usize,
    tick: usize,
    converter: crate::sensor::Converter,
    warm: Option<Vec<f64>>,
    failed: bool,
}

impl Iterator for LineRun<'_> {
    type Item = Result<ScanSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.tick >= self.scanner.samples_per_line() {
            return None;
        }
        let tick = self.tick;
        self.tick += 1;
        let along = tick as f64 * self.scanner.encoder.tick_distance_mm();
        let head = self.scanner.path.head_mm(self.line, along);
        match self.scanner.true_capacitance_pf(head, &mut self.warm) {
            Ok(c) => Some(Ok(self.converter.measure(c, tick as u32, along))),
            Err(e) => {
                self.failed = true;
                Some(Err(Error::Scan {
                    line: self.line,
                    tick,
                    source: Box::new(e),
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamedSample {
    pub line: usize,
    pub sample: ScanSample,
}

/// Incremental, cancellable form of [`Scanner::run`].
pub struct ScanStream<'a> {
    scanner: &'a Scanner,
    current: Option<(usize, LineRun<'a>)>,
    partial: Vec<ScanSample>,
    done: Vec<ScanLine>,
    cancelled: bool,
}

impl ScanStream<'_> {
    /// Stop emitting; lines already completed are kept.
    pub fn cancel(&mut self) {
        self.cancelled = true;
    }

    pub fn completed_lines(&self) -> usize {
        self.done.len()
    }

    pub fn finish(self) -> ScanSession {
        self.scanner.session(self.done)
    }
}

impl Iterator for ScanStream<'_> {
    type Item = Result<StreamedSample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.cancelled {
                return None;
            }
            if self.current.is_none() {
                let next = self.done.len();
                if next >= self.scanner.path.num_lines {
                    return None;
                }
                self.current = Some((next, self.scanner.line(next)));
            }
            let (line, run) = self.current.as_mut().unwrap();
            let line = *line;
            match run.next() {
                Some(Ok(sample)) => {
                    self.partial.push(sample);
                    return Some(Ok(StreamedSample { line, sample }));
                }
                Some(Err(e)) => {
                    self.cancelled = true;
                    return Some(Err(e));
                }
                None => {
                    self.done.push(ScanLine {
                        offset_mm: self.scanner.path.line_offset_mm(line),
                        samples: std::mem::take(&mut self.partial),
                    });
                    self.current = None;
                }
            }
        }
    }
}

/// Convenience wrapper: validate, then simulate every line.
pub fn run_scan(
    scene: &Scene,
    assembly: &ElectrodeAssembly,
    path: &ScanPath,
    encoder: &EncoderModel,
    converter: &ConverterConfig,
    mode: ScanMode,
    solver_config: &SolverConfig,
) -> Result<ScanSession> {
    Scanner::new(scene, assembly, path, encoder, converter, mode, solver_config)?.run()
}
