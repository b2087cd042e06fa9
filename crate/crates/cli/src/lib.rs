//! The `capascan` command line. Every subcommand prints one JSON summary line
//! on stdout; failures print one JSON error line on stderr.

pub mod repro;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use capascan_core::electrodes::ElectrodeAssembly;
use capascan_core::imaging::{self, DEFAULT_K_MAD, DEFAULT_METAL_RATIO};
use capascan_core::io::{self, DetectionReport, ARTIFACT_VERSION};
use capascan_core::plot;
use capascan_core::scan::{run_scan, scene_digest, ScanMode, ScanPath};
use capascan_core::scene::Scene;
use capascan_core::sensor::{ConverterConfig, EncoderModel};
use capascan_core::solver::sweep::{self, SweepParam};
use capascan_core::solver::{self, Boundary, SolverConfig};
use capascan_core::{Error, ErrorKind};
use capascan_server::LoadedScene;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use repro::{Figure, ReproConfig};

pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: "usage",
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn to_json_line(&self) -> String {
        json!({"error": {"kind": self.kind, "code": self.code, "message": self.message}}).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (kind, code) = match e.kind() {
            ErrorKind::Numerical => ("numerical", EXIT_NUMERICAL),
            ErrorKind::Validation => ("validation", EXIT_VALIDATION),
            ErrorKind::Format => ("format", EXIT_VALIDATION),
            ErrorKind::Io => ("io", EXIT_VALIDATION),
        };
        CliError {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "capascan", version, about = "Capacitive subsurface imaging sensor twin")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One field solve: capacitance by both routes and a potential slice.
    Solve {
        /// Scene JSON file or preset name.
        #[arg(long)]
        scene: String,
        /// Assembly JSON file or standard assembly name; defaults to the
        /// scene's own assembly, then `comb_default`.
        #[arg(long)]
        assembly: Option<String>,
        /// Head position `x,y` in mm; defaults to the scene center.
        #[arg(long, value_delimiter = ',')]
        head: Option<Vec<f64>>,
        #[arg(long, default_value = "grounded_box")]
        boundary: String,
        /// Write `<prefix>.json` and `<prefix>_slice.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter study over a homogeneous plywood sample.
    Sweep {
        /// separation, liftoff or shape.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; defaults depend on the parameter.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
        /// Assembly the values are applied to.
        #[arg(long)]
        base: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        voxel: f64,
        /// Write `<prefix>.csv` and `<prefix>_profile.png`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scan a scene along a path and write the session file.
    Scan {
        #[arg(long)]
        scene: String,
        /// Preset path name (fig7 .. fig10) or a path JSON file.
        #[arg(long)]
        preset_path: String,
        /// Defaults to the scene's own assembly, then `comb_default`.
        #[arg(long)]
        assembly: Option<String>,
        #[arg(long, default_value = "exact")]
        mode: ScanMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Measurement noise standard deviation in pF.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a session into an image: `<out>.csv` and `<out>.png`.
    Image {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        ypitch: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect and classify objects in an image CSV.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K_MAD)]
        k_mad: f64,
        #[arg(long, default_value_t = DEFAULT_METAL_RATIO)]
        metal_ratio: f64,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode a session as the device's binary frame stream.
    EmulateDevice {
        #[arg(long)]
        session: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a binary frame stream and report diagnostics.
    ParseFrames {
        #[arg(long = "in")]
        input: PathBuf,
        /// Write the decoded frames as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the live session server.
    Serve {
        /// Scene preloaded for every connection (file or preset name).
        #[arg(long)]
        scene: Option<String>,
        /// Defaults to the scene's own assembly, then `comb_default`.
        #[arg(long)]
        assembly: Option<String>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 7878)]
        port: u16,
    },
    /// Full preset pipeline for one figure, checked against its expectations.
    Repro {
        /// fig7, fig8, fig9 or fig10.
        figure: Figure,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "exact")]
        mode: ScanMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

/// Honor `CAPASCAN_THREADS` for the global rayon pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("CAPASCAN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(format!("CAPASCAN_THREADS must be a positive integer, got `{v}`")))?;
    // a pool already set up by the host process is left alone
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Run one subcommand; the value is the stdout summary, and the exit code is
/// nonzero only when a repro check failed.
pub fn run(cli: Cli) -> CliResult<(Value, i32)> {
    match cli.command {
        Command::Solve {
            scene,
            assembly,
            head,
            boundary,
            out,
        } => solve_cmd(&scene, assembly.as_deref(), head, &boundary, out.as_deref()).map(ok),
        Command::Sweep {
            param,
            values,
            base,
            voxel,
            out,
        } => sweep_cmd(param, values, base, voxel, out).map(ok),
        Command::Scan {
            scene,
            preset_path,
            assembly,
            mode,
            seed,
            noise,
            out,
        } => scan_cmd(&scene, &preset_path, assembly.as_deref(), mode, seed, noise, &out).map(ok),
        Command::Image { session, ypitch, out } => image_cmd(&session, ypitch, &out).map(ok),
        Command::Detect {
            image,
            k_mad,
            metal_ratio,
            out,
        } => detect_cmd(&image, k_mad, metal_ratio, out.as_deref()).map(ok),
        Command::EmulateDevice { session, out } => {
            let s = io::load_session(&session)?;
            let bytes = io::session_frames(&s)?;
            std::fs::write(&out, &bytes)?;
            Ok(ok(json!({"frames": bytes.len() / io::FRAME_LEN, "bytes": bytes.len(), "out": out})))
        }
        Command::ParseFrames { input, out } => parse_frames_cmd(&input, out.as_deref()).map(ok),
        Command::Serve {
            scene,
            assembly,
            host,
            port,
        } => serve_cmd(scene.as_deref(), assembly.as_deref(), &host, port).map(ok),
        Command::Repro {
            figure,
            out,
            mode,
            seed,
            noise,
        } => {
            let cfg = ReproConfig {
                mode,
                seed,
                noise_sigma_pf: noise,
                ..Default::default()
            };
            let outcome = repro::run(figure, &cfg)?;
            let files = outcome.write(&out)?;
            let code = if outcome.passed() { 0 } else { EXIT_CHECK_FAILED };
            Ok((
                json!({
                    "figure": figure,
                    "passed": outcome.passed(),
                    "checks": outcome.checks,
                    "detections": outcome.report.detections,
                    "files": files,
                }),
                code,
            ))
        }
    }
}

fn ok(v: Value) -> (Value, i32) {
    (v, 0)
}

/// A scene file if one exists at `arg`, otherwise a preset of that name.
pub fn load_scene(arg: &str) -> CliResult<Scene> {
    let p = Path::new(arg);
    if p.is_file() {
        return Ok(Scene::from_json(&std::fs::read_to_string(p)?)?);
    }
    Scene::preset(arg).map_err(|_| {
        Error::InvalidParameter(format!("`{arg}` is neither a scene file nor a preset name")).into()
    })
}

pub fn load_assembly(arg: &str) -> CliResult<ElectrodeAssembly> {
    let p = Path::new(arg);
    let a = if p.is_file() {
        serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Format(format!("assembly {arg}: {e}")))?
    } else {
        ElectrodeAssembly::lookup(arg)?
    };
    a.validate()?;
    Ok(a)
}

/// An explicit `--assembly`, else the scene's inline one, else `comb_default`.
pub fn scene_assembly(arg: Option<&str>, scene: &Scene) -> CliResult<ElectrodeAssembly> {
    match (arg, &scene.assembly) {
        (Some(a), _) => load_assembly(a),
        (None, Some(a)) => Ok(a.clone()),
        (None, None) => load_assembly("comb_default"),
    }
}

fn load_path(arg: &str) -> CliResult<ScanPath> {
    let p = Path::new(arg);
    let path: ScanPath = if p.is_file() {
        serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Format(format!("scan path {arg}: {e}")))?
    } else {
        ScanPath::preset(arg)?
    };
    path.validate()?;
    Ok(path)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn solve_cmd(scene: &str, assembly: Option<&str>, head: Option<Vec<f64>>, boundary: &str, out: Option<&Path>) -> CliResult<Value> {
    let scene = load_scene(scene)?;
    let asm = scene_assembly(assembly, &scene)?;
    let boundary: Boundary = serde_json::from_value(json!(boundary))
        .map_err(|_| CliError::usage(format!("unknown boundary `{boundary}` (expected grounded_box or insulated_box)")))?;
    let cfg = SolverConfig {
        boundary,
        ..Default::default()
    };
    let grid = scene.rasterize()?;
    let head = match head {
        Some(h) if h.len() == 2 => [h[0], h[1]],
        Some(h) => return Err(CliError::usage(format!("--head takes x,y; got {} values", h.len()))),
        None => {
            let e = grid.extents_mm();
            [e[0] / 2.0, e[1] / 2.0]
        }
    };
    let field = solver::solve(&grid, &asm, head, &cfg)?;
    let (ce, cq) = (field.capacitance_energy_pf(), field.capacitance_charge_pf());
    let summary = json!({
        "artifact_version": ARTIFACT_VERSION,
        "scene_digest": scene_digest(&scene),
        "assembly": asm,
        "solver": cfg,
        "head_mm": head,
        "capacitance_energy_pF": ce,
        "capacitance_charge_pF": cq,
        "route_difference": (ce - cq).abs() / ce,
        "iterations": field.iterations_used,
        "achieved_residual": field.achieved_residual,
        "cells": field.domain.len(),
    });
    if let Some(prefix) = out {
        std::fs::write(with_suffix(prefix, ".json"), serde_json::to_string_pretty(&summary).unwrap())?;
        let png = plot::potential_slice_png(&field, &scene_digest(&scene))?;
        std::fs::write(with_suffix(prefix, "_slice.png"), png)?;
    }
    Ok(summary)
}

pub fn default_sweep_values(param: SweepParam) -> Vec<String> {
    let v: &[&str] = match param {
        SweepParam::Separation => &["2", "4", "8", "16"],
        SweepParam::LiftOff => &["1", "2", "4", "8"],
        SweepParam::Shape => &["comb_default", "circular_default", "triangular_default"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

pub fn default_sweep_base(param: SweepParam) -> &'static str {
    match param {
        SweepParam::Shape => "comb_default",
        SweepParam::Separation | SweepParam::LiftOff => "plate_default",
    }
}

fn sweep_cmd(
    param: SweepParam,
    values: Option<Vec<String>>,
    base: Option<String>,
    voxel: f64,
    out: Option<PathBuf>,
) -> CliResult<Value> {
    let values = values.unwrap_or_else(|| default_sweep_values(param));
    if values.is_empty() {
        return Err(CliError::usage("--values needs at least one value"));
    }
    let base_name = base.unwrap_or_else(|| default_sweep_base(param).to_owned());
    let base = load_assembly(&base_name)?;
    let scene = sweep::sweep_scene(voxel);
    let cfg = SolverConfig::default();
    let points = sweep::sweep(&scene.rasterize()?, &base, param, &values, &cfg)?;
    let params = json!({
        "artifact_version": ARTIFACT_VERSION,
        "param": param,
        "values": values,
        "base": base,
        "scene_digest": scene_digest(&scene),
        "voxel_mm": voxel,
        "solver": cfg,
    });
    let prefix = out.unwrap_or_else(|| PathBuf::from(format!("sweep_{}", serde_json::to_value(param).unwrap().as_str().unwrap())));
    let mut csv = String::new();
    writeln!(csv, "# {params}").unwrap();
    csv.push_str(&sweep::sweep_csv(&points));
    let csv_path = with_suffix(&prefix, ".csv");
    std::fs::write(&csv_path, csv)?;
    let series: Vec<_> = points.iter().map(|p| (p.value.clone(), p.profile.clone())).collect();
    let png_path = with_suffix(&prefix, "_profile.png");
    std::fs::write(&png_path, plot::profile_chart_png(&series, &params.to_string())?)?;
    let rows: Vec<Value> = points
        .iter()
        .map(|p| {
            json!({
                "value": p.value,
                "capacitance_pF": p.capacitance_pf,
                "field_V_per_mm_at_10mm": p.profile.at_depth(10.0),
            })
        })
        .collect();
    Ok(json!({"points": rows, "csv": csv_path, "png": png_path}))
}

#[allow(clippy::too_many_arguments)]
fn scan_cmd(scene: &str, path: &str, assembly: Option<&str>, mode: ScanMode, seed: u64, noise: f64, out: &Path) -> CliResult<Value> {
    let scene = load_scene(scene)?;
    let path = load_path(path)?;
    let asm = scene_assembly(assembly, &scene)?;
    let conv = ConverterConfig {
        noise_sigma_pf: noise,
        rng_seed: seed,
        ..Default::default()
    };
    let session = run_scan(&scene, &asm, &path, &EncoderModel::default(), &conv, mode, &SolverConfig::default())?;
    io::save_session(&session, out)?;
    Ok(json!({
        "out": out,
        "lines": session.lines.len(),
        "samples_per_line": session.lines.first().map_or(0, |l| l.samples.len()),
        "session_digest": session.digest(),
    }))
}

fn image_cmd(session: &Path, ypitch: f64, out: &Path) -> CliResult<Value> {
    let s = io::load_session(session)?;
    let img = imaging::assemble(&s, ypitch)?;
    let csv = with_suffix(out, ".csv");
    let png = with_suffix(out, ".png");
    std::fs::write(&csv, io::image_to_csv(&img))?;
    std::fs::write(&png, plot::image_png(&img)?)?;
    let (lo, hi) = img.value_range();
    Ok(json!({"rows": img.rows, "cols": img.cols, "value_range": [lo, hi], "csv": csv, "png": png}))
}

fn detect_cmd(image: &Path, k_mad: f64, metal_ratio: f64, out: Option<&Path>) -> CliResult<Value> {
    if !(k_mad > 0.0 && metal_ratio > 0.0) {
        return Err(Error::InvalidParameter("--k-mad and --metal-ratio must be positive".into()).into());
    }
    let img = io::image_from_csv(&std::fs::read_to_string(image)?)?;
    let report = DetectionReport::new(&img, k_mad, metal_ratio);
    if let Some(p) = out {
        std::fs::write(p, report.to_json())?;
    }
    Ok(serde_json::to_value(&report).unwrap())
}

fn parse_frames_cmd(input: &Path, out: Option<&Path>) -> CliResult<Value> {
    let bytes = std::fs::read(input)?;
    let (frames, diag) = io::parse_stream(&bytes);
    if let Some(p) = out {
        let mut csv = String::new();
        writeln!(csv, "# {}", json!({"artifact_version": ARTIFACT_VERSION, "source": input, "diagnostics": diag})).unwrap();
        csv.push_str("line_id,tick,calibrated_pF,capdac_index,flags\n");
        for f in &frames {
            writeln!(csv, "{},{},{:.6},{},{}", f.line_id, f.tick, f.calibrated_pf(), f.capdac_index, f.flags).unwrap();
        }
        std::fs::write(p, csv)?;
    }
    Ok(serde_json::to_value(&diag).unwrap())
}

fn serve_cmd(scene: Option<&str>, assembly: Option<&str>, host: &str, port: u16) -> CliResult<Value> {
    let loaded = match scene {
        Some(s) => {
            let scene = load_scene(s)?;
            let asm = scene_assembly(assembly, &scene)?;
            Some(Arc::new(LoadedScene::build(scene, asm, SolverConfig::default())?))
        }
        None => None,
    };
    capascan_server::serve_blocking(&format!("{host}:{port}"), loaded, |addr| {
        println!("{}", json!({"listening": addr.to_string()}));
    })?;
    Ok(json!({"stopped": true}))
}
