//! PNG output: viridis heatmaps for images and potential slices, and plain
//! polyline charts for depth profiles. Plots carry their value mapping and
//! provenance as tEXt chunks; there is no text rendering.

use crate::error::{Error, Result};
use crate::imaging::SubsurfaceImage;
use crate::io::ARTIFACT_VERSION;
use crate::solver::{DepthProfile, PotentialField};

pub const COLORMAP: &str = "viridis";

struct Raster {
    width: u32,
    height: u32,
    rgb: Vec<u8>,
}

impl Raster {
    fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        Raster {
            width,
            height,
            rgb: fill.repeat((width * height) as usize),
        }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height {
            let i = 3 * (y as usize * self.width as usize + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: [u8; 3]) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
                self.set(x.round() as i64 + dx, y.round() as i64 + dy, c);
            }
        }
    }

    fn encode(&self, text: &[(&str, String)]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.add_text_chunk("artifact_version".to_owned(), ARTIFACT_VERSION.to_owned()).map_err(png_err)?;
            for (k, v) in text {
                enc.add_text_chunk(k.to_string(), v.clone()).map_err(png_err)?;
            }
            let mut w = enc.write_header().map_err(png_err)?;
            w.write_image_data(&self.rgb).map_err(png_err)?;
        }
        Ok(out)
    }
}

fn png_err(e: png::EncodingError) -> Error {
    Error::format(format!("png: {e}"))
}

fn viridis(t: f64) -> [u8; 3] {
    let c = colorous::VIRIDIS.eval_continuous(if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 });
    [c.r, c.g, c.b]
}

/// Row-major heatmap, `scale` pixels per cell, row 0 at the top.
pub fn heatmap_png(
    values: &[f64],
    rows: usize,
    cols: usize,
    (vmin, vmax): (f64, f64),
    scale: u32,
    text: &[(&str, String)],
) -> Result<Vec<u8>> {
    if rows == 0 || cols == 0 || values.len() != rows * cols || scale == 0 {
        return Err(Error::InvalidParameter(format!(
            "heatmap needs {rows} x {cols} values and scale >= 1, got {} values",
            values.len()
        )));
    }
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let mut r = Raster::new(cols as u32 * scale, rows as u32 * scale, [0, 0, 0]);
    for row in 0..rows {
        for col in 0..cols {
            let c = viridis((values[row * cols + col] - vmin) / span);
            for dy in 0..scale {
                for dx in 0..scale {
                    r.set((col as u32 * scale + dx) as i64, (row as u32 * scale + dy) as i64, c);
                }
            }
        }
    }
    let mut meta = vec![
        ("colormap", COLORMAP.to_owned()),
        ("vmin", format!("{vmin}")),
        ("vmax", format!("{vmax}")),
    ];
    meta.extend(text.iter().cloned());
    r.encode(&meta)
}

/// Subsurface image on its own value range; columns follow the scan direction.
pub fn image_png(img: &SubsurfaceImage) -> Result<Vec<u8>> {
    let range = img.value_range();
    heatmap_png(
        &img.values,
        img.rows,
        img.cols,
        range,
        8,
        &[
            ("units", "pF".to_owned()),
            ("x_pitch_mm", format!("{}", img.x_pitch_mm)),
            ("y_pitch_mm", format!("{}", img.y_pitch_mm)),
            ("origin_mm", format!("{},{}", img.origin_mm[0], img.origin_mm[1])),
            ("provenance", img.provenance.clone()),
        ],
    )
}

/// Vertical x-z slice of the potential through the gap node, top row nearest the electrodes.
pub fn potential_slice_png(field: &PotentialField, provenance: &str) -> Result<Vec<u8>> {
    let d = &field.domain;
    let [nx, ny, nz] = d.dims;
    let iy = ((d.gap_node[1] - d.origin[1]).clamp(0, ny as i64 - 1)) as usize;
    let mut vals = Vec::with_capacity(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            vals.push(field.phi[d.index(ix, iy, iz)]);
        }
    }
    heatmap_png(
        &vals,
        nz,
        nx,
        (0.0, d.excitation_v),
        2,
        &[
            ("units", "V".to_owned()),
            ("voxel_mm", format!("{}", d.voxel_mm)),
            ("slice", format!("y index {}", d.gap_node[1])),
            ("provenance", provenance.to_owned()),
        ],
    )
}

/// Depth profiles as polylines, depth along x and |E| up; one color per series.
pub fn profile_chart_png(series: &[(String, DepthProfile)], provenance: &str) -> Result<Vec<u8>> {
    let (w, h, m) = (640.0, 400.0, 40.0);
    let mut dmax: f64 = 0.0;
    let mut emax: f64 = 0.0;
    for (_, p) in series {
        dmax = p.depth_mm.iter().copied().fold(dmax, f64::max);
        emax = p.field_v_per_mm.iter().copied().fold(emax, f64::max);
    }
    let dmax = if dmax > 0.0 { dmax } else { 1.0 };
    let emax = if emax > 0.0 { emax } else { 1.0 };
    let mut r = Raster::new(w as u32, h as u32, [255, 255, 255]);
    let axis = [60, 60, 60];
    r.line((m, h - m), (w - m, h - m), axis);
    r.line((m, m), (m, h - m), axis);
    let to_px = |d: f64, e: f64| (m + d / dmax * (w - 2.0 * m), h - m - e / emax * (h - 2.0 * m));
    let mut legend = Vec::new();
    for (k, (name, p)) in series.iter().enumerate() {
        let c = colorous::CATEGORY10[k % colorous::CATEGORY10.len()];
        let rgb = [c.r, c.g, c.b];
        for i in 1..p.depth_mm.len() {
            r.line(
                to_px(p.depth_mm[i - 1], p.field_v_per_mm[i - 1]),
                to_px(p.depth_mm[i], p.field_v_per_mm[i]),
                rgb,
            );
        }
        legend.push(format!("{name}=#{:02x}{:02x}{:02x}", c.r, c.g, c.b));
    }
    r.encode(&[
        ("x_axis", format!("depth_mm 0..{dmax}")),
        ("y_axis", format!("field_v_per_mm 0..{emax}")),
        ("series", legend.join(";")),
        ("provenance", provenance.to_owned()),
    ])
}

/// tEXt chunks of a PNG produced here.
pub fn png_text(bytes: &[u8]) -> Result<Vec<(String, String)>> {
    let reader = png::Decoder::new(bytes).read_info().map_err(|e| Error::format(format!("png: {e}")))?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect())
}
