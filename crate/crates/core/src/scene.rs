//! Material world under the sensor head.
//!
//! The frame is x along scan travel, y across scan lines and z depth, positive
//! downward from the sample's top surface. Electrodes sit above the surface at
//! negative z. A [`Scene`] holds laterally infinite layers stacked from the
//! surface downward plus embedded objects; [`Scene::rasterize`] turns it into
//! a [`PermittivityGrid`] by voxel-center containment.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::electrodes::ElectrodeAssembly;
use crate::error::{Error, Result};

const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MaterialDoc")]
pub struct Material {
    pub name: String,
    pub relative_permittivity: f64,
    pub is_conductor: bool,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MaterialDoc {
    Named(String),
    #[serde(rename_all = "snake_case")]
    Full {
        name: String,
        relative_permittivity: f64,
        #[serde(default)]
        is_conductor: bool,
    },
}

impl TryFrom<MaterialDoc> for Material {
    type Error = String;

    fn try_from(doc: MaterialDoc) -> std::result::Result<Self, String> {
        match doc {
            MaterialDoc::Named(name) => {
                Material::by_name(&name).ok_or_else(|| format!("unknown material `{name}`"))
            }
            MaterialDoc::Full {
                name,
                relative_permittivity,
                is_conductor,
            } => Ok(Material {
                name,
                relative_permittivity,
                is_conductor,
            }),
        }
    }
}

impl Material {
    pub fn new(name: &str, relative_permittivity: f64) -> Self {
        Material {
            name: name.to_owned(),
            relative_permittivity,
            is_conductor: false,
        }
    }

    pub fn conductor(name: &str) -> Self {
        Material {
            name: name.to_owned(),
            relative_permittivity: 1.0,
            is_conductor: true,
        }
    }

    pub fn air() -> Self {
        Material::new("air", 1.0)
    }

    pub fn plywood() -> Self {
        Material::new("plywood", 2.5)
    }

    pub fn concrete() -> Self {
        Material::new("concrete", 4.5)
    }

    pub fn drywall() -> Self {
        Material::new("drywall", 2.0)
    }

    pub fn wood() -> Self {
        Material::new("wood", 2.0)
    }

    pub fn metal() -> Self {
        Material::conductor("metal")
    }

    /// Built-in material table.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "air" | "vacuum" => Material::air(),
            "plywood" => Material::plywood(),
            "concrete" => Material::concrete(),
            "drywall" => Material::drywall(),
            "wood" | "wood_stud" => Material::wood(),
            "metal" | "steel" | "aluminum" => Material::metal(),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub material: Material,
    pub thickness_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectShape {
    /// `length_mm` runs along the yaw axis, `width_mm` across it in the
    /// surface plane, `height_mm` in depth.
    Box {
        width_mm: f64,
        length_mm: f64,
        height_mm: f64,
    },
    /// Horizontal cylinder whose axis follows the yaw direction.
    Cylinder { radius_mm: f64, length_mm: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddedObject {
    pub shape: ObjectShape,
    /// Centroid.
    pub position_mm: [f64; 3],
    /// Axis direction in the surface plane, degrees from +x, in [0, 180).
    #[serde(default)]
    pub yaw_deg: f64,
    pub material: Material,
}

impl EmbeddedObject {
    pub fn new(shape: ObjectShape, position_mm: [f64; 3], yaw_deg: f64, material: Material) -> Self {
        EmbeddedObject {
            shape,
            position_mm,
            yaw_deg: normalize_yaw(yaw_deg),
            material,
        }
    }

    /// Point containment in scene coordinates (closed set).
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        let dx = p[0] - self.position_mm[0];
        let dy = p[1] - self.position_mm[1];
        let dz = p[2] - self.position_mm[2];
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        match self.shape {
            ObjectShape::Box {
                width_mm,
                length_mm,
                height_mm,
            } => {
                along.abs() <= length_mm / 2.0 + GEOM_EPS
                    && across.abs() <= width_mm / 2.0 + GEOM_EPS
                    && dz.abs() <= height_mm / 2.0 + GEOM_EPS
            }
            ObjectShape::Cylinder {
                radius_mm,
                length_mm,
            } => {
                along.abs() <= length_mm / 2.0 + GEOM_EPS
                    && across * across + dz * dz <= radius_mm * radius_mm + GEOM_EPS
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let (s, c) = self.yaw_deg.to_radians().sin_cos();
        let (half_len, half_w, half_h) = match self.shape {
            ObjectShape::Box {
                width_mm,
                length_mm,
                height_mm,
            } => (length_mm / 2.0, width_mm / 2.0, height_mm / 2.0),
            ObjectShape::Cylinder {
                radius_mm,
                length_mm,
            } => (length_mm / 2.0, radius_mm, radius_mm),
        };
        let ex = half_len * c.abs() + half_w * s.abs();
        let ey = half_len * s.abs() + half_w * c.abs();
        let p = self.position_mm;
        (
            [p[0] - ex, p[1] - ey, p[2] - half_h],
            [p[0] + ex, p[1] + ey, p[2] + half_h],
        )
    }

    fn dimensions(&self) -> Vec<(&'static str, f64)> {
        match self.shape {
            ObjectShape::Box {
                width_mm,
                length_mm,
                height_mm,
            } => vec![
                ("width_mm", width_mm),
                ("length_mm", length_mm),
                ("height_mm", height_mm),
            ],
            ObjectShape::Cylinder {
                radius_mm,
                length_mm,
            } => vec![("radius_mm", radius_mm), ("length_mm", length_mm)],
        }
    }
}

pub fn normalize_yaw(yaw_deg: f64) -> f64 {
    let y = yaw_deg.rem_euclid(180.0);
    if y >= 180.0 {
        0.0
    } else {
        y
    }
}

/// One broken scene rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub extents_mm: [f64; 3],
    pub voxel_size_mm: f64,
    /// Top surface downward.
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub objects: Vec<EmbeddedObject>,
    #[serde(default = "Material::air")]
    pub ambient: Material,
    /// Electrode assembly to scan this scene with, when the scene brings its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assembly: Option<ElectrodeAssembly>,
}

pub const PRESET_NAMES: [&str; 4] = [
    "fig7_plywood_cross_bars",
    "fig8_concrete_rebar",
    "fig9_wall_stud",
    "fig10_metal_and_wood",
];

/// Cross-section of every preset bar.
pub const BAR_WIDTH_MM: f64 = 30.0;
pub const BAR_THICKNESS_MM: f64 = 20.0;
/// Stud cross-section (face width, depth).
pub const STUD_SECTION_MM: (f64, f64) = (45.0, 90.0);

impl Scene {
    /// Homogeneous scene of the given extents filled with ambient air.
    pub fn empty(extents_mm: [f64; 3], voxel_size_mm: f64) -> Self {
        Scene {
            extents_mm,
            voxel_size_mm,
            layers: Vec::new(),
            objects: Vec::new(),
            ambient: Material::air(),
            assembly: None,
        }
    }

    /// Single homogeneous slab on top; ambient below it.
    pub fn slab(extents_mm: [f64; 3], voxel_size_mm: f64, material: Material, thickness_mm: f64) -> Self {
        Scene {
            layers: vec![Layer {
                material,
                thickness_mm,
            }],
            ..Scene::empty(extents_mm, voxel_size_mm)
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let h = self.voxel_size_mm;
        if !(h.is_finite() && h > 0.0) {
            out.push(Violation::new("voxel_size_mm", "must be finite and > 0"));
        }
        for (axis, &e) in ["x", "y", "z"].iter().zip(&self.extents_mm) {
            let field = format!("extents_mm.{axis}");
            if !(e.is_finite() && e > 0.0) {
                out.push(Violation::new(field, "must be finite and > 0"));
            } else if h.is_finite() && h > 0.0 {
                let n = e / h;
                if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
                    out.push(Violation::new(
                        field,
                        format!("{e} mm is not a whole number of {h} mm voxels"),
                    ));
                }
            }
        }
        let mut total = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            if !(layer.thickness_mm.is_finite() && layer.thickness_mm > 0.0) {
                out.push(Violation::new(format!("layers[{i}].thickness_mm"), "must be > 0"));
            }
            check_material(&layer.material, &format!("layers[{i}].material"), &mut out);
            total += layer.thickness_mm;
        }
        if total > self.extents_mm[2] + GEOM_EPS {
            out.push(Violation::new(
                "layers",
                format!("total thickness {total} mm exceeds z extent {} mm", self.extents_mm[2]),
            ));
        }
        if let Some(Err(e)) = self.assembly.as_ref().map(|a| a.validate()) {
            out.push(Violation::new("assembly", e.to_string()));
        }
        check_material(&self.ambient, "ambient", &mut out);
        if self.ambient.is_conductor {
            out.push(Violation::new("ambient", "ambient material cannot be a conductor"));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            for (name, v) in obj.dimensions() {
                if !(v.is_finite() && v > 0.0) {
                    out.push(Violation::new(format!("objects[{i}].shape.{name}"), "must be > 0"));
                }
            }
            if !(obj.yaw_deg.is_finite() && (0.0..180.0).contains(&obj.yaw_deg)) {
                out.push(Violation::new(format!("objects[{i}].yaw_deg"), "must lie in [0, 180)"));
            }
            check_material(&obj.material, &format!("objects[{i}].material"), &mut out);
            let p = obj.position_mm;
            let centroid_inside = (0..3).all(|a| p[a] >= 0.0 && p[a] <= self.extents_mm[a]);
            if !centroid_inside {
                out.push(Violation::new(
                    format!("objects[{i}].position_mm"),
                    format!("centroid {p:?} outside scene extents"),
                ));
            } else {
                let (lo, hi) = obj.bounds();
                let inside = (0..3).all(|a| {
                    lo[a] >= -1e-6 && hi[a] <= self.extents_mm[a] + 1e-6
                });
                if !inside {
                    out.push(Violation::new(
                        format!("objects[{i}]"),
                        "object not fully inside scene extents",
                    ));
                }
            }
        }
        out
    }

    pub fn dims(&self) -> [usize; 3] {
        let h = self.voxel_size_mm;
        [
            (self.extents_mm[0] / h).round() as usize,
            (self.extents_mm[1] / h).round() as usize,
            (self.extents_mm[2] / h).round() as usize,
        ]
    }

    /// Layer material at a depth, ignoring objects.
    pub fn layer_at(&self, depth_mm: f64) -> &Material {
        if depth_mm >= 0.0 {
            let mut top = 0.0;
            for layer in &self.layers {
                let bottom = top + layer.thickness_mm;
                if depth_mm < bottom {
                    return &layer.material;
                }
                top = bottom;
            }
        }
        &self.ambient
    }

    pub fn material_at(&self, p: [f64; 3]) -> &Material {
        // last object wins where objects overlap
        self.objects
            .iter()
            .rev()
            .find(|o| o.contains(p))
            .map(|o| &o.material)
            .unwrap_or_else(|| self.layer_at(p[2]))
    }

    pub fn rasterize(&self) -> Result<PermittivityGrid> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidScene(violations));
        }
        let [nx, ny, nz] = self.dims();
        let h = self.voxel_size_mm;
        let mut eps_r = Vec::with_capacity(nx * ny * nz);
        let mut conductor = Vec::with_capacity(nx * ny * nz);
        let mut background = Vec::with_capacity(nz);
        for iz in 0..nz {
            let m = self.layer_at((iz as f64 + 0.5) * h);
            background.push(CellMaterial::from(m));
            for _ in 0..nx * ny {
                eps_r.push(m.relative_permittivity);
                conductor.push(m.is_conductor);
            }
        }
        for obj in &self.objects {
            let (lo, hi) = obj.bounds();
            let range = |a: usize, n: usize| {
                let i0 = ((lo[a] / h - 0.5).floor().max(0.0)) as usize;
                let i1 = (((hi[a] / h - 0.5).ceil() + 1.0).max(0.0) as usize).min(n);
                i0..i1
            };
            for iz in range(2, nz) {
                for iy in range(1, ny) {
                    for ix in range(0, nx) {
                        let c = [(ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h, (iz as f64 + 0.5) * h];
                        if obj.contains(c) {
                            let i = (iz * ny + iy) * nx + ix;
                            eps_r[i] = obj.material.relative_permittivity;
                            conductor[i] = obj.material.is_conductor;
                        }
                    }
                }
            }
        }
        Ok(PermittivityGrid {
            dims: [nx, ny, nz],
            voxel_size_mm: h,
            eps_r,
            conductor,
            background,
            ambient: CellMaterial::from(&self.ambient),
        })
    }

    /// Reflection `y -> Y - y`.
    pub fn mirrored_y(&self) -> Scene {
        let y_ext = self.extents_mm[1];
        let mut out = self.clone();
        for obj in &mut out.objects {
            obj.position_mm[1] = y_ext - obj.position_mm[1];
            obj.yaw_deg = normalize_yaw(180.0 - obj.yaw_deg);
        }
        out
    }

    /// Scene of a named experiment preset.
    pub fn preset(name: &str) -> Result<Scene> {
        let h = 2.0;
        let bar = |len: f64| ObjectShape::Box {
            width_mm: BAR_WIDTH_MM,
            length_mm: len,
            height_mm: BAR_THICKNESS_MM,
        };
        let plywood = |extents| Scene::slab(extents, h, Material::plywood(), 25.0);
        let scene = match name {
            "fig7_plywood_cross_bars" => {
                let mut s = plywood([340.0, 260.0, 60.0]);
                // Bar along x under the first scan line, bar along y under lines 2..4;
                // the two never touch so each forms its own image region.
                s.objects.push(EmbeddedObject::new(bar(120.0), [100.0, 30.0, 35.0], 0.0, Material::metal()));
                s.objects.push(EmbeddedObject::new(bar(155.0), [260.0, 182.5, 35.0], 90.0, Material::metal()));
                s
            }
            "fig8_concrete_rebar" => {
                let mut s = Scene::slab([340.0, 260.0, 70.0], h, Material::concrete(), 35.0);
                s.objects.push(EmbeddedObject::new(
                    bar(260.0),
                    [FIG8_BAR_X_MM, 130.0, 45.0],
                    90.0,
                    Material::metal(),
                ));
                s
            }
            "fig9_wall_stud" => {
                let mut s = Scene::slab([340.0, 260.0, 110.0], h, Material::drywall(), 13.0);
                let (w, d) = STUD_SECTION_MM;
                s.objects.push(EmbeddedObject::new(
                    ObjectShape::Box {
                        width_mm: w,
                        length_mm: 260.0,
                        height_mm: d,
                    },
                    [FIG9_STUD_X_MM, 130.0, 13.0 + d / 2.0],
                    90.0,
                    Material::wood(),
                ));
                s
            }
            "fig10_metal_and_wood" => {
                let mut s = plywood([500.0, 260.0, 70.0]);
                s.objects.push(EmbeddedObject::new(bar(260.0), [FIG10_METAL_X_MM, 130.0, 35.0], 90.0, Material::metal()));
                s.objects.push(EmbeddedObject::new(
                    bar(260.0),
                    [FIG10_WOOD_X_MM, 130.0, 25.0 + FIG10_WOOD_STANDOFF_MM + BAR_THICKNESS_MM / 2.0],
                    90.0,
                    Material::wood(),
                ));
                s
            }
            other => return Err(Error::UnknownPreset(other.to_owned())),
        };
        Ok(scene)
    }

    /// Parse a scene document, normalizing yaw angles.
    pub fn from_json(text: &str) -> Result<Scene> {
        let mut scene: Scene =
            serde_json::from_str(text).map_err(|e| Error::format(format!("scene document: {e}")))?;
        for obj in &mut scene.objects {
            obj.yaw_deg = normalize_yaw(obj.yaw_deg);
        }
        Ok(scene)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

/// Rebar centerline; sits under the middle tick of the preset path.
pub const FIG8_BAR_X_MM: f64 = 20.0 + 13.0 * std::f64::consts::PI * 58.5 / 16.0;
pub const FIG9_STUD_X_MM: f64 = 150.0;
pub const FIG10_METAL_X_MM: f64 = 190.0;
pub const FIG10_WOOD_X_MM: f64 = 310.0;
/// Air gap between the plywood and the wooden bar.
pub const FIG10_WOOD_STANDOFF_MM: f64 = 6.0;

fn check_material(m: &Material, field: &str, out: &mut Vec<Violation>) {
    if !m.is_conductor && !(m.relative_permittivity.is_finite() && m.relative_permittivity >= 1.0) {
        out.push(Violation::new(
            format!("{field}.relative_permittivity"),
            "must be >= 1 for non-conductors",
        ));
    }
}

/// Permittivity and conductor flag of one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMaterial {
    pub eps_r: f64,
    pub conductor: bool,
}

impl From<&Material> for CellMaterial {
    fn from(m: &Material) -> Self {
        CellMaterial {
            eps_r: m.relative_permittivity,
            conductor: m.is_conductor,
        }
    }
}

/// Rasterized scene. Index order is x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct PermittivityGrid {
    dims: [usize; 3],
    voxel_size_mm: f64,
    eps_r: Vec<f64>,
    conductor: Vec<bool>,
    background: Vec<CellMaterial>,
    ambient: CellMaterial,
}

impl PermittivityGrid {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> f64 {
        self.voxel_size_mm
    }

    pub fn extents_mm(&self) -> [f64; 3] {
        self.dims.map(|n| n as f64 * self.voxel_size_mm)
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    pub fn eps_r(&self) -> &[f64] {
        &self.eps_r
    }

    pub fn conductor_mask(&self) -> &[bool] {
        &self.conductor
    }

    pub fn ambient(&self) -> CellMaterial {
        self.ambient
    }

    /// Object-free layer material for a depth plane inside the grid.
    pub fn background(&self, iz: usize) -> CellMaterial {
        self.background[iz]
    }

    /// Material of any lattice cell, including cells outside the grid: above
    /// and below the grid is ambient, beside it the layer stack continues.
    pub fn cell(&self, ix: i64, iy: i64, iz: i64) -> CellMaterial {
        let [nx, ny, nz] = self.dims.map(|n| n as i64);
        if iz < 0 || iz >= nz {
            return self.ambient;
        }
        if ix < 0 || iy < 0 || ix >= nx || iy >= ny {
            return self.background[iz as usize];
        }
        let i = self.index(ix as usize, iy as usize, iz as usize);
        CellMaterial {
            eps_r: self.eps_r[i],
            conductor: self.conductor[i],
        }
    }

    /// Same lookup with all embedded objects removed.
    pub fn background_cell(&self, iz: i64) -> CellMaterial {
        if iz < 0 || iz >= self.dims[2] as i64 {
            self.ambient
        } else {
            self.background[iz as usize]
        }
    }

    /// Reset every cell to its layer material.
    pub fn clear_objects(&mut self) {
        let plane = self.dims[0] * self.dims[1];
        for (iz, b) in self.background.iter().enumerate() {
            self.eps_r[iz * plane..(iz + 1) * plane].fill(b.eps_r);
            self.conductor[iz * plane..(iz + 1) * plane].fill(b.conductor);
        }
    }

    pub fn conductor_count(&self) -> usize {
        self.conductor.iter().filter(|&&c| c).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inline_assembly_round_trips_and_is_validated() {
        let mut s = Scene::slab([100.0, 100.0, 30.0], 2.0, Material::plywood(), 12.0);
        assert!(!s.to_json().contains("assembly"));
        s.assembly = Some(ElectrodeAssembly::lookup("circular_default").unwrap());
        let back = Scene::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        s.assembly.as_mut().unwrap().separation_mm = -1.0;
        let v = s.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "assembly");
    }

    #[test]
    fn object_outside_extents_is_one_violation() {
        let mut s = Scene::empty([40.0, 40.0, 20.0], 1.0);
        s.objects.push(EmbeddedObject::new(
            ObjectShape::Box {
                width_mm: 2.0,
                length_mm: 2.0,
                height_mm: 2.0,
            },
            [50.0, 10.0, 10.0],
            0.0,
            Material::metal(),
        ));
        let v = s.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].field.contains("objects[0]"));
    }

    #[test]
    fn zero_voxel_size_is_flagged() {
        let s = Scene::empty([40.0, 40.0, 20.0], 0.0);
        let v = s.validate();
        assert!(v.iter().any(|v| v.field == "voxel_size_mm"), "{v:?}");
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            let s = Scene::preset(name).unwrap();
            assert!(s.validate().is_empty(), "{name}: {:?}", s.validate());
        }
        assert!(matches!(Scene::preset("fig11"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn preset_contents() {
        let s = Scene::preset("fig8_concrete_rebar").unwrap();
        assert_eq!(s.layers[0].material.name, "concrete");
        assert_eq!(s.layers[0].thickness_mm, 35.0);

        let s = Scene::preset("fig10_metal_and_wood").unwrap();
        assert_eq!(s.layers[0].thickness_mm, 25.0);
        assert_eq!(s.objects.len(), 2);
        assert!(s.objects[0].material.is_conductor);
        assert_eq!(s.objects[1].material.name, "wood");

        let s = Scene::preset("fig7_plywood_cross_bars").unwrap();
        let yaws: Vec<f64> = s.objects.iter().map(|o| o.yaw_deg).collect();
        assert_eq!(yaws, vec![0.0, 90.0]);
        assert!(s.objects.iter().all(|o| o.material.is_conductor));
    }

    #[test]
    fn air_scene_rasterizes_to_vacuum() {
        let g = Scene::empty([10.0, 8.0, 6.0], 1.0).rasterize().unwrap();
        assert_eq!(g.dims(), [10, 8, 6]);
        assert!(g.eps_r().iter().all(|&e| e == 1.0));
        assert_eq!(g.conductor_count(), 0);
    }

    #[test]
    fn plywood_layer_occupies_25_planes() {
        let g = Scene::slab([10.0, 10.0, 40.0], 1.0, Material::plywood(), 25.0)
            .rasterize()
            .unwrap();
        let planes = (0..40)
            .filter(|&iz| g.eps_r()[g.index(0, 0, iz)] == 2.5)
            .count();
        assert_eq!(planes, 25);
    }

    #[test]
    fn rasterize_rejects_invalid_scene() {
        let s = Scene::empty([10.0, 10.0, 10.5], 1.0);
        match s.rasterize() {
            Err(Error::InvalidScene(v)) => assert_eq!(v[0].field, "extents_mm.z"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(180.0), 0.0);
        assert_eq!(normalize_yaw(-90.0), 90.0);
        assert_eq!(normalize_yaw(370.0), 10.0);
    }

    #[test]
    fn scene_document_rejects_unknown_keys() {
        let doc = r#"{"extents_mm":[10,10,10],"voxel_size_mm":1,"layers":[],"objects":[],"ambient":"air","colour":"red"}"#;
        assert!(Scene::from_json(doc).is_err());
        let ok = r#"{"extents_mm":[10,10,10],"voxel_size_mm":1,"layers":[{"material":"plywood","thickness_mm":5}],
                    "objects":[{"shape":{"cylinder":{"radius_mm":2,"length_mm":8}},"position_mm":[5,5,7],"yaw_deg":-45,"material":"metal"}],
                    "ambient":{"name":"air","relative_permittivity":1.0}}"#;
        let s = Scene::from_json(ok).unwrap();
        assert_eq!(s.objects[0].yaw_deg, 135.0);
        assert!(s.validate().is_empty());
        assert_eq!(Scene::from_json(&s.to_json()).unwrap(), s);
    }
}
