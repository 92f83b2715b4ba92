//! Rigid transforms, triangle meshes, the pinhole camera and the point light.
//!
//! Camera convention: +z forward, +x right, +y down, pixel (0, 0) is the
//! top-left corner of the image and pixel centers sit at half-integers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Minimum camera-frame depth for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

/// Minimum triangle area accepted by mesh validation.
pub const MIN_FACE_AREA: f64 = 1e-12;

/// A proper rigid motion `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, checking that `rotation` is orthonormal with
    /// determinant +1 to within 1e-6.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Mat3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho_err < 1e-6 && (det - 1.0).abs() < 1e-6) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "rotation is not a proper rotation (orthonormality error {ortho_err:e}, det {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vec3, translation: Vec3) -> Self {
        Self {
            rotation: *Rotation3::new(axis_angle).matrix(),
            translation,
        }
    }

    /// Axis-angle vector of the rotation part.
    pub fn axis_angle(&self) -> Vec3 {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Left-multiplies a small motion `(axis-angle, translation)` onto this
    /// transform: `Exp(delta) ∘ self`.
    pub fn perturbed(&self, delta: &[f64; 6]) -> RigidTransform {
        let inc = RigidTransform::from_axis_angle(
            Vec3::new(delta[0], delta[1], delta[2]),
            Vec3::new(delta[3], delta[4], delta[5]),
        );
        let mut out = inc.compose(self);
        out.reorthonormalize();
        out
    }

    fn reorthonormalize(&mut self) {
        let r = Rotation3::from_matrix_eps(&self.rotation, 1e-15, 20, Rotation3::identity());
        self.rotation = *r.matrix();
    }

    /// Homogeneous 4x4 matrix, row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::LengthMismatch {
                expected: 16,
                actual: m.len(),
            });
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom.iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::invalid("bottom row of a rigid 4x4 must be (0, 0, 0, 1)"));
        }
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        RigidTransform::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m: Vec<f64> = Vec::deserialize(d)?;
        RigidTransform::from_row_major(&m).map_err(serde::de::Error::custom)
    }
}

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh and validates face indices and face areas.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let count = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= count {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: idx as i64,
                        count,
                    });
                }
            }
            let area = self.face_area(fi);
            if !(area > MIN_FACE_AREA) {
                return Err(Error::DegenerateFace { face: fi, area });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the right-hand rule over the face winding.
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Appends `other`, re-offsetting its face indices.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + offset, f[1] + offset, f[2] + offset]));
    }

    /// Axis-aligned box with outward-facing windings.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let v = |x: bool, y: bool, z: bool| {
            Vec3::new(
                if x { max.x } else { min.x },
                if y { max.y } else { min.y },
                if z { max.z } else { min.z },
            )
        };
        let vertices = vec![
            v(false, false, false),
            v(true, false, false),
            v(true, true, false),
            v(false, true, false),
            v(false, false, true),
            v(true, false, true),
            v(true, true, true),
            v(false, true, true),
        ];
        let faces = vec![
            [0, 2, 1], [0, 3, 2], // -z
            [4, 5, 6], [4, 6, 7], // +z
            [0, 1, 5], [0, 5, 4], // -y
            [3, 6, 2], [3, 7, 6], // +y
            [0, 4, 7], [0, 7, 3], // -x
            [1, 2, 6], [1, 6, 5], // +x
        ];
        TriangleMesh { vertices, faces }
    }

    /// Axis-aligned box whose faces are split into a grid of cells no longer
    /// than `max_edge`, wound outward. Small faces keep the centroid a good
    /// stand-in for the surface depth.
    pub fn tessellated_cuboid(min: Vec3, max: Vec3, max_edge: f64) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for k in 0..3 {
            let (iu, iv) = ((k + 1) % 3, (k + 2) % 3);
            let nu = (((max[iu] - min[iu]) / max_edge).ceil() as usize).max(1);
            let nv = (((max[iv] - min[iv]) / max_edge).ceil() as usize).max(1);
            for outward in [false, true] {
                let base = vertices.len();
                for j in 0..=nv {
                    for i in 0..=nu {
                        let mut p = Vec3::zeros();
                        p[k] = if outward { max[k] } else { min[k] };
                        p[iu] = min[iu] + (max[iu] - min[iu]) * i as f64 / nu as f64;
                        p[iv] = min[iv] + (max[iv] - min[iv]) * j as f64 / nv as f64;
                        vertices.push(p);
                    }
                }
                let idx = |i: usize, j: usize| base + j * (nu + 1) + i;
                for j in 0..nv {
                    for i in 0..nu {
                        let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                        if outward {
                            faces.push([a, b, c]);
                            faces.push([a, c, d]);
                        } else {
                            faces.push([a, c, b]);
                            faces.push([a, d, c]);
                        }
                    }
                }
            }
        }
        TriangleMesh { vertices, faces }
    }

    /// Parses the OBJ subset: `v x y z`, `f i j k` (1-based), `#` comments.
    pub fn parse_obj(text: &str) -> Result<TriangleMesh> {
        let mut vertices = Vec::new();
        let mut raw_faces: Vec<(usize, [i64; 3])> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            let perr = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            match tag {
                "v" => {
                    if rest.len() != 3 {
                        return Err(perr(format!("vertex needs 3 coordinates, got {}", rest.len())));
                    }
                    let mut xyz = [0.0; 3];
                    for (slot, s) in xyz.iter_mut().zip(&rest) {
                        *slot = s
                            .parse::<f64>()
                            .map_err(|e| perr(format!("bad coordinate `{s}`: {e}")))?;
                        if !slot.is_finite() {
                            return Err(perr(format!("non-finite coordinate `{s}`")));
                        }
                    }
                    vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
                "f" => {
                    if rest.len() != 3 {
                        return Err(perr(format!(
                            "only triangle faces are supported, got {} indices",
                            rest.len()
                        )));
                    }
                    let mut idx = [0i64; 3];
                    for (slot, s) in idx.iter_mut().zip(&rest) {
                        // Accept `i/t/n` forms but only keep the position index.
                        let head = s.split('/').next().unwrap_or_default();
                        *slot = head
                            .parse::<i64>()
                            .map_err(|e| perr(format!("bad face index `{s}`: {e}")))?;
                    }
                    raw_faces.push((line_no, idx));
                }
                other => return Err(perr(format!("unsupported record `{other}`"))),
            }
        }
        let count = vertices.len();
        let mut faces = Vec::with_capacity(raw_faces.len());
        for (fi, (_, idx)) in raw_faces.iter().enumerate() {
            let mut face = [0usize; 3];
            for (slot, &i) in face.iter_mut().zip(idx) {
                if i < 1 || i as usize > count {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: i,
                        count,
                    });
                }
                *slot = i as usize - 1;
            }
            faces.push(face);
        }
        TriangleMesh::new(vertices, faces)
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TriangleMesh::parse_obj(&text)
    }

    /// Serializes to the OBJ subset. Coordinates use the shortest
    /// representation that parses back to the same `f64`.
    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }
}

/// Pinhole camera with world-to-camera extrinsics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera transform.
    #[serde(default)]
    pub extrinsics: RigidTransform,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsics: RigidTransform::identity(),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_extrinsics(mut self, extrinsics: RigidTransform) -> Self {
        self.extrinsics = extrinsics;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn diagonal_px(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    #[inline]
    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        self.extrinsics.apply(p_world)
    }

    /// Projects a world point to pixel coordinates.
    pub fn project(&self, p_world: &Vec3) -> Result<Vec2> {
        self.project_camera_point(&self.to_camera(p_world)).map(|(uv, _)| uv)
    }

    /// Projects a camera-frame point, returning the pixel and the 2x3
    /// Jacobian of the pixel with respect to the camera-frame point.
    pub fn project_camera_point(&self, p: &Vec3) -> Result<(Vec2, Matrix2x3<f64>)> {
        if !(p.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { z: p.z });
        }
        let iz = 1.0 / p.z;
        let uv = Vec2::new(self.fx * p.x * iz + self.cx, self.fy * p.y * iz + self.cy);
        let jac = Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        );
        Ok((uv, jac))
    }
}

/// Point light expressed in the camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLight {
    pub position: [f64; 3],
    pub intensity: f64,
}

impl Default for PointLight {
    /// Unit light a little behind the camera center.
    fn default() -> Self {
        Self {
            position: [0.0, 0.0, -0.05],
            intensity: 1.0,
        }
    }
}

impl PointLight {
    pub fn new(position: Vec3, intensity: f64) -> Result<Self> {
        if !(intensity >= 0.0) {
            return Err(Error::invalid("light intensity must be >= 0"));
        }
        Ok(Self {
            position: [position.x, position.y, position.z],
            intensity,
        })
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }
}
