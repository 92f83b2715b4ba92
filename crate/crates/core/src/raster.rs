//! Soft rasterization of triangle meshes with exact vertex VJPs, plus a hard
//! point-in-triangle rasterizer for ground-truth masks.
//!
//! Per triangle `j` and pixel `p` the influence is
//! `D_j(p) = sigmoid(s_j(p) · d_j(p)² / sigma)` where `d_j` is the screen
//! distance from the pixel center to the projected triangle and `s_j` is +1
//! inside and -1 outside. Coverage aggregates as `S = 1 − Π_j (1 − D_j)`.
//! Shading is a depth softmax (temperature `gamma`) over flat Lambertian
//! face intensities, blended onto `background_value` by `S`.
//!
//! Influence is truncated outside a `sqrt(25·sigma)` px band around each
//! triangle, where `D_j < 1.4e-11`. Triangles with any vertex at or behind the
//! near plane are culled.

use nalgebra::Matrix2x3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{PinholeCamera, PointLight, TriangleMesh, Vec2, Vec3, MIN_DEPTH};
use crate::image::{Image, Mask, Plane};

/// Truncation threshold on `d² / sigma` for pixels outside a triangle.
const TAIL_CUTOFF: f64 = 25.0;

/// Projected triangles with less area (px²) than this are ignored.
const MIN_SCREEN_AREA2: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftRenderConfig {
    /// Edge sharpness in px².
    pub sigma: f64,
    /// Depth softmax temperature in meters.
    pub gamma: f64,
    pub background_value: f64,
}

impl SoftRenderConfig {
    /// `sigma = 1e-4 · diagonal²`, `gamma = 7e-4` m, black background.
    ///
    /// The depth softmax scales a face's weight by `exp(Δz / gamma)`, which
    /// also scales the truncated tail of its influence. Much colder
    /// temperatures turn the truncation into visible jumps in the image.
    pub fn for_camera(cam: &PinholeCamera) -> Self {
        let diag = cam.diagonal_px();
        Self {
            sigma: 1e-4 * diag * diag,
            gamma: 7e-4,
            background_value: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.gamma > 0.0) {
            return Err(Error::invalid("sigma and gamma must be positive"));
        }
        if !(0.0..=1.0).contains(&self.background_value) {
            return Err(Error::invalid("background_value must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Influence radius in pixels.
    pub fn radius_px(&self) -> f64 {
        (TAIL_CUTOFF * self.sigma).sqrt()
    }
}

#[derive(Clone, Debug)]
struct ProjectedTri {
    verts: [usize; 3],
    uv: [Vec2; 3],
    jac: [Matrix2x3<f64>; 3],
    cam: [Vec3; 3],
    /// Edge vectors and their inverse squared lengths.
    edge: [Vec2; 3],
    inv_len2: [f64; 3],
    area2: f64,
    depth: f64,
    shade: f64,
    /// Inclusive pixel index ranges.
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Distance query result for one pixel against one projected triangle.
struct Hit {
    /// `s · d² / sigma`.
    x: f64,
    inside: bool,
    edge: usize,
    t: f64,
    residual: Vec2,
}

impl ProjectedTri {
    #[inline]
    fn query(&self, p: Vec2, inv_sigma: f64) -> Option<Hit> {
        let a = self.uv;
        let e0 = cross2(self.edge[0], p - a[0]);
        let e1 = cross2(self.edge[1], p - a[1]);
        let e2 = cross2(self.edge[2], p - a[2]);
        let inside = if self.area2 > 0.0 {
            e0 > 0.0 && e1 > 0.0 && e2 > 0.0
        } else {
            e0 < 0.0 && e1 < 0.0 && e2 < 0.0
        };
        if !inside {
            // Distance to the farthest edge line bounds the true distance.
            let sgn = if self.area2 > 0.0 { -1.0 } else { 1.0 };
            let line = [e0, e1, e2]
                .iter()
                .zip(&self.inv_len2)
                .map(|(e, il)| {
                    let v = (sgn * e).max(0.0);
                    v * v * il
                })
                .fold(0.0, f64::max);
            if line * inv_sigma > TAIL_CUTOFF {
                return None;
            }
        }
        let mut best = (f64::INFINITY, 0usize, 0.0, Vec2::zeros());
        for k in 0..3 {
            let ap = p - a[k];
            let t = (ap.dot(&self.edge[k]) * self.inv_len2[k]).clamp(0.0, 1.0);
            let r = ap - self.edge[k] * t;
            let d2 = r.norm_squared();
            if d2 < best.0 {
                best = (d2, k, t, r);
            }
        }
        let (d2, edge, t, residual) = best;
        let ratio = d2 * inv_sigma;
        if !inside && ratio > TAIL_CUTOFF {
            return None;
        }
        Some(Hit {
            x: if inside { ratio } else { -ratio },
            inside,
            edge,
            t,
            residual,
        })
    }
}

#[inline]
fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// `(sigmoid(x), softplus(x), softplus(-x))` from one exponential.
#[inline]
fn soft_terms(x: f64) -> (f64, f64, f64) {
    let e = (-x.abs()).exp();
    let l = e.ln_1p();
    if x >= 0.0 {
        (1.0 / (1.0 + e), x + l, l)
    } else {
        (e / (1.0 + e), l, l - x)
    }
}

/// Flat Lambertian intensity `max(0, n·l) · intensity` for a camera-frame
/// triangle lit from `light`.
fn lambert(cam: &[Vec3; 3], light: &Vec3, intensity: f64) -> f64 {
    let u = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
    let un = u.norm();
    if un == 0.0 {
        return 0.0;
    }
    let w = light - (cam[0] + cam[1] + cam[2]) / 3.0;
    let wn = w.norm();
    if wn == 0.0 {
        return 0.0;
    }
    (u.dot(&w) / (un * wn)).max(0.0) * intensity
}

/// Camera-frame vertex cotangents of `lambert` scaled by `g`.
fn lambert_vjp(cam: &[Vec3; 3], light: &Vec3, intensity: f64, g: f64, out: &mut [Vec3; 3]) {
    let e1 = cam[1] - cam[0];
    let e2 = cam[2] - cam[0];
    let u = e1.cross(&e2);
    let un = u.norm();
    let w = light - (cam[0] + cam[1] + cam[2]) / 3.0;
    let wn = w.norm();
    if un == 0.0 || wn == 0.0 {
        return;
    }
    let n = u / un;
    let l = w / wn;
    if n.dot(&l) <= 0.0 {
        return;
    }
    let gn = l * (g * intensity);
    let gl = n * (g * intensity);
    let gu = (gn - n * n.dot(&gn)) / un;
    let gw = (gl - l * l.dot(&gl)) / wn;
    let g1 = e2.cross(&gu);
    let g2 = gu.cross(&e1);
    out[0] += -(g1 + g2) - gw / 3.0;
    out[1] += g1 - gw / 3.0;
    out[2] += g2 - gw / 3.0;
}

/// Result of a soft render, holding what the VJP needs.
#[derive(Clone, Debug)]
pub struct SoftRenderOutput {
    /// H×W×3 shaded image in [0, 1].
    pub image: Image,
    /// H×W soft silhouette in [0, 1].
    pub silhouette: Plane,
    cfg: SoftRenderConfig,
    shaded: bool,
    tris: Vec<ProjectedTri>,
    n_vertices: usize,
    camera_rotation: nalgebra::Matrix3<f64>,
    light: Vec3,
    light_intensity: f64,
    /// Per pixel: `Π (1 − D_j)`.
    empty: Vec<f64>,
    /// Per pixel: softmax-weighted shade and log normalizer.
    shade: Vec<f64>,
    log_norm: Vec<f64>,
    /// Pixels whose gray value was clamped.
    clamped: Vec<bool>,
}

impl SoftRenderOutput {
    pub fn width(&self) -> usize {
        self.silhouette.width
    }

    pub fn height(&self) -> usize {
        self.silhouette.height
    }

    /// Maps upstream gradients on the image (H×W×3) and/or silhouette (H×W)
    /// to world-frame cotangents on the mesh vertices.
    pub fn vjp(&self, d_image: Option<&[f64]>, d_silhouette: Option<&[f64]>) -> Result<Vec<Vec3>> {
        let cam = self.vjp_camera_frame(d_image, d_silhouette)?;
        let rt = self.camera_rotation.transpose();
        Ok(cam.into_iter().map(|g| rt * g).collect())
    }

    /// Same as [`vjp`](Self::vjp) but cotangents are on camera-frame
    /// vertex positions.
    pub fn vjp_camera_frame(&self, d_image: Option<&[f64]>, d_silhouette: Option<&[f64]>) -> Result<Vec<Vec3>> {
        let (w, h) = (self.width(), self.height());
        let npx = w * h;
        if let Some(d) = d_image {
            if d.len() != npx * 3 {
                return Err(Error::DimensionMismatch(format!("image cotangent has {} values, expected {}", d.len(), npx * 3)));
            }
        }
        if let Some(d) = d_silhouette {
            if d.len() != npx {
                return Err(Error::DimensionMismatch(format!("silhouette cotangent has {} values, expected {}", d.len(), npx)));
            }
        }
        let bg = self.cfg.background_value;
        // Per-pixel upstream gradients on S and on the softmax shade A.
        let mut g_sil = vec![0.0; npx];
        let mut g_shade = vec![0.0; npx];
        for i in 0..npx {
            let s = self.silhouette.data[i];
            let mut gs = d_silhouette.map_or(0.0, |d| d[i]);
            if let Some(d) = d_image {
                if !self.clamped[i] {
                    let gi = d[3 * i] + d[3 * i + 1] + d[3 * i + 2];
                    if self.shaded {
                        gs += gi * (self.shade[i] - bg);
                        g_shade[i] = gi * s;
                    } else {
                        gs += -gi * bg;
                    }
                }
            }
            g_sil[i] = gs;
        }

        let inv_sigma = 1.0 / self.cfg.sigma;
        let inv_gamma = 1.0 / self.cfg.gamma;
        let mut out = vec![Vec3::zeros(); self.n_vertices];
        for tri in &self.tris {
            let mut g_uv = [Vec2::zeros(); 3];
            let mut g_depth = 0.0;
            let mut g_color = 0.0;
            for py in tri.y0..=tri.y1 {
                for px in tri.x0..=tri.x1 {
                    let i = py * w + px;
                    let gs = g_sil[i];
                    let ga = g_shade[i];
                    if gs == 0.0 && ga == 0.0 {
                        continue;
                    }
                    let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let Some(hit) = tri.query(p, inv_sigma) else { continue };
                    let (d, _, sp_neg) = soft_terms(hit.x);
                    let mut gx = gs * self.empty[i] * d;
                    if self.shaded && ga != 0.0 {
                        let logit = -sp_neg - tri.depth * inv_gamma;
                        let weight = (logit - self.log_norm[i]).exp();
                        let dev = tri.shade - self.shade[i];
                        gx += ga * weight * dev * (1.0 - d);
                        g_depth -= ga * weight * dev * inv_gamma;
                        g_color += ga * weight;
                    }
                    if gx == 0.0 {
                        continue;
                    }
                    let sign = if hit.inside { 1.0 } else { -1.0 };
                    let gd2 = gx * sign * inv_sigma;
                    let k = hit.edge;
                    let r = hit.residual;
                    g_uv[k] -= r * (2.0 * gd2 * (1.0 - hit.t));
                    g_uv[(k + 1) % 3] -= r * (2.0 * gd2 * hit.t);
                }
            }
            let mut g_cam = [Vec3::zeros(); 3];
            for k in 0..3 {
                g_cam[k] += tri.jac[k].transpose() * g_uv[k];
                g_cam[k].z += g_depth / 3.0;
            }
            if g_color != 0.0 {
                lambert_vjp(&tri.cam, &self.light, self.light_intensity, g_color, &mut g_cam);
            }
            for k in 0..3 {
                out[tri.verts[k]] += g_cam[k];
            }
        }
        Ok(out)
    }
}

/// Per-vertex projection: pixel position and its Jacobian w.r.t. the camera-space point.
type Projected = Option<(Vec2, Matrix2x3<f64>)>;
/// Face index and its pixel bounding box (xmin, xmax, ymin, ymax), padded by the cutoff radius.
type FaceBox = (usize, f64, f64, f64, f64);

fn project_mesh(mesh: &TriangleMesh, cam: &PinholeCamera, radius: f64) -> Result<(Vec<Vec3>, Vec<Projected>, Vec<FaceBox>)> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.to_camera(v)).collect();
    if !cam_pts.iter().any(|p| p.z > MIN_DEPTH) {
        return Err(Error::AllBehindCamera);
    }
    let proj: Vec<_> = cam_pts.iter().map(|p| cam.project_camera_point(p).ok()).collect();
    let mut boxes = Vec::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        let Some(uvs) = f.iter().map(|&v| proj[v].map(|(uv, _)| uv)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let xmin = uvs.iter().map(|u| u.x).fold(f64::INFINITY, f64::min) - radius;
        let xmax = uvs.iter().map(|u| u.x).fold(f64::NEG_INFINITY, f64::max) + radius;
        let ymin = uvs.iter().map(|u| u.y).fold(f64::INFINITY, f64::min) - radius;
        let ymax = uvs.iter().map(|u| u.y).fold(f64::NEG_INFINITY, f64::max) + radius;
        boxes.push((fi, xmin, xmax, ymin, ymax));
    }
    Ok((cam_pts, proj, boxes))
}

/// Pixel-center index range `[lo, hi]` covering `[a, b]`, or None if empty.
fn pixel_range(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).floor().min(n as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

fn render_impl(mesh: &TriangleMesh, cam: &PinholeCamera, light: Option<&PointLight>, cfg: &SoftRenderConfig) -> Result<SoftRenderOutput> {
    cfg.validate()?;
    let (w, h) = (cam.width, cam.height);
    let npx = w * h;
    let radius = cfg.radius_px();
    let (cam_pts, proj, boxes) = project_mesh(mesh, cam, radius)?;
    let light_pos = light.map_or(Vec3::zeros(), |l| l.position());
    let intensity = light.map_or(0.0, |l| l.intensity);

    let mut tris = Vec::with_capacity(boxes.len());
    for (fi, xmin, xmax, ymin, ymax) in boxes {
        let f = mesh.faces[fi];
        let uv = [proj[f[0]].unwrap().0, proj[f[1]].unwrap().0, proj[f[2]].unwrap().0];
        let edge = [uv[1] - uv[0], uv[2] - uv[1], uv[0] - uv[2]];
        let area2 = cross2(edge[0], uv[2] - uv[0]);
        if area2.abs() < MIN_SCREEN_AREA2 {
            continue;
        }
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_range(xmin, xmax, w), pixel_range(ymin, ymax, h)) else {
            continue;
        };
        let camv = [cam_pts[f[0]], cam_pts[f[1]], cam_pts[f[2]]];
        tris.push(ProjectedTri {
            verts: f,
            uv,
            jac: [proj[f[0]].unwrap().1, proj[f[1]].unwrap().1, proj[f[2]].unwrap().1],
            cam: camv,
            edge,
            inv_len2: [1.0 / edge[0].norm_squared(), 1.0 / edge[1].norm_squared(), 1.0 / edge[2].norm_squared()],
            area2,
            depth: (camv[0].z + camv[1].z + camv[2].z) / 3.0,
            shade: if light.is_some() { lambert(&camv, &light_pos, intensity) } else { 0.0 },
            x0,
            x1,
            y0,
            y1,
        });
    }

    let inv_sigma = 1.0 / cfg.sigma;
    let inv_gamma = 1.0 / cfg.gamma;
    let mut log_empty = vec![0.0; npx];
    // Online log-sum-exp: running max, scaled sum, scaled numerator.
    let mut lse_max = vec![f64::NEG_INFINITY; npx];
    let mut lse_sum = vec![0.0; npx];
    let mut lse_num = vec![0.0; npx];
    for tri in &tris {
        for py in tri.y0..=tri.y1 {
            for px in tri.x0..=tri.x1 {
                let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                let Some(hit) = tri.query(p, inv_sigma) else { continue };
                let i = py * w + px;
                let (_, sp_pos, sp_neg) = soft_terms(hit.x);
                log_empty[i] -= sp_pos;
                if light.is_some() {
                    let logit = -sp_neg - tri.depth * inv_gamma;
                    let m = lse_max[i];
                    if logit > m {
                        let scale = (m - logit).exp();
                        lse_sum[i] = lse_sum[i] * scale + 1.0;
                        lse_num[i] = lse_num[i] * scale + tri.shade;
                        lse_max[i] = logit;
                    } else {
                        let e = (logit - m).exp();
                        lse_sum[i] += e;
                        lse_num[i] += e * tri.shade;
                    }
                }
            }
        }
    }

    let bg = cfg.background_value;
    let mut sil = vec![0.0; npx];
    let mut shade = vec![0.0; npx];
    let mut log_norm = vec![f64::NEG_INFINITY; npx];
    let mut gray = vec![bg; npx];
    let mut clamped = vec![false; npx];
    for i in 0..npx {
        let s = (-log_empty[i].exp_m1()).clamp(0.0, 1.0);
        sil[i] = s;
        if light.is_some() && lse_sum[i] > 0.0 {
            shade[i] = lse_num[i] / lse_sum[i];
            log_norm[i] = lse_max[i] + lse_sum[i].ln();
        }
        let v = s * shade[i] + (1.0 - s) * bg;
        if !(0.0..=1.0).contains(&v) {
            clamped[i] = true;
        }
        gray[i] = v.clamp(0.0, 1.0);
    }
    let silhouette = Plane::from_data(w, h, sil)?;
    let image = Image::from_gray(&Plane::from_data(w, h, gray)?);
    Ok(SoftRenderOutput {
        image,
        silhouette,
        cfg: *cfg,
        shaded: light.is_some(),
        tris,
        n_vertices: mesh.vertices.len(),
        camera_rotation: cam.extrinsics.rotation,
        light: light_pos,
        light_intensity: intensity,
        empty: log_empty.iter().map(|v| v.exp()).collect(),
        shade,
        log_norm,
        clamped,
    })
}

/// Soft silhouette only; the output image holds the unshaded composite
/// `(1 − S) · background_value`.
pub fn soft_silhouette(mesh: &TriangleMesh, cam: &PinholeCamera, cfg: &SoftRenderConfig) -> Result<SoftRenderOutput> {
    render_impl(mesh, cam, None, cfg)
}

/// Soft silhouette plus Lambertian shading from `light`.
pub fn soft_shade(mesh: &TriangleMesh, cam: &PinholeCamera, light: &PointLight, cfg: &SoftRenderConfig) -> Result<SoftRenderOutput> {
    render_impl(mesh, cam, Some(light), cfg)
}

/// Binary coverage at pixel centers (edges inclusive), z-buffered.
pub fn hard_rasterize(mesh: &TriangleMesh, cam: &PinholeCamera) -> Result<Mask> {
    hard_rasterize_ids(mesh, cam).map(|ids| Mask {
        width: cam.width,
        height: cam.height,
        data: ids.into_iter().map(|f| f.is_some()).collect(),
    })
}

/// Nearest covering face per pixel.
pub fn hard_rasterize_ids(mesh: &TriangleMesh, cam: &PinholeCamera) -> Result<Vec<Option<usize>>> {
    let (w, h) = (cam.width, cam.height);
    let (cam_pts, proj, boxes) = project_mesh(mesh, cam, 0.0)?;
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut ids = vec![None; w * h];
    for (fi, xmin, xmax, ymin, ymax) in boxes {
        let f = mesh.faces[fi];
        let uv = [proj[f[0]].unwrap().0, proj[f[1]].unwrap().0, proj[f[2]].unwrap().0];
        let area2 = cross2(uv[1] - uv[0], uv[2] - uv[0]);
        if area2.abs() < MIN_SCREEN_AREA2 {
            continue;
        }
        let (Some((x0, x1)), Some((y0, y1))) = (pixel_range(xmin, xmax, w), pixel_range(ymin, ymax, h)) else {
            continue;
        };
        let z = [cam_pts[f[0]].z, cam_pts[f[1]].z, cam_pts[f[2]].z];
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = Vec2::new(px as f64 + 0.5, py as f64 + 0.5);
                // Barycentric weights, sign-normalized by the area.
                let b0 = cross2(uv[2] - uv[1], p - uv[1]) / area2;
                let b1 = cross2(uv[0] - uv[2], p - uv[2]) / area2;
                let b2 = cross2(uv[1] - uv[0], p - uv[0]) / area2;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let depth = b0 * z[0] + b1 * z[1] + b2 * z[2];
                let i = py * w + px;
                if depth < zbuf[i] {
                    zbuf[i] = depth;
                    ids[i] = Some(fi);
                }
            }
        }
    }
    Ok(ids)
}
