//! Serial-chain forward kinematics (classic, distal DH convention) with an
//! analytic vector-Jacobian product from posed vertices back to joint values.
//!
//! Link `k` is rigidly attached to frame `k = F_B · A_0(q_0) · … · A_k(q_k)`,
//! so it moves with joints `0..=k` and ignores every distal joint.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Mat3, RigidTransform, TriangleMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One row of a classic DH table. Angles in radians, lengths in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d_offset: f64,
    pub theta_offset: f64,
    pub kind: JointKind,
}

impl DhRow {
    pub fn revolute(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d_offset: d,
            theta_offset,
            kind: JointKind::Revolute,
        }
    }

    pub fn prismatic(a: f64, alpha: f64, d_offset: f64, theta: f64) -> Self {
        Self {
            a,
            alpha,
            d_offset,
            theta_offset: theta,
            kind: JointKind::Prismatic,
        }
    }

    /// `Rz(θ) · Tz(d) · Tx(a) · Rx(α)` with the joint value applied to θ or d.
    pub fn transform(&self, q: f64) -> RigidTransform {
        let (theta, d) = match self.kind {
            JointKind::Revolute => (self.theta_offset + q, self.d_offset),
            JointKind::Prismatic => (self.theta_offset, self.d_offset + q),
        };
        let (st, ct) = theta.sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        RigidTransform {
            rotation: Mat3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca),
            translation: Vec3::new(self.a * ct, self.a * st, d),
        }
    }
}

/// Joint values: radians for revolute joints, meters for prismatic ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointConfig(pub Vec<f64>);

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Mesh rigidly attached to the frame of link `link`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkMesh {
    pub link: usize,
    pub mesh: TriangleMesh,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DhChain {
    pub rows: Vec<DhRow>,
    /// Robot base frame in world coordinates.
    pub base: RigidTransform,
    pub links: Vec<LinkMesh>,
    /// Per-joint `(lo, hi)`, radians or meters.
    pub limits: Vec<(f64, f64)>,
}

impl DhChain {
    pub fn new(
        rows: Vec<DhRow>,
        base: RigidTransform,
        links: Vec<LinkMesh>,
        limits: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let chain = Self {
            rows,
            base,
            links,
            limits,
        };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.limits.len() != self.rows.len() {
            return Err(Error::LengthMismatch {
                expected: self.rows.len(),
                actual: self.limits.len(),
            });
        }
        for (j, &(lo, hi)) in self.limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::invalid(format!("joint {j}: limit lo {lo} must be < hi {hi}")));
            }
        }
        for (j, r) in self.rows.iter().enumerate() {
            if ![r.a, r.alpha, r.d_offset, r.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("row {j} has a non-finite DH parameter")));
            }
        }
        for l in &self.links {
            if l.link >= self.rows.len() {
                return Err(Error::invalid(format!(
                    "link mesh attached to link {} but the chain has {} rows",
                    l.link,
                    self.rows.len()
                )));
            }
            l.mesh.validate()?;
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.rows.len()
    }

    pub fn kinds(&self) -> Vec<JointKind> {
        self.rows.iter().map(|r| r.kind).collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.links.iter().map(|l| l.mesh.vertices.len()).sum()
    }

    fn check_len(&self, q: &JointConfig) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::LengthMismatch {
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// Clamps each joint value into its limits.
    pub fn clamp(&self, q: &mut JointConfig) {
        for (v, &(lo, hi)) in q.0.iter_mut().zip(&self.limits) {
            *v = v.clamp(lo, hi);
        }
    }

    pub fn within_limits(&self, q: &JointConfig) -> bool {
        q.0.iter()
            .zip(&self.limits)
            .all(|(v, &(lo, hi))| *v >= lo && *v <= hi)
    }

    /// World pose of every link frame, one per DH row.
    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Vec<RigidTransform>> {
        self.check_len(q)?;
        let mut frames = Vec::with_capacity(self.dof());
        let mut current = self.base;
        for (row, &v) in self.rows.iter().zip(q.values()) {
            current = current.compose(&row.transform(v));
            frames.push(current);
        }
        Ok(frames)
    }

    /// All link meshes posed in world coordinates and concatenated in the
    /// order of `links`.
    pub fn pose_meshes(&self, q: &JointConfig) -> Result<TriangleMesh> {
        let frames = self.forward_kinematics(q)?;
        let mut out = TriangleMesh::default();
        for l in &self.links {
            out.append(&l.mesh.transformed(&frames[l.link]));
        }
        Ok(out)
    }

    /// `Σ_v (∂v/∂q)ᵀ g_v` for world-space cotangents `g_v` on the posed
    /// vertices.
    pub fn vertex_jacobian_vjp(&self, q: &JointConfig, cotangent: &[Vec3]) -> Result<Vec<f64>> {
        let frames = self.forward_kinematics(q)?;
        let n_verts = self.vertex_count();
        if cotangent.len() != n_verts {
            return Err(Error::LengthMismatch {
                expected: n_verts,
                actual: cotangent.len(),
            });
        }
        // Per link: S = Σ g, M = Σ v × g. The joint-j term is then
        // ω·(M − p × S) for revolute and ω·S for prismatic joints.
        let dof = self.dof();
        let mut sum_g = vec![Vec3::zeros(); dof];
        let mut sum_vxg = vec![Vec3::zeros(); dof];
        let mut offset = 0;
        for l in &self.links {
            let frame = &frames[l.link];
            for (local, g) in l.mesh.vertices.iter().zip(&cotangent[offset..]) {
                let v = frame.apply(local);
                sum_g[l.link] += g;
                sum_vxg[l.link] += v.cross(g);
            }
            offset += l.mesh.vertices.len();
        }
        // Suffix sums: joint j drives every link k >= j.
        for k in (0..dof.saturating_sub(1)).rev() {
            sum_g[k] = sum_g[k] + sum_g[k + 1];
            sum_vxg[k] = sum_vxg[k] + sum_vxg[k + 1];
        }
        let mut grad = vec![0.0; dof];
        for j in 0..dof {
            let parent = if j == 0 { &self.base } else { &frames[j - 1] };
            let axis = parent.rotation.column(2).into_owned();
            grad[j] = match self.rows[j].kind {
                JointKind::Revolute => {
                    let p = parent.translation;
                    axis.dot(&(sum_vxg[j] - p.cross(&sum_g[j])))
                }
                JointKind::Prismatic => axis.dot(&sum_g[j]),
            };
        }
        Ok(grad)
    }

    /// Loads a chain description file (see [`ChainFile`]). Link mesh paths
    /// are resolved relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<DhChain> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ChainFile = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        file.into_chain(dir)
    }

    /// Writes `chain.json` plus one OBJ per link mesh into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut links = BTreeMap::new();
        for (i, l) in self.links.iter().enumerate() {
            let name = format!("link{}_{}.obj", l.link, i);
            l.mesh.save_obj(dir.join(&name))?;
            links.entry(l.link.to_string()).or_insert_with(Vec::new).push(name);
        }
        let file = ChainFile {
            rows: self.rows.iter().map(RowRecord::from).collect(),
            base: self.base.to_row_major().to_vec(),
            links: links
                .into_iter()
                .map(|(k, v)| (k, if v.len() == 1 { LinkPaths::One(v[0].clone()) } else { LinkPaths::Many(v) }))
                .collect(),
            limits: self
                .rows
                .iter()
                .zip(&self.limits)
                .map(|(r, &(lo, hi))| match r.kind {
                    JointKind::Revolute => [lo.to_degrees(), hi.to_degrees()],
                    JointKind::Prismatic => [lo, hi],
                })
                .collect(),
        };
        let path = dir.join("chain.json");
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// On-disk chain description. Angles (`alpha`, `theta`, revolute limits) are
/// in degrees; lengths and prismatic limits in meters; `base` is a row-major
/// 4x4 homogeneous matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub rows: Vec<RowRecord>,
    pub base: Vec<f64>,
    #[serde(default)]
    pub links: BTreeMap<String, LinkPaths>,
    pub limits: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkPaths {
    One(String),
    Many(Vec<String>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowRecord {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta: f64,
    pub kind: JointKind,
}

impl From<&DhRow> for RowRecord {
    fn from(r: &DhRow) -> Self {
        RowRecord {
            a: r.a,
            alpha: r.alpha.to_degrees(),
            d: r.d_offset,
            theta: r.theta_offset.to_degrees(),
            kind: r.kind,
        }
    }
}

impl ChainFile {
    pub fn into_chain(self, dir: &Path) -> Result<DhChain> {
        let rows: Vec<DhRow> = self
            .rows
            .iter()
            .map(|r| DhRow {
                a: r.a,
                alpha: r.alpha.to_radians(),
                d_offset: r.d,
                theta_offset: r.theta.to_radians(),
                kind: r.kind,
            })
            .collect();
        let base = RigidTransform::from_row_major(&self.base)?;
        let mut links = Vec::new();
        for (key, paths) in self.links {
            let link: usize = key
                .parse()
                .map_err(|_| Error::invalid(format!("link key `{key}` is not an index")))?;
            let paths = match paths {
                LinkPaths::One(p) => vec![p],
                LinkPaths::Many(v) => v,
            };
            for p in paths {
                let mesh = TriangleMesh::load_obj(dir.join(p))?;
                links.push(LinkMesh { link, mesh });
            }
        }
        if self.limits.len() != rows.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                actual: self.limits.len(),
            });
        }
        let limits = rows
            .iter()
            .zip(&self.limits)
            .map(|(r, l)| match r.kind {
                JointKind::Revolute => (l[0].to_radians(), l[1].to_radians()),
                JointKind::Prismatic => (l[0], l[1]),
            })
            .collect();
        DhChain::new(rows, base, links, limits)
    }
}
