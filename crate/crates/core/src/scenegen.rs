//! Synthetic datasets: joint trajectories, measurement perturbations,
//! observed images rendered over a textured background, and counterfactual
//! domain corruptions that leave kinematics and ground truth untouched.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compose_hybrid, mean_background, MeanBackground};
use crate::geom::{PinholeCamera, PointLight};
use crate::image::{Image, Mask};
use crate::kinematics::{DhChain, JointConfig, JointKind};
use crate::raster::{hard_rasterize, soft_shade, SoftRenderConfig};

/// Trajectory periods are defined relative to this many frames, so shorter
/// sequences are prefixes of longer ones.
pub const SEQUENCE_LENGTH: usize = 300;

/// Built-in procedural background textures.
pub const BUILTIN_BACKGROUNDS: [&str; 2] = ["tissue", "tissue_alt"];

/// Background of the regular (uncorrupted) domain.
pub const DEFAULT_BACKGROUND: &str = "tissue";

// RNG streams, so that each consumer draws from its own sequence.
const STREAM_TRAJECTORY: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_CORRUPT: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Regular,
    LowBrightness,
    Smoke,
    Blood,
    BackgroundChange,
}

impl DomainKind {
    pub const ALL: [DomainKind; 5] = [
        DomainKind::Regular,
        DomainKind::LowBrightness,
        DomainKind::Smoke,
        DomainKind::Blood,
        DomainKind::BackgroundChange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Regular => "regular",
            DomainKind::LowBrightness => "low_brightness",
            DomainKind::Smoke => "smoke",
            DomainKind::Blood => "blood",
            DomainKind::BackgroundChange => "background_change",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    fn stream_offset(self) -> u64 {
        self as u64
    }
}

/// Environment condition of a generated sequence. Only the parameters of
/// the declared kind are used; they must be present for that kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: DomainKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brightness_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoke_opacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_octaves: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_radius_px: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_id: Option<String>,
    pub seed: u64,
}

impl DomainSpec {
    /// Default parameters for `kind`.
    pub fn preset(kind: DomainKind, seed: u64) -> Self {
        let mut d = DomainSpec {
            kind,
            brightness_scale: None,
            smoke_opacity: None,
            noise_octaves: None,
            blob_count: None,
            blob_radius_px: None,
            background_id: None,
            seed,
        };
        match kind {
            DomainKind::Regular => {}
            DomainKind::LowBrightness => d.brightness_scale = Some(0.5),
            DomainKind::Smoke => {
                d.smoke_opacity = Some(0.6);
                d.noise_octaves = Some(4);
            }
            DomainKind::Blood => {
                d.blob_count = Some(6);
                d.blob_radius_px = Some(10);
            }
            DomainKind::BackgroundChange => d.background_id = Some("tissue_alt".into()),
        }
        d
    }

    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        Ok(Self::preset(DomainKind::from_name(name)?, seed))
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |field: &str| Error::Config {
            field: format!("domain.{field}"),
            message: format!("required for domain kind {}", self.kind.name()),
        };
        let range = |field: &str, msg: &str| Error::Config {
            field: format!("domain.{field}"),
            message: msg.to_string(),
        };
        match self.kind {
            DomainKind::Regular => {}
            DomainKind::LowBrightness => {
                let s = self.brightness_scale.ok_or_else(|| missing("brightness_scale"))?;
                if !(s > 0.0 && s <= 1.0) {
                    return Err(range("brightness_scale", "must lie in (0, 1]"));
                }
            }
            DomainKind::Smoke => {
                let o = self.smoke_opacity.ok_or_else(|| missing("smoke_opacity"))?;
                let n = self.noise_octaves.ok_or_else(|| missing("noise_octaves"))?;
                if !(0.0..=1.0).contains(&o) {
                    return Err(range("smoke_opacity", "must lie in [0, 1]"));
                }
                if n == 0 {
                    return Err(range("noise_octaves", "must be at least 1"));
                }
            }
            DomainKind::Blood => {
                self.blob_count.ok_or_else(|| missing("blob_count"))?;
                self.blob_radius_px.ok_or_else(|| missing("blob_radius_px"))?;
            }
            DomainKind::BackgroundChange => {
                self.background_id.as_ref().ok_or_else(|| missing("background_id"))?;
            }
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn frame_rng(seed: u64, stream: u64, frame: usize) -> ChaCha8Rng {
    // Word position is in 32-bit units; frames are spaced far apart.
    let mut rng = rng_for(seed, stream);
    rng.set_word_pos((frame as u128) << 32);
    rng
}

/// Smooth per-joint sinusoids within the joint limits.
pub fn generate_trajectory(chain: &DhChain, n_frames: usize, seed: u64) -> Result<Vec<JointConfig>> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be at least 1"));
    }
    let mut rng = rng_for(seed, STREAM_TRAJECTORY);
    let params: Vec<(f64, f64, f64, f64)> = chain
        .limits
        .iter()
        .map(|&(lo, hi)| {
            let half = 0.5 * (hi - lo);
            let amp = half * rng.random_range(0.3..0.8);
            let slack = half - amp;
            let center = 0.5 * (lo + hi) + rng.random_range(-0.9..0.9) * slack;
            let cycles = rng.random_range(0.5..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (center, amp, cycles, phase)
        })
        .collect();
    Ok((0..n_frames)
        .map(|t| {
            let s = t as f64 / SEQUENCE_LENGTH as f64;
            JointConfig::new(
                params
                    .iter()
                    .zip(&chain.limits)
                    .map(|(&(c, a, f, p), &(lo, hi))| (c + a * (std::f64::consts::TAU * f * s + p).sin()).clamp(lo, hi))
                    .collect(),
            )
        })
        .collect())
}

/// Adds independent uniform noise: `±magnitude_deg` degrees on revolute
/// joints and `±magnitude_deg / 100` meters on prismatic joints.
pub fn perturb_joints(kinds: &[JointKind], q: &JointConfig, magnitude_deg: f64, rng: &mut impl Rng) -> Result<JointConfig> {
    if !(magnitude_deg >= 0.0) {
        return Err(Error::invalid(format!("perturbation magnitude must be non-negative, got {magnitude_deg}")));
    }
    if kinds.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: kinds.len(),
            actual: q.len(),
        });
    }
    Ok(JointConfig::new(
        kinds
            .iter()
            .zip(q.values())
            .map(|(k, &v)| {
                let u: f64 = rng.random_range(-1.0..=1.0);
                let bound = match k {
                    JointKind::Revolute => magnitude_deg.to_radians(),
                    JointKind::Prismatic => magnitude_deg / 100.0,
                };
                v + u * bound
            })
            .collect(),
    ))
}

/// The perturbation of frame `frame` in a sequence generated with `seed`.
/// Independent of the domain, so replays share it.
pub fn frame_perturbation(chain: &DhChain, gt: &JointConfig, magnitude_deg: f64, seed: u64, frame: usize) -> Result<JointConfig> {
    let mut rng = frame_rng(seed, STREAM_PERTURB, frame);
    perturb_joints(&chain.kinds(), gt, magnitude_deg, &mut rng)
}

/// Multi-octave lattice value noise in [0, 1], bilinearly interpolated.
pub fn value_noise(width: usize, height: usize, base_cell: f64, octaves: u32, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; width * height];
    let mut amp = 1.0;
    let mut cell = base_cell;
    let mut total = 0.0;
    for _ in 0..octaves.max(1) {
        let gw = (width as f64 / cell).ceil() as usize + 2;
        let gh = (height as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random_range(0.0..1.0)).collect();
        for y in 0..height {
            let fy = y as f64 / cell;
            let (iy, ty) = (fy.floor() as usize, fy.fract());
            for x in 0..width {
                let fx = x as f64 / cell;
                let (ix, tx) = (fx.floor() as usize, fx.fract());
                let v00 = lattice[iy * gw + ix];
                let v10 = lattice[iy * gw + ix + 1];
                let v01 = lattice[(iy + 1) * gw + ix];
                let v11 = lattice[(iy + 1) * gw + ix + 1];
                let top = v00 + (v10 - v00) * tx;
                let bot = v01 + (v11 - v01) * tx;
                out[y * width + x] += amp * (top + (bot - top) * ty);
            }
        }
        total += amp;
        amp *= 0.5;
        cell = (cell * 0.5).max(1.0);
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Procedural background by name, or a PNG file path.
pub fn background_image(id: &str, width: usize, height: usize) -> Result<Image> {
    let (base, tint, seed, cell): ([f64; 3], [f64; 3], u64, f64) = match id {
        "tissue" => ([0.62, 0.30, 0.27], [0.30, 0.16, 0.14], 0x7155, 40.0),
        "tissue_alt" => ([0.52, 0.43, 0.33], [0.22, 0.20, 0.16], 0xa17, 24.0),
        path => {
            let img = Image::load_png(path)?;
            if img.dims() != (width, height) {
                return Err(Error::DimensionMismatch(format!(
                    "background {path} is {}x{}, camera is {width}x{height}",
                    img.width, img.height
                )));
            }
            return Ok(img);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse = value_noise(width, height, cell, 4, &mut rng);
    let veins = value_noise(width, height, cell / 3.0, 2, &mut rng);
    let data = (0..width * height)
        .flat_map(|i| {
            let n = coarse[i] - 0.5;
            // Thin darker ridges where the fine noise crosses its midpoint.
            let ridge = (1.0 - ((veins[i] - 0.5).abs() * 12.0).min(1.0)) * 0.12;
            [0, 1, 2].map(|c| (base[c] + tint[c] * 2.0 * n - ridge * base[c]).clamp(0.0, 1.0))
        })
        .collect();
    Image::from_data(width, height, data)
}

/// Applies a domain corruption to an observed image. `gt_mask` marks tool
/// pixels; `frame` selects the random draw of this frame.
pub fn corrupt(image: &Image, gt_mask: &Mask, domain: &DomainSpec, frame: usize) -> Result<Image> {
    domain.validate()?;
    let (w, h) = image.dims();
    if (gt_mask.width, gt_mask.height) != (w, h) {
        return Err(Error::DimensionMismatch("mask and image sizes differ".into()));
    }
    let mut rng = frame_rng(domain.seed, STREAM_CORRUPT + 16 * domain.kind.stream_offset(), frame);
    let mut out = image.clone();
    match domain.kind {
        DomainKind::Regular => return Ok(out),
        DomainKind::LowBrightness => {
            let s = domain.brightness_scale.unwrap();
            out.data.iter_mut().for_each(|v| *v *= s);
        }
        DomainKind::Smoke => {
            let opacity = domain.smoke_opacity.unwrap();
            let noise = value_noise(w, h, 64.0, domain.noise_octaves.unwrap(), &mut rng);
            let smoke = [0.86, 0.86, 0.88];
            for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
                let a = opacity * noise[i];
                for c in 0..3 {
                    px[c] = (1.0 - a) * px[c] + a * smoke[c];
                }
            }
        }
        DomainKind::Blood => {
            let count = domain.blob_count.unwrap();
            let r = domain.blob_radius_px.unwrap() as f64;
            let background: Vec<usize> = (0..w * h).filter(|&i| !gt_mask.data[i]).collect();
            let blood = [0.42, 0.04, 0.05];
            for _ in 0..count {
                if background.is_empty() {
                    break;
                }
                let center = background[rng.random_range(0..background.len())];
                let (cx, cy) = ((center % w) as f64 + 0.5, (center / w) as f64 + 0.5);
                let radius = r * rng.random_range(0.7..1.3);
                let x0 = (cx - radius - 1.0).max(0.0) as usize;
                let x1 = ((cx + radius + 1.0) as usize).min(w - 1);
                let y0 = (cy - radius - 1.0).max(0.0) as usize;
                let y1 = ((cy + radius + 1.0) as usize).min(h - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                        // Opaque core with a one-pixel soft rim.
                        let a = 0.9 * (radius + 0.5 - d).clamp(0.0, 1.0);
                        if a > 0.0 {
                            let i = 3 * (y * w + x);
                            for c in 0..3 {
                                out.data[i + c] = (1.0 - a) * out.data[i + c] + a * blood[c];
                            }
                        }
                    }
                }
            }
        }
        DomainKind::BackgroundChange => {
            let alt = background_image(domain.background_id.as_deref().unwrap(), w, h)?;
            for i in 0..w * h {
                if !gt_mask.data[i] {
                    out.data[3 * i..3 * i + 3].copy_from_slice(&alt.data[3 * i..3 * i + 3]);
                }
            }
        }
    }
    out.clamp01();
    Ok(out)
}

/// One generated frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub observed_image: Image,
    pub gt_mask: Mask,
    pub gt_joints: JointConfig,
    pub measured_joints: JointConfig,
    pub domain: DomainSpec,
}

/// Scene setup shared by every frame of a sequence.
#[derive(Clone, Debug)]
pub struct Scene<'a> {
    pub chain: &'a DhChain,
    pub camera: &'a PinholeCamera,
    pub light: &'a PointLight,
    pub render: SoftRenderConfig,
}

impl<'a> Scene<'a> {
    pub fn new(chain: &'a DhChain, camera: &'a PinholeCamera, light: &'a PointLight) -> Self {
        Self {
            chain,
            camera,
            light,
            render: SoftRenderConfig::for_camera(camera),
        }
    }

    /// The pixel-wise mean of the uncorrupted backgrounds. Every frame is
    /// shot against the same texture, so this is that texture.
    pub fn mean_background(&self) -> Result<MeanBackground> {
        let bg = background_image(DEFAULT_BACKGROUND, self.camera.width, self.camera.height)?;
        mean_background(&[bg])
    }

    /// Uncorrupted observation: the tool rendered at `gt` over the regular
    /// background.
    pub fn clean_observation(&self, gt: &JointConfig, bg: &MeanBackground) -> Result<Image> {
        let mesh = self.chain.pose_meshes(gt)?;
        let rendered = soft_shade(&mesh, self.camera, self.light, &self.render)?;
        let mut img = compose_hybrid(&rendered, bg)?;
        img.clamp01();
        Ok(img)
    }

    pub fn gt_mask(&self, gt: &JointConfig) -> Result<Mask> {
        let mesh = self.chain.pose_meshes(gt)?;
        match hard_rasterize(&mesh, self.camera) {
            Err(Error::AllBehindCamera) => Ok(Mask::empty(self.camera.width, self.camera.height)),
            other => other,
        }
    }

    /// Generates `n_frames` frames in memory, in frame order.
    pub fn generate_frames(&self, n_frames: usize, error_deg: f64, domain: &DomainSpec, seed: u64) -> Result<(Vec<Frame>, MeanBackground)> {
        domain.validate()?;
        let trajectory = generate_trajectory(self.chain, n_frames, seed)?;
        let bg = self.mean_background()?;
        let frames = trajectory
            .into_par_iter()
            .enumerate()
            .map(|(i, gt)| {
                let measured = frame_perturbation(self.chain, &gt, error_deg, seed, i)?;
                let gt_mask = self.gt_mask(&gt)?;
                let clean = self.clean_observation(&gt, &bg)?;
                let observed = corrupt(&clean, &gt_mask, domain, i)?;
                Ok(Frame {
                    index: i,
                    observed_image: observed,
                    gt_mask,
                    gt_joints: gt,
                    measured_joints: measured,
                    domain: domain.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((frames, bg))
    }
}

/// Manifest entry of one frame. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: usize,
    pub observed: String,
    pub observed_pfm: String,
    pub mask: String,
    pub gt_joints: Vec<f64>,
    pub measured_joints: Vec<f64>,
    pub domain: DomainSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationInfo {
    pub model: String,
    pub magnitude_deg: f64,
    pub prismatic_m: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub chain_file: String,
    pub camera: PinholeCamera,
    pub light: PointLight,
    pub render: SoftRenderConfig,
    /// Mean background as a 3-channel PFM.
    pub background: String,
    pub seed: u64,
    pub error_deg: f64,
    pub perturbation: PerturbationInfo,
    pub domain: DomainSpec,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn resolve(manifest_path: &Path, rel: &str) -> PathBuf {
        manifest_path.parent().unwrap_or_else(|| Path::new(".")).join(rel)
    }
}

/// A generated sequence read back from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub chain: DhChain,
    pub background: MeanBackground,
    /// Observed images come from the PFM copies, so no 8-bit rounding.
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = Manifest::load(manifest_path)?;
        let chain = DhChain::load(Manifest::resolve(manifest_path, &manifest.chain_file))?;
        let background = MeanBackground {
            image: Image::load_pfm(Manifest::resolve(manifest_path, &manifest.background))?,
        };
        let frames = manifest
            .frames
            .iter()
            .map(|r| {
                Ok(Frame {
                    index: r.index,
                    observed_image: Image::load_pfm(Manifest::resolve(manifest_path, &r.observed_pfm))?,
                    gt_mask: Mask::load_png(Manifest::resolve(manifest_path, &r.mask))?,
                    gt_joints: JointConfig::new(r.gt_joints.clone()),
                    measured_joints: JointConfig::new(r.measured_joints.clone()),
                    domain: r.domain.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            manifest,
            chain,
            background,
            frames,
        })
    }
}

/// Ground truth and measured joints of a whole sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinematicsLog {
    pub gt_joints: Vec<Vec<f64>>,
    pub measured_joints: Vec<Vec<f64>>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes a sequence to `out_dir`: per-frame observed PNG and PFM, mask PNG,
/// `kinematics.json`, the chain, the mean background and `manifest.json`.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    chain: &DhChain,
    camera: &PinholeCamera,
    light: &PointLight,
    n_frames: usize,
    error_deg: f64,
    domain: &DomainSpec,
    seed: u64,
    out_dir: &Path,
) -> Result<(PathBuf, Manifest)> {
    let scene = Scene::new(chain, camera, light);
    let (frames, bg) = scene.generate_frames(n_frames, error_deg, domain, seed)?;
    let frame_dir = out_dir.join("frames");
    std::fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
    let chain_path = chain.save(out_dir.join("chain"))?;
    bg.image.save_pfm(out_dir.join("background_mean.pfm"))?;

    let records = frames
        .par_iter()
        .map(|f| {
            let stem = format!("{:06}", f.index);
            let rec = FrameRecord {
                index: f.index,
                observed: format!("frames/{stem}_observed.png"),
                observed_pfm: format!("frames/{stem}_observed.pfm"),
                mask: format!("frames/{stem}_mask.png"),
                gt_joints: f.gt_joints.0.clone(),
                measured_joints: f.measured_joints.0.clone(),
                domain: f.domain.clone(),
            };
            f.observed_image.save_png(out_dir.join(&rec.observed))?;
            f.observed_image.save_pfm(out_dir.join(&rec.observed_pfm))?;
            f.gt_mask.save_png(out_dir.join(&rec.mask))?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;

    write_json(
        &out_dir.join("kinematics.json"),
        &KinematicsLog {
            gt_joints: frames.iter().map(|f| f.gt_joints.0.clone()).collect(),
            measured_joints: frames.iter().map(|f| f.measured_joints.0.clone()).collect(),
        },
    )?;
    let manifest = Manifest {
        chain_file: relative(out_dir, &chain_path),
        camera: camera.clone(),
        light: *light,
        render: scene.render,
        background: "background_mean.pfm".into(),
        seed,
        error_deg,
        perturbation: PerturbationInfo {
            model: "uniform".into(),
            magnitude_deg: error_deg,
            prismatic_m: error_deg / 100.0,
            note: "independent uniform per-joint offsets; a stand-in for real measurement error of unknown distribution".into(),
        },
        domain: domain.clone(),
        frames: records,
    };
    let path = out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok((path, manifest))
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}
