//! Feature extraction for observed and rendered images, hybrid composition
//! onto the mean background, and the mean background itself.
//!
//! Built-in extractors are linear, so their VJP is the adjoint operator and
//! does not depend on the input image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_pfm, write_pfm, Image, Plane};
use crate::raster::SoftRenderOutput;

/// Gaussian scales (px) of the filter bank.
pub const FILTERBANK_SCALES: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const DERIVATIVE_GAIN: f64 = 1.0;

/// C×H×W planar feature tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.width == other.width && self.height == other.height
    }

    /// Writes the channels stacked vertically into one single-channel PFM
    /// (height `C·H`) plus a JSON sidecar declaring the layout.
    pub fn save_stack(&self, pfm: &Path, sidecar: &Path, render_extractor: FeatureExtractorSpec) -> Result<()> {
        write_pfm(pfm, self.width, self.height * self.channels, 1, &self.data)?;
        let meta = ExternalSidecar {
            channels: self.channels,
            width: self.width,
            height: self.height,
            file: pfm
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            render_extractor: Box::new(render_extractor),
        };
        let text = serde_json::to_string_pretty(&meta)?;
        std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
    }
}

/// Sidecar describing an externally computed feature stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSidecar {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    /// Stacked PFM, relative to the sidecar.
    pub file: String,
    /// Differentiable extractor applied to rendered images; must produce
    /// the same channel count.
    pub render_extractor: Box<FeatureExtractorSpec>,
}

impl ExternalSidecar {
    pub fn load(path: &Path) -> Result<ExternalSidecar> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn load_features(&self, sidecar_path: &Path) -> Result<FeatureMap> {
        let dir = sidecar_path.parent().unwrap_or_else(|| Path::new("."));
        let (w, h, c, data) = read_pfm(&dir.join(&self.file))?;
        if c != 1 || w != self.width || h != self.height * self.channels {
            return Err(Error::DimensionMismatch(format!(
                "external stack is {w}x{h}x{c}, sidecar declares {} channels of {}x{}",
                self.channels, self.width, self.height
            )));
        }
        Ok(FeatureMap {
            channels: self.channels,
            width: self.width,
            height: self.height,
            data,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureExtractorSpec {
    /// Raw RGB channels.
    Identity,
    /// Gaussian luminance plus x/y derivative-of-Gaussian at five scales.
    #[default]
    Filterbank,
    /// Precomputed maps for observed images; rendered images go through the
    /// sidecar's `render_extractor`.
    External { sidecar: PathBuf },
}

impl FeatureExtractorSpec {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "filterbank" => Ok(Self::Filterbank),
            other => Err(Error::UnknownExtractor(other.to_string())),
        }
    }

    pub fn channels(&self) -> Result<usize> {
        match self {
            Self::Identity => Ok(3),
            Self::Filterbank => Ok(3 * FILTERBANK_SCALES.len()),
            Self::External { sidecar } => Ok(ExternalSidecar::load(sidecar)?.channels),
        }
    }

    /// The differentiable extractor used on rendered images.
    pub fn render_side(&self) -> Result<FeatureExtractorSpec> {
        match self {
            Self::External { sidecar } => {
                let meta = ExternalSidecar::load(sidecar)?;
                let inner = *meta.render_extractor;
                if matches!(inner, Self::External { .. }) {
                    return Err(Error::invalid("render_extractor cannot itself be external"));
                }
                if inner.channels()? != meta.channels {
                    return Err(Error::DimensionMismatch(format!(
                        "external maps have {} channels but the render extractor yields {}",
                        meta.channels,
                        inner.channels()?
                    )));
                }
                Ok(inner)
            }
            other => Ok(other.clone()),
        }
    }
}

/// Pixel-wise average background of a set of images.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanBackground {
    pub image: Image,
}

pub fn mean_background(images: &[Image]) -> Result<MeanBackground> {
    let first = images.first().ok_or(Error::EmptyList)?;
    let mut acc = vec![0.0; first.data.len()];
    for img in images {
        if img.dims() != first.dims() {
            return Err(Error::DimensionMismatch(format!(
                "background {}x{} differs from {}x{}",
                img.width, img.height, first.width, first.height
            )));
        }
        for (a, v) in acc.iter_mut().zip(&img.data) {
            *a += v;
        }
    }
    let n = images.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(MeanBackground {
        image: Image::from_data(first.width, first.height, acc)?,
    })
}

fn check_hybrid_dims(image: &Image, sil: &Plane, bg: &MeanBackground) -> Result<()> {
    if image.dims() != bg.image.dims() || (sil.width, sil.height) != image.dims() {
        return Err(Error::DimensionMismatch(format!(
            "render {}x{} / silhouette {}x{} / background {}x{}",
            image.width, image.height, sil.width, sil.height, bg.image.width, bg.image.height
        )));
    }
    Ok(())
}

/// `S·Î + (1 − S)·BG` per pixel and channel.
pub fn compose_hybrid_parts(image: &Image, sil: &Plane, bg: &MeanBackground) -> Result<Image> {
    check_hybrid_dims(image, sil, bg)?;
    let data = image
        .data
        .iter()
        .zip(&bg.image.data)
        .enumerate()
        .map(|(i, (&r, &b))| {
            let s = sil.data[i / 3];
            s * r + (1.0 - s) * b
        })
        .collect();
    Image::from_data(image.width, image.height, data)
}

pub fn compose_hybrid(rendered: &SoftRenderOutput, bg: &MeanBackground) -> Result<Image> {
    compose_hybrid_parts(&rendered.image, &rendered.silhouette, bg)
}

/// Cotangents `(d_image, d_silhouette)` of the hybrid composite.
pub fn compose_hybrid_vjp(image: &Image, sil: &Plane, bg: &MeanBackground, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_hybrid_dims(image, sil, bg)?;
    if d_out.len() != image.data.len() {
        return Err(Error::DimensionMismatch("hybrid cotangent size".into()));
    }
    let mut d_img = vec![0.0; d_out.len()];
    let mut d_sil = vec![0.0; sil.data.len()];
    for (i, &g) in d_out.iter().enumerate() {
        let s = sil.data[i / 3];
        d_img[i] = g * s;
        d_sil[i / 3] += g * (image.data[i] - bg.image.data[i]);
    }
    Ok((d_img, d_sil))
}

/// Runs an extractor. For `External` the stored maps are returned after a
/// dimension check against `image`.
pub fn extract_features(image: &Image, spec: &FeatureExtractorSpec) -> Result<FeatureMap> {
    if !image.is_finite() {
        return Err(Error::invalid("image contains non-finite values"));
    }
    match spec {
        FeatureExtractorSpec::Identity => Ok(identity_forward(image)),
        FeatureExtractorSpec::Filterbank => Ok(filterbank_forward(image)),
        FeatureExtractorSpec::External { sidecar } => {
            let meta = ExternalSidecar::load(sidecar)?;
            let f = meta.load_features(sidecar)?;
            if (f.width, f.height) != image.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "external maps are {}x{}, image is {}x{}",
                    f.width, f.height, image.width, image.height
                )));
            }
            Ok(f)
        }
    }
}

/// Image cotangent (H×W×3) for a feature cotangent.
pub fn extract_features_vjp(spec: &FeatureExtractorSpec, d_features: &FeatureMap) -> Result<Vec<f64>> {
    match spec {
        FeatureExtractorSpec::Identity => {
            if d_features.channels != 3 {
                return Err(Error::DimensionMismatch("identity features have 3 channels".into()));
            }
            Ok(identity_adjoint(d_features))
        }
        FeatureExtractorSpec::Filterbank => {
            if d_features.channels != 3 * FILTERBANK_SCALES.len() {
                return Err(Error::DimensionMismatch(format!("filterbank features have {} channels", 3 * FILTERBANK_SCALES.len())));
            }
            Ok(filterbank_adjoint(d_features))
        }
        FeatureExtractorSpec::External { .. } => {
            Err(Error::invalid("external feature maps have no VJP; use the render-side extractor"))
        }
    }
}

fn identity_forward(image: &Image) -> FeatureMap {
    let (w, h) = image.dims();
    let n = w * h;
    let mut f = FeatureMap::zeros(3, w, h);
    for i in 0..n {
        for c in 0..3 {
            f.data[c * n + i] = image.data[3 * i + c];
        }
    }
    f
}

fn identity_adjoint(d: &FeatureMap) -> Vec<f64> {
    let n = d.plane_len();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            out[3 * i + c] = d.data[c * n + i];
        }
    }
    out
}

/// Mirror index into `[0, n)` without repeating the edge sample.
#[inline]
pub(crate) fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized Gaussian and derivative-of-Gaussian taps over `[-r, r]`.
/// The derivative taps respond with slope 1 to a unit ramp.
pub(crate) fn gaussian_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as isize;
    let g: Vec<f64> = (-r..=r).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|v| v / sum).collect();
    let moment: f64 = (-r..=r).zip(&g).map(|(t, v)| (t * t) as f64 * v).sum();
    let dg = (-r..=r).zip(&g).map(|(t, v)| t as f64 * v / moment).collect();
    (g, dg)
}

/// Correlation along rows: `out[y][x] = Σ_t src[y][reflect(x + t)] · k[t]`.
fn corr_rows(src: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = k.len() / 2;
    // Interior columns are done tap by tap so the inner loop vectorizes.
    let (lo, hi) = if w > 2 * r { (r, w - r) } else { (w, w) };
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        if hi > lo {
            dst[lo..hi].iter_mut().for_each(|v| *v = 0.0);
            for (j, kv) in k.iter().enumerate() {
                for (d, s) in dst[lo..hi].iter_mut().zip(&row[j..j + (hi - lo)]) {
                    *d += s * kv;
                }
            }
        }
        for x in (0..lo.min(w)).chain(hi.max(lo)..w) {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += row[reflect(x as isize + j as isize - r as isize, w)] * kv;
            }
            dst[x] = acc;
        }
    }
}

/// Adjoint of [`corr_rows`], accumulated into `out`.
fn corr_rows_adjoint(g: &[f64], w: usize, h: usize, k: &[f64], out: &mut [f64]) {
    let r = (k.len() / 2) as isize;
    for y in 0..h {
        let grow = &g[y * w..(y + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &gv) in grow.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            let xi = x as isize;
            if xi >= r && xi + r < w as isize {
                let base = (xi - r) as usize;
                for (j, kv) in k.iter().enumerate() {
                    dst[base + j] += gv * kv;
                }
            } else {
                for (j, kv) in k.iter().enumerate() {
                    dst[reflect(xi + j as isize - r, w)] += gv * kv;
                }
            }
        }
    }
}

/// Correlation along columns with several kernels of equal length at
/// once, one output per kernel.
fn corr_cols(src: &[f64], w: usize, h: usize, ks: &[&[f64]], outs: &mut [&mut [f64]]) {
    let r = (ks[0].len() / 2) as isize;
    for out in outs.iter_mut() {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    for y in 0..h {
        for j in 0..ks[0].len() {
            let sy = reflect(y as isize + j as isize - r, h);
            let srow = &src[sy * w..(sy + 1) * w];
            for (k, out) in ks.iter().zip(outs.iter_mut()) {
                let kv = k[j];
                for (d, s) in out[y * w..(y + 1) * w].iter_mut().zip(srow) {
                    *d += s * kv;
                }
            }
        }
    }
}

/// Adjoint of [`corr_cols`]: all kernels' contributions are accumulated
/// into the one `out`.
fn corr_cols_adjoint(gs: &[&[f64]], w: usize, h: usize, ks: &[&[f64]], out: &mut [f64]) {
    let r = (ks[0].len() / 2) as isize;
    for y in 0..h {
        for j in 0..ks[0].len() {
            let sy = reflect(y as isize + j as isize - r, h);
            let dst = &mut out[sy * w..(sy + 1) * w];
            for (g, k) in gs.iter().zip(ks) {
                let kv = k[j];
                for (d, gv) in dst.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                    *d += gv * kv;
                }
            }
        }
    }
}

pub(crate) fn luminance(image: &Image) -> Vec<f64> {
    image
        .data
        .chunks_exact(3)
        .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
        .collect()
}

fn filterbank_forward(image: &Image) -> FeatureMap {
    let (w, h) = image.dims();
    let n = w * h;
    let mut y = luminance(image);
    let mean = y.iter().sum::<f64>() / n as f64;
    y.iter_mut().for_each(|v| *v -= mean);
    let mut f = FeatureMap::zeros(3 * FILTERBANK_SCALES.len(), w, h);
    let mut smooth_x = vec![0.0; n];
    let mut deriv_x = vec![0.0; n];
    for (s, &sigma) in FILTERBANK_SCALES.iter().enumerate() {
        let (g, dg) = scaled_kernels(sigma);
        corr_rows(&y, w, h, &g, &mut smooth_x);
        corr_rows(&y, w, h, &dg, &mut deriv_x);
        let (l, rest) = f.data[3 * s * n..3 * (s + 1) * n].split_at_mut(n);
        let (dx, dy) = rest.split_at_mut(n);
        corr_cols(&smooth_x, w, h, &[&g, &dg], &mut [l, dy]);
        corr_cols(&deriv_x, w, h, &[&g], &mut [dx]);
    }
    f
}

fn filterbank_adjoint(d: &FeatureMap) -> Vec<f64> {
    let (w, h) = (d.width, d.height);
    let n = w * h;
    let mut d_lum = vec![0.0; n];
    let mut d_smooth_x = vec![0.0; n];
    let mut d_deriv_x = vec![0.0; n];
    for (s, &sigma) in FILTERBANK_SCALES.iter().enumerate() {
        let (g, dg) = scaled_kernels(sigma);
        d_smooth_x.iter_mut().for_each(|v| *v = 0.0);
        d_deriv_x.iter_mut().for_each(|v| *v = 0.0);
        corr_cols_adjoint(&[d.channel(3 * s), d.channel(3 * s + 2)], w, h, &[&g, &dg], &mut d_smooth_x);
        corr_cols_adjoint(&[d.channel(3 * s + 1)], w, h, &[&g], &mut d_deriv_x);
        corr_rows_adjoint(&d_smooth_x, w, h, &g, &mut d_lum);
        corr_rows_adjoint(&d_deriv_x, w, h, &dg, &mut d_lum);
    }
    let mean = d_lum.iter().sum::<f64>() / n as f64;
    d_lum.iter().flat_map(|&v| [LUMA[0] * (v - mean), LUMA[1] * (v - mean), LUMA[2] * (v - mean)]).collect()
}

/// Filter-bank taps: derivatives are scale-normalized (multiplied by
/// `sigma`) so that edges weigh alike at every scale.
fn scaled_kernels(sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let (g, mut dg) = gaussian_kernels(sigma);
    dg.iter_mut().for_each(|v| *v *= sigma * DERIVATIVE_GAIN);
    (g, dg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mean_background_examples() {
        let a = Image::filled(2, 2, 0.2);
        assert_eq!(mean_background(std::slice::from_ref(&a)).unwrap().image, a);
        let b = Image::filled(2, 2, 0.6);
        let m = mean_background(&[a.clone(), b]).unwrap();
        assert!(m.image.data.iter().all(|v| (v - 0.4).abs() < 1e-15));
        let copies = vec![random_image(3, 2, 1); 5];
        let m = mean_background(&copies).unwrap();
        for (x, y) in m.image.data.iter().zip(&copies[0].data) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(mean_background(&[]), Err(Error::EmptyList)));
        assert!(matches!(mean_background(&[a, Image::filled(3, 2, 0.0)]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn hybrid_examples() {
        let img = Image::filled(2, 1, 1.0);
        let bg = MeanBackground { image: Image::filled(2, 1, 0.0) };
        let out = compose_hybrid_parts(&img, &Plane::filled(2, 1, 0.0), &bg).unwrap();
        assert_eq!(out, bg.image);
        let out = compose_hybrid_parts(&img, &Plane::filled(2, 1, 1.0), &bg).unwrap();
        assert_eq!(out, img);
        let out = compose_hybrid_parts(&img, &Plane::filled(2, 1, 0.5), &bg).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.5));
        assert!(compose_hybrid_parts(&img, &Plane::filled(1, 1, 0.5), &bg).is_err());
    }

    #[test]
    fn hybrid_vjp_matches_finite_differences() {
        let (w, h) = (4, 3);
        let img = random_image(w, h, 2);
        let bg = MeanBackground { image: random_image(w, h, 3) };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sil = Plane::from_data(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let cot: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |img: &Image, sil: &Plane| -> f64 {
            compose_hybrid_parts(img, sil, &bg).unwrap().data.iter().zip(&cot).map(|(a, b)| a * b).sum()
        };
        let (di, ds) = compose_hybrid_vjp(&img, &sil, &bg, &cot).unwrap();
        let eps = 1e-6;
        for i in [0, 5, 17] {
            let mut p = img.clone();
            let mut m = img.clone();
            p.data[i] += eps;
            m.data[i] -= eps;
            assert!(((f(&p, &sil) - f(&m, &sil)) / (2.0 * eps) - di[i]).abs() < 1e-8);
        }
        for i in [0, 7, 11] {
            let mut p = sil.clone();
            let mut m = sil.clone();
            p.data[i] += eps;
            m.data[i] -= eps;
            assert!(((f(&img, &p) - f(&img, &m)) / (2.0 * eps) - ds[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn extractor_names() {
        assert_eq!(FeatureExtractorSpec::from_name("identity").unwrap(), FeatureExtractorSpec::Identity);
        assert!(matches!(FeatureExtractorSpec::from_name("unet"), Err(Error::UnknownExtractor(_))));
    }

    #[test]
    fn identity_extractor_passes_through() {
        let img = random_image(5, 4, 7);
        let f = extract_features(&img, &FeatureExtractorSpec::Identity).unwrap();
        assert_eq!(f.channels, 3);
        for i in 0..20 {
            for c in 0..3 {
                assert_eq!(f.data[c * 20 + i], img.data[3 * i + c]);
            }
        }
    }

    #[test]
    fn filterbank_constant_image_has_zero_derivatives() {
        let img = Image::filled(16, 12, 0.37);
        let f = extract_features(&img, &FeatureExtractorSpec::Filterbank).unwrap();
        assert_eq!(f.channels, 3 * FILTERBANK_SCALES.len());
        // Luminance is centered on its mean, so a flat image maps to zero.
        for s in 0..FILTERBANK_SCALES.len() {
            assert!(f.channel(3 * s).iter().all(|v| v.abs() < 1e-12));
            assert!(f.channel(3 * s + 1).iter().all(|v| v.abs() < 1e-12));
            assert!(f.channel(3 * s + 2).iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn filterbank_vertical_step_edge() {
        // Columns 0..8 dark, 8..16 bright: the edge lies between columns 7 and 8.
        let (w, h) = (16, 16);
        let mut img = Image::filled(w, h, 0.0);
        for y in 0..h {
            for x in 8..w {
                img.set_pixel(x, y, [1.0; 3]);
            }
        }
        let f = extract_features(&img, &FeatureExtractorSpec::Filterbank).unwrap();
        let row = 8;
        // Direct discrete correlation oracle on the luminance row for sigma = 1.
        let (g, dg) = gaussian_kernels(1.0);
        let lum: Vec<f64> = (0..w).map(|x| if x >= 8 { 1.0 } else { 0.0 }).collect();
        let oracle: Vec<f64> = (0..w)
            .map(|x| (0..dg.len()).map(|j| lum[reflect(x as isize + j as isize - 3, w)] * dg[j]).sum())
            .collect();
        let gsum: f64 = g.iter().sum();
        let dx = &f.channel(1)[row * w..(row + 1) * w];
        for x in 0..w {
            assert!((dx[x] - oracle[x] * gsum).abs() < 1e-12, "col {x}");
        }
        let peak = dx.iter().cloned().fold(f64::MIN, f64::max);
        assert!((dx[7] - peak).abs() < 1e-12 && (dx[8] - peak).abs() < 1e-12);
        assert!(dx[0].abs() < 1e-12 && dx[15].abs() < 1e-12);
        // no vertical structure
        assert!(f.channel(2).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn extractors_are_linear() {
        let (w, h) = (11, 9);
        let x = random_image(w, h, 10);
        let y = random_image(w, h, 11);
        let (a, b) = (0.7, -1.3);
        let combo = Image::from_data(w, h, x.data.iter().zip(&y.data).map(|(p, q)| a * p + b * q).collect()).unwrap();
        for spec in [FeatureExtractorSpec::Identity, FeatureExtractorSpec::Filterbank] {
            let fx = extract_features(&x, &spec).unwrap();
            let fy = extract_features(&y, &spec).unwrap();
            let fc = extract_features(&combo, &spec).unwrap();
            for i in 0..fc.data.len() {
                assert!((fc.data[i] - (a * fx.data[i] + b * fy.data[i])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn filterbank_vjp_is_the_adjoint() {
        // For a linear map, <F x, g> = <x, F^T g>; finite differences of the
        // scalar <F x, g> recover the same numbers.
        let (w, h) = (13, 10);
        let x = random_image(w, h, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = FeatureMap::zeros(3 * FILTERBANK_SCALES.len(), w, h);
        g.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let adj = extract_features_vjp(&FeatureExtractorSpec::Filterbank, &g).unwrap();
        let scalar = |img: &Image| -> f64 {
            let f = extract_features(img, &FeatureExtractorSpec::Filterbank).unwrap();
            f.data.iter().zip(&g.data).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-5;
        for i in [0, 1, 2, 40, 77, 200, w * h * 3 - 1] {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data[i] += eps;
            m.data[i] -= eps;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * eps);
            assert!((fd - adj[i]).abs() / fd.abs().max(1e-6) < 1e-4, "index {i}: {fd} vs {}", adj[i]);
        }
        let lhs: f64 = extract_features(&x, &FeatureExtractorSpec::Filterbank).unwrap().data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn external_maps_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(6, 5, 30);
        let f = extract_features(&img, &FeatureExtractorSpec::Filterbank).unwrap();
        let pfm = dir.path().join("feat.pfm");
        let side = dir.path().join("feat.json");
        f.save_stack(&pfm, &side, FeatureExtractorSpec::Filterbank).unwrap();
        let spec = FeatureExtractorSpec::External { sidecar: side };
        assert_eq!(spec.channels().unwrap(), 3 * FILTERBANK_SCALES.len());
        assert_eq!(spec.render_side().unwrap(), FeatureExtractorSpec::Filterbank);
        let back = extract_features(&img, &spec).unwrap();
        for (a, b) in back.data.iter().zip(&f.data) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(extract_features(&Image::filled(3, 3, 0.0), &spec).is_err());
        assert!(extract_features_vjp(&spec, &f).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(4, 1), 0);
    }
}
