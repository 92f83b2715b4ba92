//! Attention dilation, the attentional cosine-similarity loss and smooth-L1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::image::{Mask, Plane};

/// Loss parameters shared by the optimizer and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossParams {
    /// Silhouette binarization threshold for the attention map.
    pub threshold: f64,
    /// Disc radius (px) of the attention dilation.
    pub dilation_radius: usize,
    /// Smooth-L1 transition point.
    pub beta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            dilation_radius: 11,
            beta: 1.0,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config {
                field: "threshold".into(),
                message: format!("must lie in (0, 1), got {}", self.threshold),
            });
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config {
                field: "beta".into(),
                message: format!("must be positive, got {}", self.beta),
            });
        }
        Ok(())
    }
}

/// Binary region of interest. Treated as a constant by the loss gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub mask: Mask,
    pub dilation_radius: usize,
}

impl AttentionMap {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            mask: Mask {
                width,
                height,
                data: vec![true; width * height],
            },
            dilation_radius: 0,
        }
    }

    pub fn area(&self) -> usize {
        self.mask.count()
    }
}

/// Thresholds `sil` (values ≥ threshold are set) and dilates the result by
/// a Euclidean disc: a pixel is set if some seed lies within `radius`.
pub fn dilate_silhouette(sil: &Plane, threshold: f64, radius: usize) -> AttentionMap {
    let (w, h) = (sil.width, sil.height);
    let seeds: Vec<bool> = sil.data.iter().map(|&v| v >= threshold).collect();
    AttentionMap {
        mask: Mask {
            width: w,
            height: h,
            data: dilate_disc(&seeds, w, h, radius),
        },
        dilation_radius: radius,
    }
}

pub(crate) fn dilate_disc(seeds: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return seeds.to_vec();
    }
    // Per row, horizontal distance to the nearest seed in that row.
    let far = usize::MAX / 2;
    let mut row_dist = vec![far; w * h];
    for y in 0..h {
        let row = &seeds[y * w..(y + 1) * w];
        let dist = &mut row_dist[y * w..(y + 1) * w];
        let mut last = None;
        for x in 0..w {
            if row[x] {
                last = Some(x);
            }
            if let Some(l) = last {
                dist[x] = x - l;
            }
        }
        let mut next = None;
        for x in (0..w).rev() {
            if row[x] {
                next = Some(x);
            }
            if let Some(n) = next {
                dist[x] = dist[x].min(n - x);
            }
        }
    }
    let r2 = radius * radius;
    let half: Vec<usize> = (0..=radius).map(|dy| ((r2 - dy * dy) as f64).sqrt().floor() as usize).collect();
    let mut out = vec![false; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (y0..=y1).any(|sy| row_dist[sy * w + x] <= half[sy.abs_diff(y)]);
        }
    }
    out
}

fn check_shapes(a: &FeatureMap, b: &FeatureMap, att: &AttentionMap) -> Result<()> {
    if !a.same_shape(b) || (att.mask.width, att.mask.height) != (a.width, a.height) {
        return Err(Error::DimensionMismatch(format!(
            "features {}x{}x{} vs {}x{}x{}, attention {}x{}",
            a.channels, a.width, a.height, b.channels, b.width, b.height, att.mask.width, att.mask.height
        )));
    }
    Ok(())
}

const MIN_NORM: f64 = 1e-12;

/// `1 − Σ cos(F_obs, F_ren)·Att / (w·h)`, cosine taken along channels.
pub fn acs_loss(f_obs: &FeatureMap, f_ren: &FeatureMap, att: &AttentionMap) -> Result<f64> {
    acs_impl(f_obs, f_ren, att, false).map(|(l, _)| l)
}

/// Loss plus its gradient with respect to `f_ren`.
pub fn acs_loss_with_grad(f_obs: &FeatureMap, f_ren: &FeatureMap, att: &AttentionMap) -> Result<(f64, FeatureMap)> {
    acs_impl(f_obs, f_ren, att, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn acs_impl(f_obs: &FeatureMap, f_ren: &FeatureMap, att: &AttentionMap, want_grad: bool) -> Result<(f64, Option<FeatureMap>)> {
    check_shapes(f_obs, f_ren, att)?;
    let n = f_obs.plane_len();
    let c = f_obs.channels;
    let norm = 1.0 / n as f64;
    let mut grad = want_grad.then(|| FeatureMap::zeros(c, f_obs.width, f_obs.height));
    let mut total = 0.0;
    for i in 0..n {
        if !att.mask.data[i] {
            continue;
        }
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let a = f_obs.data[k * n + i];
            let b = f_ren.data[k * n + i];
            ab += a * b;
            aa += a * a;
            bb += b * b;
        }
        let (na, nb) = (aa.sqrt(), bb.sqrt());
        if na < MIN_NORM || nb < MIN_NORM {
            continue;
        }
        let cos = ab / (na * nb);
        total += cos;
        if let Some(g) = grad.as_mut() {
            // d cos / d b = a / (|a||b|) − cos · b / |b|²
            let s1 = -norm / (na * nb);
            let s2 = norm * cos / bb;
            for k in 0..c {
                g.data[k * n + i] = s1 * f_obs.data[k * n + i] + s2 * f_ren.data[k * n + i];
            }
        }
    }
    Ok((1.0 - total * norm, grad))
}

/// Mean smooth-L1 of `pred − target` and its gradient with respect to `pred`.
pub fn smooth_l1_loss(pred: &[f64], target: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if pred.is_empty() {
        return Err(Error::EmptyList);
    }
    let inv_n = 1.0 / pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let e = p - t;
            if e.abs() < beta {
                total += 0.5 * e * e / beta;
                e / beta * inv_n
            } else {
                total += e.abs() - 0.5 * beta;
                e.signum() * inv_n
            }
        })
        .collect();
    Ok((total * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmap(c: usize, w: usize, h: usize, data: Vec<f64>) -> FeatureMap {
        FeatureMap {
            channels: c,
            width: w,
            height: h,
            data,
        }
    }

    #[test]
    fn disc_dilation_of_one_pixel() {
        let mut sil = Plane::filled(5, 5, 0.0);
        sil.data[12] = 1.0;
        let att = dilate_silhouette(&sil, 0.5, 1);
        let set: Vec<usize> = (0..25).filter(|&i| att.mask.data[i]).collect();
        assert_eq!(set, vec![7, 11, 12, 13, 17]);
        let att2 = dilate_silhouette(&sil, 0.5, 2);
        // radius 2 disc: 13 lattice points
        assert_eq!(att2.area(), 13);
    }

    #[test]
    fn dilation_radius_zero_and_empty() {
        let sil = Plane::from_data(3, 1, vec![0.2, 0.5, 0.9]).unwrap();
        assert_eq!(dilate_silhouette(&sil, 0.5, 0).mask.data, vec![false, true, true]);
        let zero = Plane::filled(4, 4, 0.0);
        assert_eq!(dilate_silhouette(&zero, 0.5, 3).area(), 0);
    }

    #[test]
    fn acs_examples() {
        let f = fmap(2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0, 2.0, 1.0]);
        assert!(acs_loss(&f, &f, &AttentionMap::full(2, 2)).unwrap().abs() < 1e-15);
        let mut half = AttentionMap::full(2, 2);
        half.mask.data = vec![true, false, true, false];
        assert!((acs_loss(&f, &f, &half).unwrap() - 0.5).abs() < 1e-15);
        let a = fmap(2, 2, 1, vec![1.0, 1.0, 0.0, 0.0]);
        let b = fmap(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]);
        assert!((acs_loss(&a, &b, &AttentionMap::full(2, 1)).unwrap() - 1.0).abs() < 1e-15);
        let wrong = fmap(1, 2, 1, vec![1.0, 1.0]);
        assert!(matches!(acs_loss(&a, &wrong, &AttentionMap::full(2, 1)), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1_loss(&[0.3, 0.4], &[0.3, 0.4], 1.0).unwrap().0, 0.0);
        let beta = 0.7;
        assert!((smooth_l1_loss(&[beta], &[0.0], beta).unwrap().0 - 0.5 * beta).abs() < 1e-15);
        assert!((smooth_l1_loss(&[2.0 * beta], &[0.0], beta).unwrap().0 - 1.5 * beta).abs() < 1e-15);
        assert!(smooth_l1_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(smooth_l1_loss(&[1.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn smooth_l1_is_c1_at_beta() {
        let beta = 0.3;
        let left = smooth_l1_loss(&[beta - 1e-12], &[0.0], beta).unwrap().1[0];
        let right = smooth_l1_loss(&[beta + 1e-12], &[0.0], beta).unwrap().1[0];
        assert!((left - 1.0).abs() < 1e-9 && (right - 1.0).abs() < 1e-9);
    }

    fn brute_dilate(seeds: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
        let r2 = (r * r) as isize;
        (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as isize, (i / w) as isize);
                (0..w * h).any(|j| {
                    let (sx, sy) = ((j % w) as isize, (j / w) as isize);
                    seeds[j] && (sx - x).pow(2) + (sy - y).pow(2) <= r2
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn dilation_matches_brute_force(
            w in 1usize..9, h in 1usize..9, r in 0usize..5,
            bits in prop::collection::vec(prop::bool::weighted(0.15), 64),
        ) {
            let seeds = &bits[..w * h];
            prop_assert_eq!(dilate_disc(seeds, w, h, r), brute_dilate(seeds, w, h, r));
        }

        #[test]
        fn acs_range_and_gradient(
            data in prop::collection::vec(-1.0..1.0f64, 2 * 3 * 4 * 3),
            att_bits in prop::collection::vec(any::<bool>(), 12),
        ) {
            let (c, w, h) = (3, 4, 3);
            let a = fmap(c, w, h, data[..36].to_vec());
            let b = fmap(c, w, h, data[36..].to_vec());
            let mut att = AttentionMap::full(w, h);
            att.mask.data = att_bits;
            let (l, g) = acs_loss_with_grad(&a, &b, &att).unwrap();
            prop_assert!((0.0..=2.0).contains(&l));
            let eps = 1e-6;
            for i in 0..b.data.len() {
                let mut p = b.clone();
                let mut m = b.clone();
                p.data[i] += eps;
                m.data[i] -= eps;
                let fd = (acs_loss(&a, &p, &att).unwrap() - acs_loss(&a, &m, &att).unwrap()) / (2.0 * eps);
                prop_assert!((fd - g.data[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{} vs {}", fd, g.data[i]);
            }
        }

        #[test]
        fn acs_self_similarity_is_zero(data in prop::collection::vec(0.1..2.0f64, 2 * 5 * 2)) {
            let f = fmap(2, 5, 2, data);
            prop_assert!(acs_loss(&f, &f, &AttentionMap::full(5, 2)).unwrap().abs() < 1e-12);
        }

        #[test]
        fn smooth_l1_gradient(pred in prop::collection::vec(-3.0..3.0f64, 6), target in prop::collection::vec(-3.0..3.0f64, 6), beta in 0.1..2.0f64) {
            let (_, g) = smooth_l1_loss(&pred, &target, beta).unwrap();
            let eps = 1e-7;
            for i in 0..pred.len() {
                // skip the kink-free but curvature-discontinuous boundary
                if ((pred[i] - target[i]).abs() - beta).abs() < 1e-5 {
                    continue;
                }
                let mut p = pred.clone();
                let mut m = pred.clone();
                p[i] += eps;
                m[i] -= eps;
                let fd = (smooth_l1_loss(&p, &target, beta).unwrap().0 - smooth_l1_loss(&m, &target, beta).unwrap().0) / (2.0 * eps);
                prop_assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3));
            }
        }
    }
}
