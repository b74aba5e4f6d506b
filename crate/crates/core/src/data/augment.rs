//! Training-time augmentation chain.
//!
//! Applied in this order: horizontal mirror (Bernoulli), additive Gaussian
//! noise then clip, contrast scale, brightness shift then clip, rotation by
//! an angle drawn from a fixed set (bilinear, zero fill).

use crate::data::image::{clip01, ImageF};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub noise_std: f64,
    pub contrast_scale: f64,
    pub brightness_delta: f64,
    /// Degrees, counter-clockwise as displayed.
    pub rotation_set: Vec<f64>,
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.0023,
            contrast_scale: 0.79,
            brightness_delta: 0.24,
            rotation_set: vec![-13.0, -9.0, 9.0, 13.0],
            flip_probability: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every step disabled; the chain returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            contrast_scale: 1.0,
            brightness_delta: 0.0,
            rotation_set: vec![0.0],
            flip_probability: 0.0,
            seed: 0,
        }
    }
}

/// Mirror along the vertical axis.
pub fn hflip(img: &ImageF) -> ImageF {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let src = img.values();
    let mut out = img.clone();
    let dst = out.values_mut();
    for y in 0..h {
        for x in 0..w {
            let (s, d) = ((y * w + x) * c, (y * w + (w - 1 - x)) * c);
            dst[d..d + c].copy_from_slice(&src[s..s + c]);
        }
    }
    out
}

/// Adds `N(0, std²)` per value, then clips to `[0, 1]`.
pub fn add_gaussian_noise(img: &ImageF, std: f64, rng: &mut Rng) -> ImageF {
    let mut out = img.clone();
    for v in out.values_mut() {
        *v = clip01(*v + std * rng.normal());
    }
    out
}

/// `clip(scale·v + delta)` per value.
pub fn contrast_brightness(img: &ImageF, scale: f64, delta: f64) -> ImageF {
    let mut out = img.clone();
    for v in out.values_mut() {
        *v = clip01(scale * *v + delta);
    }
    out
}

/// Rotates about the image centre `((w−1)/2, (h−1)/2)` by `degrees`
/// (counter-clockwise as displayed). Each output pixel samples the source
/// bilinearly; neighbours outside the image count as 0.
pub fn rotate(img: &ImageF, degrees: f64) -> ImageF {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let fetch = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            img.get(y as usize, x as usize, ch)
        }
    };
    let mut values = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            let (fx, fy) = (sx.floor(), sy.floor());
            let (tx, ty) = (sx - fx, sy - fy);
            let (x0, y0) = (fx as isize, fy as isize);
            for ch in 0..c {
                let top = (1.0 - tx) * fetch(y0, x0, ch) + tx * fetch(y0, x0 + 1, ch);
                let bottom = (1.0 - tx) * fetch(y0 + 1, x0, ch) + tx * fetch(y0 + 1, x0 + 1, ch);
                values.push(clip01((1.0 - ty) * top + ty * bottom));
            }
        }
    }
    ImageF::new(h, w, c, values).expect("rotated values are clipped")
}

/// Runs the full chain. Random draws, in order: one uniform for the flip
/// (skipped when `flip_probability` is 0), one normal per value (skipped
/// when `noise_std` is 0), one `below(len)` for the angle (skipped when the
/// set has a single entry).
pub fn augment_chain(img: &ImageF, cfg: &AugmentConfig, rng: &mut Rng) -> ImageF {
    let mut out = if cfg.flip_probability > 0.0 && rng.bernoulli(cfg.flip_probability) {
        hflip(img)
    } else {
        img.clone()
    };
    if cfg.noise_std > 0.0 {
        out = add_gaussian_noise(&out, cfg.noise_std, rng);
    }
    if cfg.contrast_scale != 1.0 || cfg.brightness_delta != 0.0 {
        out = contrast_brightness(&out, cfg.contrast_scale, cfg.brightness_delta);
    }
    let angle = match cfg.rotation_set.len() {
        0 => 0.0,
        1 => cfg.rotation_set[0],
        n => cfg.rotation_set[rng.below(n as u64) as usize],
    };
    rotate(&out, angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageF {
        let n = h * w;
        ImageF::new(h, w, 1, (0..n).map(|i| i as f64 / (n - 1) as f64).collect()).unwrap()
    }

    fn disk(size: usize, radius: f64) -> ImageF {
        let c = (size as f64 - 1.0) / 2.0;
        let values = (0..size * size)
            .map(|i| {
                let (y, x) = ((i / size) as f64, (i % size) as f64);
                if (x - c).hypot(y - c) <= radius { 1.0 } else { 0.0 }
            })
            .collect();
        ImageF::new(size, size, 1, values).unwrap()
    }

    #[test]
    fn contrast_brightness_constants() {
        let cfg = AugmentConfig {
            noise_std: 0.0,
            flip_probability: 0.0,
            rotation_set: vec![0.0],
            ..AugmentConfig::default()
        };
        let im = ImageF::new(1, 3, 1, vec![0.5, 1.0, 0.0]).unwrap();
        let out = augment_chain(&im, &cfg, &mut Rng::new(1));
        assert!((out.values()[0] - 0.635).abs() < 1e-12);
        assert_eq!(out.values()[1], 1.0);
        assert!((out.values()[2] - 0.24).abs() < 1e-12);
    }

    #[test]
    fn flip_is_involution() {
        let im = ImageF::new(2, 3, 3, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        assert_ne!(hflip(&im), im);
        assert_eq!(hflip(&hflip(&im)), im);
        assert_eq!(hflip(&im).get(0, 0, 2), im.get(0, 2, 2));
    }

    #[test]
    fn disabled_chain_is_identity() {
        let im = ramp(7, 5);
        let out = augment_chain(&im, &AugmentConfig::identity(), &mut Rng::new(3));
        assert_eq!(out, im);
    }

    #[test]
    fn full_chain_is_deterministic_and_in_range() {
        let im = ramp(16, 16);
        let cfg = AugmentConfig::default();
        let a = augment_chain(&im, &cfg, &mut Rng::new(42));
        let b = augment_chain(&im, &cfg, &mut Rng::new(42));
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rotation_round_trip_on_disk() {
        let im = disk(64, 18.0);
        let back = rotate(&rotate(&im, 9.0), -9.0);
        let mae = im
            .values()
            .iter()
            .zip(back.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / im.values().len() as f64;
        assert!(mae <= 0.02, "mae {mae}");
    }

    #[test]
    fn rotation_direction() {
        // A bright pixel just below the centre moves to the right of it
        // under a 90° counter-clockwise turn.
        let mut v = vec![0.0; 25];
        v[3 * 5 + 2] = 1.0;
        let im = ImageF::new(5, 5, 1, v).unwrap();
        let r = rotate(&im, 90.0);
        assert!((r.get(2, 3, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_fills_corners_with_zero() {
        let im = ImageF::filled(32, 32, 1, 1.0);
        let r = rotate(&im, 13.0);
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert!((r.get(16, 16, 0) - 1.0).abs() < 1e-12);
    }
}
