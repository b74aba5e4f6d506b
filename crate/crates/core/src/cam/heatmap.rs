use std::path::{Path, PathBuf};

use crate::data::{quantize, resize_bilinear, write_netpbm, ImageF, ImageU8};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[U, V]` map at feature-map resolution, non-negative.
    pub raw: Tensor,
    /// Upsampled to the input size and divided by its maximum.
    pub normalized: ImageF,
}

impl Heatmap {
    /// Upsamples `raw` bilinearly to `height×width` and scales it so the
    /// maximum is 1. An identically zero map stays zero. The target must be
    /// at least as large as the map.
    pub fn from_raw(raw: Tensor, height: usize, width: usize) -> Result<Self> {
        if raw.rank() != 2 {
            return Err(Error::shape("heatmap", format!("raw map must be [U, V], got {:?}", raw.shape())));
        }
        if raw.data().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::shape("heatmap", "raw map must be finite and non-negative"));
        }
        let (u, v) = (raw.shape()[0], raw.shape()[1]);
        if height < u || width < v {
            return Err(Error::shape(
                "heatmap",
                format!("cannot upsample a {u}x{v} map to {height}x{width}"),
            ));
        }
        let peak = raw.data().iter().copied().fold(0.0, f64::max);
        if peak == 0.0 {
            return Ok(Self {
                raw,
                normalized: ImageF::filled(height, width, 1, 0.0),
            });
        }
        let unit = ImageF::from_clipped(u, v, 1, raw.data().iter().map(|x| x / peak).collect())?;
        let up = resize_bilinear(&unit, height, width);
        let up_peak = up.values().iter().copied().fold(0.0, f64::max);
        let values = up.values().iter().map(|x| x / up_peak).collect();
        Ok(Self {
            raw,
            normalized: ImageF::from_clipped(height, width, 1, values)?,
        })
    }

    /// Greyscale rendering, `round(255·v)`.
    pub fn to_u8(&self) -> ImageU8 {
        self.normalized.to_u8()
    }
}

/// Blue → green → red with knots at 0, 0.5 and 1.
pub fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.5 {
        [0.0, 2.0 * v, 1.0 - 2.0 * v]
    } else {
        [2.0 * v - 1.0, 2.0 - 2.0 * v, 0.0]
    }
}

/// RGB overlay `0.5·grey(base) + 0.5·colormap(v)`, quantised per channel.
pub fn render_overlay(heatmap: &Heatmap, base: &ImageF) -> Result<ImageU8> {
    let map = &heatmap.normalized;
    if (map.height(), map.width()) != (base.height(), base.width()) {
        return Err(Error::shape(
            "render_overlay",
            format!(
                "heatmap is {}x{} but base image is {}x{}",
                map.height(),
                map.width(),
                base.height(),
                base.width()
            ),
        ));
    }
    let grey = base.grayscale();
    let mut pixels = Vec::with_capacity(map.values().len() * 3);
    for (&v, &g) in map.values().iter().zip(grey.values()) {
        for c in colormap(v) {
            pixels.push(quantize(0.5 * g + 0.5 * c));
        }
    }
    ImageU8::new(base.height(), base.width(), 3, pixels)
}

/// `<dir>/<stem>.<method>.<class>.pgm` (normalised map) and `.ppm` (overlay).
pub fn save_heatmap(
    dir: impl AsRef<Path>,
    stem: &str,
    method: &str,
    class_name: &str,
    heatmap: &Heatmap,
    base: &ImageF,
) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pgm = dir.join(format!("{stem}.{method}.{class_name}.pgm"));
    let ppm = dir.join(format!("{stem}.{method}.{class_name}.ppm"));
    write_netpbm(&heatmap.to_u8(), &pgm)?;
    write_netpbm(&render_overlay(heatmap, base)?, &ppm)?;
    Ok((pgm, ppm))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_map_stays_zero() {
        let h = Heatmap::from_raw(Tensor::zeros(&[2, 2]), 8, 8).unwrap();
        assert!(h.normalized.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalised_peak_is_one() {
        let raw = Tensor::from_vec(&[2, 2], vec![0.0, 2.0, 0.0, 4.0]).unwrap();
        let h = Heatmap::from_raw(raw, 8, 8).unwrap();
        let peak = h.normalized.values().iter().copied().fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
        // bottom-right quadrant holds the peak
        let idx = h.normalized.values().iter().position(|&v| v == 1.0).unwrap();
        assert!(idx / 8 >= 4 && idx % 8 >= 4);
    }

    #[test]
    fn rejects_negative_raw() {
        let raw = Tensor::from_vec(&[1, 2], vec![-1.0, 1.0]).unwrap();
        assert!(Heatmap::from_raw(raw, 2, 2).is_err());
    }

    #[test]
    fn colormap_knots() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 1.0]);
        assert_eq!(colormap(0.5), [0.0, 1.0, 0.0]);
        assert_eq!(colormap(1.0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn overlay_values() {
        let base = ImageF::new(1, 2, 1, vec![0.2, 1.0]).unwrap();
        let h = Heatmap {
            raw: Tensor::zeros(&[1, 1]),
            normalized: ImageF::new(1, 2, 1, vec![0.0, 0.5]).unwrap(),
        };
        let o = render_overlay(&h, &base).unwrap();
        assert_eq!(o.pixels, vec![26, 26, 153, 128, 255, 128]);
        assert_eq!(o, render_overlay(&h, &base).unwrap());
        let small = ImageF::filled(1, 1, 1, 0.0);
        assert!(render_overlay(&h, &small).is_err());
    }
}
