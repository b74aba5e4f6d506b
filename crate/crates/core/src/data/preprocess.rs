//! Resizing and per-image min-max normalisation.

use crate::data::image::{clip01, ImageF, ImageU8};

/// Bilinear resize with half-pixel centres: the source coordinate of output
/// pixel `d` is `(d + 0.5)·(in/out) − 0.5`, clamped to the image. Same-size
/// requests return an exact copy.
pub fn resize_bilinear(img: &ImageF, out_h: usize, out_w: usize) -> ImageF {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be at least 1x1");
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if out_h == h && out_w == w {
        return img.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut values = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            for ch in 0..c {
                let top = (1.0 - tx) * img.get(y0, x0, ch) + tx * img.get(y0, x1, ch);
                let bottom = (1.0 - tx) * img.get(y1, x0, ch) + tx * img.get(y1, x1, ch);
                values.push(clip01((1.0 - ty) * top + ty * bottom));
            }
        }
    }
    ImageF::new(out_h, out_w, c, values).expect("resized values are clipped")
}

fn minmax(values: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let (lo, hi) = values
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return values.map(|_| 0.0).collect();
    }
    let range = hi - lo;
    values.map(|v| clip01((v - lo) / range)).collect()
}

/// `(x − min) / (max − min)` over all channels jointly; a constant image
/// becomes all zeros.
pub fn minmax_normalize(img: &ImageF) -> ImageF {
    let values = minmax(img.values().iter().copied());
    ImageF::new(img.height(), img.width(), img.channels(), values).expect("normalised values in range")
}

pub fn minmax_normalize_u8(img: &ImageU8) -> ImageF {
    let values = minmax(img.pixels.iter().map(|&p| f64::from(p)));
    ImageF::new(img.height, img.width, img.channels, values).expect("normalised values in range")
}

/// Ingestion chain for a decoded file: greyscale, resize to `size×size`,
/// then min-max normalise.
pub fn preprocess(img: &ImageU8, size: usize) -> ImageF {
    let grey = img.to_unit().grayscale();
    minmax_normalize(&resize_bilinear(&grey, size, size))
}
