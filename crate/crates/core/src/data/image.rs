//! 8-bit and floating-point images, row-major with interleaved channels.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub height: usize,
    pub width: usize,
    /// 1 (grey) or 3 (RGB).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

/// Floating-point image with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::shape("image", format!("empty image {height}x{width}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::shape("image", format!("{channels} channels (need 1 or 3)")));
    }
    if height * width * channels != len {
        return Err(Error::shape(
            "image",
            format!("{height}x{width}x{channels} needs {} values, got {len}", height * width * channels),
        ));
    }
    Ok(())
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        check_dims(height, width, channels, pixels.len())?;
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    /// Values divided by 255.
    pub fn to_unit(&self) -> ImageF {
        ImageF {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
        }
    }
}

impl ImageF {
    /// Fails if the dimensions disagree or any value lies outside `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels, values.len())?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::shape("image", format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    /// Clamps every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clipped(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(clip01).collect();
        Self::new(height, width, channels, values)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            values: vec![clip01(value); height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * self.channels + c]
    }

    /// Mutable access for in-crate transforms that keep values in range.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Single-channel copy; RGB uses luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn grayscale(&self) -> ImageF {
        if self.channels == 1 {
            return self.clone();
        }
        let values = self
            .values
            .chunks(3)
            .map(|p| clip01(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]))
            .collect();
        ImageF {
            height: self.height,
            width: self.width,
            channels: 1,
            values,
        }
    }

    /// `round(255·v)` per value.
    pub fn to_u8(&self) -> ImageU8 {
        ImageU8 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    /// `[channels, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut data = vec![0.0; h * w * c];
        for (i, px) in self.values.chunks(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + i] = v;
            }
        }
        Tensor::from_vec(&[c, h, w], data).expect("image dims are non-zero")
    }
}

pub(crate) fn clip01(v: f64) -> f64 {
    if v > 1.0 {
        1.0
    } else if v >= 0.0 {
        v
    } else {
        0.0
    }
}

/// `round(255·clip(v))` as a byte.
pub fn quantize(v: f64) -> u8 {
    (255.0 * clip01(v)).round() as u8
}

/// Stacks equally sized images into a `[N, C, H, W]` batch.
pub fn batch_tensor(images: &[&ImageF]) -> Result<Tensor> {
    let tensors: Vec<Tensor> = images.iter().map(|im| im.to_tensor()).collect();
    Tensor::stack(&tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageF::new(1, 2, 1, vec![0.0, 1.5]).is_err());
        assert!(ImageF::new(1, 2, 1, vec![0.0, f64::NAN]).is_err());
        let im = ImageF::from_clipped(1, 3, 1, vec![-0.2, 0.4, 7.0]).unwrap();
        assert_eq!(im.values(), &[0.0, 0.4, 1.0]);
    }

    #[test]
    fn tensor_is_channel_major() {
        let im = ImageF::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let t = im.to_tensor();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.1, 0.4, 0.2, 0.5, 0.3, 0.6]);
    }

    #[test]
    fn quantize_rounds() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-1.0), 0);
        let u = ImageU8::new(1, 1, 1, vec![200]).unwrap();
        assert_eq!(u.to_unit().to_u8(), u);
    }
}
