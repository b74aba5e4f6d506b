//! Synthetic three-class shape corpus used as a stand-in for MRI slices.

use crate::data::dataset::{Item, LabeledDataset};
use crate::data::image::ImageF;
use crate::data::preprocess::minmax_normalize;
use crate::rng::Rng;

/// Directory-friendly names whose alphabetical order equals label order.
pub const SYNTH_CLASSES: [&str; 3] = ["c0-disk", "c1-rectangle", "c2-cross"];

const NOISE_STD: f64 = 0.03;

fn shape_mask(label: usize, rng: &mut Rng, size: usize) -> impl Fn(f64, f64) -> bool {
    let s = size as f64;
    let extent = rng.uniform_range(0.18, 0.3) * s;
    let cx = (s - 1.0) / 2.0 + rng.uniform_range(-0.1, 0.1) * s;
    let cy = (s - 1.0) / 2.0 + rng.uniform_range(-0.1, 0.1) * s;
    // rectangles get a visible aspect ratio, crosses a bar thickness
    let aspect = rng.uniform_range(0.45, 0.75);
    let thickness = rng.uniform_range(0.22, 0.35) * extent;
    let landscape = rng.bernoulli(0.5);
    move |x: f64, y: f64| {
        let (dx, dy) = (x - cx, y - cy);
        match label {
            0 => dx.hypot(dy) <= extent,
            1 => {
                let (hw, hh) = if landscape { (extent, extent * aspect) } else { (extent * aspect, extent) };
                dx.abs() <= hw && dy.abs() <= hh
            }
            _ => {
                (dx.abs() <= thickness && dy.abs() <= extent)
                    || (dy.abs() <= thickness && dx.abs() <= extent)
            }
        }
    }
}

/// One synthetic image for `label` drawn from `rng`.
pub fn synth_image(label: usize, size: usize, rng: &mut Rng) -> ImageF {
    let inside = shape_mask(label % 3, rng, size);
    let foreground = rng.uniform_range(0.55, 1.0);
    let background = rng.uniform_range(0.0, 0.15);
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let base = if inside(x as f64, y as f64) { foreground } else { background };
            values.push(base + NOISE_STD * rng.normal());
        }
    }
    let img = ImageF::from_clipped(size, size, 1, values).expect("size is at least 1");
    minmax_normalize(&img)
}

/// `n_per_class` items per class, grouped by label. Item `i` of class `c`
/// draws from its own stream derived from `(seed, c, i)`.
pub fn synth_dataset(n_per_class: usize, image_size: usize, seed: u64) -> LabeledDataset {
    let mut items = Vec::with_capacity(3 * n_per_class);
    for label in 0..SYNTH_CLASSES.len() {
        for i in 0..n_per_class {
            let mut rng = Rng::derived(seed, &[label as u64, i as u64]);
            items.push(Item {
                source: None,
                image: synth_image(label, image_size, &mut rng),
                label,
            });
        }
    }
    LabeledDataset {
        items,
        class_names: SYNTH_CLASSES.iter().map(|s| s.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = synth_dataset(10, 32, 7);
        assert_eq!(a.len(), 30);
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
        let b = synth_dataset(10, 32, 7);
        assert!(a.items.iter().zip(&b.items).all(|(x, y)| x.image == y.image));
        let c = synth_dataset(10, 32, 8);
        assert_ne!(a.items[0].image, c.items[0].image);
    }

    #[test]
    fn images_are_normalised() {
        let d = synth_dataset(2, 24, 1);
        for it in &d.items {
            let v = it.image.values();
            assert_eq!(v.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(v.iter().copied().fold(0.0, f64::max), 1.0);
        }
    }

    #[test]
    fn class_names_sort_in_label_order() {
        let mut sorted = SYNTH_CLASSES;
        sorted.sort_unstable();
        assert_eq!(sorted, SYNTH_CLASSES);
    }
}
