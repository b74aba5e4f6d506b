//! Image I/O, preprocessing, augmentation, splitting and synthetic data.

mod augment;
mod dataset;
mod image;
mod netpbm;
mod preprocess;
mod split;
mod synth;

pub use augment::{add_gaussian_noise, augment_chain, contrast_brightness, hflip, rotate, AugmentConfig};
pub use dataset::{load_dataset, scan_dataset, write_dataset, CorpusListing, Item, LabeledDataset};
pub use image::{batch_tensor, quantize, ImageF, ImageU8};
pub use netpbm::{decode_netpbm, encode_netpbm, read_netpbm, write_netpbm};
pub use preprocess::{minmax_normalize, minmax_normalize_u8, preprocess, resize_bilinear};
pub use split::{
    manifest_csv, manifest_from_rows, parse_manifest_csv, stratified_split, ClassCounts, ManifestRow,
    SplitManifest, Subset, PAPER_RATIOS,
};
pub use synth::{synth_dataset, synth_image, SYNTH_CLASSES};
