//! Labelled image collections and the `<root>/<class>/*.pgm` layout.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::image::{batch_tensor, ImageF};
use crate::data::netpbm::{read_netpbm, write_netpbm};
use crate::data::preprocess::preprocess;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// File the image was read from, if any.
    pub source: Option<PathBuf>,
    pub image: ImageF,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub items: Vec<Item>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for it in &self.items {
            counts[it.label] += 1;
        }
        counts
    }

    /// Path strings relative to `root` where possible; empty for in-memory items.
    pub fn relative_paths(&self, root: &Path) -> Vec<String> {
        self.items
            .iter()
            .map(|it| match &it.source {
                Some(p) => p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned(),
                None => String::new(),
            })
            .collect()
    }

    /// New dataset holding clones of the items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// `[N, C, H, W]` batch of the items at `indices` plus their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images: Vec<&ImageF> = indices.iter().map(|&i| &self.items[i].image).collect();
        let labels = indices.iter().map(|&i| self.items[i].label).collect();
        Ok((batch_tensor(&images)?, labels))
    }

    /// Checks every label against the class count.
    pub fn validate(&self) -> Result<()> {
        for (index, it) in self.items.iter().enumerate() {
            if it.label >= self.num_classes() {
                return Err(Error::LabelOutOfRange {
                    index,
                    label: it.label,
                    classes: self.num_classes(),
                });
            }
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_netpbm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm")
    )
}

/// Files of a `<root>/<class>/*.pgm|*.ppm` corpus without decoding them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusListing {
    pub files: Vec<PathBuf>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

/// Lists class directories in alphabetical order (label = position) and
/// the Netpbm files inside each, also alphabetically.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<CorpusListing> {
    let root = root.as_ref();
    let mut listing = CorpusListing::default();
    for class_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = listing.class_names.len();
        listing
            .class_names
            .push(class_dir.file_name().expect("directory entry has a name").to_string_lossy().into_owned());
        for file in sorted_entries(&class_dir)?.into_iter().filter(|p| is_netpbm(p)) {
            listing.files.push(file);
            listing.labels.push(label);
        }
    }
    if listing.files.is_empty() {
        return Err(Error::EmptyDataset("no Netpbm images under the class directories"));
    }
    Ok(listing)
}

/// Reads a corpus laid out as [`scan_dataset`] describes. Each image is
/// converted to grey, resized to `size×size` and min-max normalised.
pub fn load_dataset(root: impl AsRef<Path>, size: usize) -> Result<LabeledDataset> {
    let listing = scan_dataset(root)?;
    let mut items = Vec::with_capacity(listing.files.len());
    for (file, label) in listing.files.into_iter().zip(listing.labels) {
        items.push(Item {
            image: preprocess(&read_netpbm(&file)?, size),
            source: Some(file),
            label,
        });
    }
    Ok(LabeledDataset {
        items,
        class_names: listing.class_names,
    })
}

/// Writes every item as `<root>/<class>/<class>_<nnnn>.pgm|ppm`, numbering
/// within each class, and records the written path in `source`.
pub fn write_dataset(ds: &mut LabeledDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let mut next = vec![0usize; ds.num_classes()];
    for name in &ds.class_names {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for it in &mut ds.items {
        let name = &ds.class_names[it.label];
        let ext = if it.image.channels() == 3 { "ppm" } else { "pgm" };
        let path = root.join(name).join(format!("{name}_{:04}.{ext}", next[it.label]));
        next[it.label] += 1;
        write_netpbm(&it.image.to_u8(), &path)?;
        it.source = Some(path);
    }
    Ok(())
}
