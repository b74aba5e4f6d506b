//! Per-class train/validation/test partitioning and its CSV form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Subset::Train),
            "val" => Some(Subset::Val),
            "test" => Some(Subset::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub per_class: Vec<ClassCounts>,
}

pub const PAPER_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Splits dataset indices class by class.
///
/// Classes are visited in ascending order, all drawing from one stream
/// seeded with `seed`. For a class with `n` items the indices are shuffled,
/// then `floor(test_ratio·n)` go to test, the next `floor(val_ratio·n)` to
/// validation, and the remainder to training. Output lists are sorted.
pub fn stratified_split(
    labels: &[usize],
    num_classes: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitManifest> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRatios(ratios));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: l,
                classes: num_classes,
            });
        }
        by_class[l].push(i);
    }
    // Guard against products such as 0.1·30 landing a hair under an integer.
    let portion = |ratio: f64, n: usize| (ratio * n as f64 + 1e-9).floor() as usize;
    let mut rng = Rng::new(seed);
    let mut m = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        per_class: Vec::with_capacity(num_classes),
    };
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let n = idx.len();
        if n < 3 {
            return Err(Error::ClassTooSmall { class, count: n });
        }
        rng.shuffle(&mut idx);
        let n_test = portion(te, n);
        let n_val = portion(va, n);
        m.test.extend_from_slice(&idx[..n_test]);
        m.val.extend_from_slice(&idx[n_test..n_test + n_val]);
        m.train.extend_from_slice(&idx[n_test + n_val..]);
        m.per_class.push(ClassCounts {
            train: n - n_test - n_val,
            val: n_val,
            test: n_test,
        });
    }
    m.train.sort_unstable();
    m.val.sort_unstable();
    m.test.sort_unstable();
    Ok(m)
}

impl SplitManifest {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Subset of each dataset index (`None` for indices not in the manifest).
    pub fn assignment(&self, len: usize) -> Vec<Option<Subset>> {
        let mut out = vec![None; len];
        for (list, s) in [
            (&self.train, Subset::Train),
            (&self.val, Subset::Val),
            (&self.test, Subset::Test),
        ] {
            for &i in list {
                if i < len {
                    out[i] = Some(s);
                }
            }
        }
        out
    }
}

/// One line of the manifest CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub index: usize,
    pub path: String,
    pub label: usize,
    pub subset: Subset,
}

/// `index,path,label,split`, one row per dataset index in ascending order.
/// `paths[i]` may be empty for in-memory items.
pub fn manifest_csv(manifest: &SplitManifest, paths: &[String], labels: &[usize]) -> String {
    let mut out = String::from("index,path,label,split\n");
    for (i, subset) in manifest.assignment(labels.len()).into_iter().enumerate() {
        if let Some(s) = subset {
            let path = paths.get(i).map(String::as_str).unwrap_or("");
            writeln!(out, "{i},{path},{},{}", labels[i], s.as_str()).expect("write to String");
        }
    }
    out
}

pub fn parse_manifest_csv(text: &str) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("index,path,label,split") => {}
        other => {
            return Err(Error::Config(format!(
                "manifest header should be `index,path,label,split`, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Config(format!("manifest line {}: `{line}`", n + 2));
        // the path may itself contain commas: split off the fixed fields
        let (index, rest) = line.split_once(',').ok_or_else(bad)?;
        let (rest, subset) = rest.rsplit_once(',').ok_or_else(bad)?;
        let (path, label) = rest.rsplit_once(',').ok_or_else(bad)?;
        rows.push(ManifestRow {
            index: index.parse().map_err(|_| bad())?,
            path: path.to_string(),
            label: label.parse().map_err(|_| bad())?,
            subset: Subset::parse(subset).ok_or_else(bad)?,
        });
    }
    Ok(rows)
}

/// Rebuilds a manifest from parsed rows.
pub fn manifest_from_rows(rows: &[ManifestRow], num_classes: usize, seed: u64) -> SplitManifest {
    let mut m = SplitManifest {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        per_class: vec![ClassCounts::default(); num_classes],
    };
    for r in rows {
        let counts = m.per_class.get_mut(r.label);
        match r.subset {
            Subset::Train => {
                m.train.push(r.index);
                if let Some(c) = counts {
                    c.train += 1;
                }
            }
            Subset::Val => {
                m.val.push(r.index);
                if let Some(c) = counts {
                    c.val += 1;
                }
            }
            Subset::Test => {
                m.test.push(r.index);
                if let Some(c) = counts {
                    c.test += 1;
                }
            }
        }
    }
    m.train.sort_unstable();
    m.val.sort_unstable();
    m.test.sort_unstable();
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(sizes: &[usize]) -> Vec<usize> {
        sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat(c).take(n))
            .collect()
    }

    #[test]
    fn ten_items_is_eight_one_one() {
        let m = stratified_split(&labels(&[10]), 1, PAPER_RATIOS, 0).unwrap();
        assert_eq!((m.train.len(), m.val.len(), m.test.len()), (8, 1, 1));
    }

    #[test]
    fn paper_class_sizes() {
        let l = labels(&[2004, 2004, 2048]);
        let m = stratified_split(&l, 3, PAPER_RATIOS, 7).unwrap();
        assert_eq!(m.test.len(), 604);
        assert_eq!(m.val.len(), 604);
        assert_eq!(m.train.len(), 4848);
        assert_eq!(m.per_class[2], ClassCounts { train: 1640, val: 204, test: 204 });
    }

    #[test]
    fn seeds_change_order_not_counts() {
        let l = labels(&[30, 40]);
        let a = stratified_split(&l, 2, PAPER_RATIOS, 1).unwrap();
        assert_eq!(a, stratified_split(&l, 2, PAPER_RATIOS, 1).unwrap());
        let b = stratified_split(&l, 2, PAPER_RATIOS, 2).unwrap();
        assert_ne!(a.test, b.test);
        assert_eq!(a.per_class, b.per_class);
    }

    #[test]
    fn small_class_and_bad_ratios() {
        assert!(matches!(
            stratified_split(&labels(&[5, 2]), 2, PAPER_RATIOS, 0),
            Err(Error::ClassTooSmall { class: 1, count: 2 })
        ));
        assert!(matches!(
            stratified_split(&labels(&[5]), 1, (0.5, 0.1, 0.1), 0),
            Err(Error::InvalidRatios(_))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let l = labels(&[4, 5]);
        let m = stratified_split(&l, 2, PAPER_RATIOS, 3).unwrap();
        let paths: Vec<String> = (0..l.len()).map(|i| format!("c{}/img,{i}.pgm", l[i])).collect();
        let csv = manifest_csv(&m, &paths, &l);
        assert!(csv.starts_with("index,path,label,split\n"));
        let rows = parse_manifest_csv(&csv).unwrap();
        assert_eq!(rows.len(), l.len());
        assert_eq!(rows[3].path, "c0/img,3.pgm");
        assert_eq!(manifest_from_rows(&rows, 2, 3), m);
    }
}
