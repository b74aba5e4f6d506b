//! Confusion matrix and per-class precision, recall and F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|c| self.counts[c][c]).sum()
    }

    /// Aligned text grid with true classes down the side.
    pub fn to_table(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(9);
        let mut out = format!("{:>width$}", "true\\pred");
        for name in &self.class_names {
            write!(out, " {name:>width$}").expect("write to String");
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            write!(out, "{name:>width$}").expect("write to String");
            for c in row {
                write!(out, " {c:>width$}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }
}

/// Tallies `(label, prediction)` pairs. Class names default to `0..K`.
pub fn confusion(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        for value in [p, t] {
            if value >= num_classes {
                return Err(Error::ClassOutOfRange {
                    value,
                    classes: num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..num_classes).map(|c| c.to_string()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Per-class and macro-averaged metrics. Every undefined ratio (0/0) is 0.
pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let k = cm.num_classes();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let col: u64 = cm.counts.iter().map(|row| row[c]).sum();
            let row: u64 = cm.counts[c].iter().sum();
            let precision = ratio(tp, col as f64);
            let recall = ratio(tp, row as f64);
            ClassMetrics {
                name: cm.class_names[c].clone(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| ratio(per_class.iter().map(f).sum(), k as f64);
    MetricsReport {
        accuracy: ratio(cm.trace() as f64, cm.total() as f64),
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    }
}

impl MetricsReport {
    /// `class,precision,recall,f1` rows, then `accuracy,<v>` and `macro_f1,<v>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,precision,recall,f1\n");
        for m in &self.per_class {
            writeln!(out, "{},{:.4},{:.4},{:.4}", m.name, m.precision, m.recall, m.f1).expect("write to String");
        }
        writeln!(out, "accuracy,{:.4}", self.accuracy).expect("write to String");
        writeln!(out, "macro_f1,{:.4}", self.macro_f1).expect("write to String");
        out
    }

    /// Aligned table with one row per class plus a macro-average row; the
    /// accuracy column holds the overall accuracy.
    pub fn to_table(&self, model_name: &str) -> String {
        let cw = self
            .per_class
            .iter()
            .map(|m| m.name.len())
            .chain([5, "macro avg".len()])
            .max()
            .unwrap_or(5);
        let mw = model_name.len().max(5);
        let mut out = format!(
            "{:<mw$}  {:<cw$}  {:>8}  {:>9}  {:>6}  {:>8}\n",
            "model", "class", "accuracy", "precision", "recall", "f1"
        );
        let mut line = |name: &str, p: f64, r: f64, f: f64| {
            writeln!(
                out,
                "{model_name:<mw$}  {name:<cw$}  {:>8.4}  {p:>9.4}  {r:>6.4}  {f:>8.4}",
                self.accuracy
            )
            .expect("write to String");
        };
        for m in &self.per_class {
            line(&m.name, m.precision, m.recall, m.f1);
        }
        line("macro avg", self.macro_precision, self.macro_recall, self.macro_f1);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_tally() {
        let cm = confusion(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 2, 0], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 1], vec![1, 1, 0], vec![0, 0, 2]]);
        let r = report(&cm);
        let p: Vec<f64> = r.per_class.iter().map(|m| m.precision).collect();
        let rc: Vec<f64> = r.per_class.iter().map(|m| m.recall).collect();
        assert_eq!(p[..2], [0.5, 1.0]);
        assert!((p[2] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rc, vec![0.5, 0.5, 1.0]);
        assert!((r.accuracy - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let r = report(&confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap());
        assert!(r.per_class.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
        assert_eq!(r.accuracy, 1.0);
        let empty = confusion(&[], &[], 2).unwrap();
        assert_eq!(empty.total(), 0);
        let r = report(&empty);
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.macro_f1, 0.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let r = report(&confusion(&[0, 1], &[0, 1], 3).unwrap());
        assert_eq!(r.per_class[2].f1, 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(confusion(&[0], &[], 2), Err(Error::LengthMismatch { .. })));
        assert!(matches!(
            confusion(&[3], &[0], 2),
            Err(Error::ClassOutOfRange { value: 3, classes: 2 })
        ));
    }

    #[test]
    fn csv_layout() {
        let mut cm = confusion(&[0, 1], &[0, 0], 2).unwrap();
        cm.class_names = vec!["glioma".into(), "menin".into()];
        let csv = report(&cm).to_csv();
        assert_eq!(
            csv,
            "class,precision,recall,f1\nglioma,1.0000,0.5000,0.6667\nmenin,0.0000,0.0000,0.0000\naccuracy,0.5000\nmacro_f1,0.3333\n"
        );
        assert!(report(&cm).to_table("vgg-nano").contains("macro avg"));
        assert!(cm.to_table().contains("glioma"));
    }
}
