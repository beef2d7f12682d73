use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::LabelMap;
use crate::error::{MadmError, Result};

/// `K x K` pixel counts; rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(MadmError::Shape(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(Self { num_classes, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one count per non-ignored ground-truth pixel.
    pub fn update(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(MadmError::Shape(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        if gt.num_classes != self.num_classes {
            return Err(MadmError::ClassCount {
                expected: self.num_classes,
                found: gt.num_classes,
            });
        }
        let k = self.num_classes;
        for (&p, &t) in pred.classes().iter().zip(gt.classes()) {
            if t == gt.ignore_value {
                continue;
            }
            if p as usize >= k {
                return Err(MadmError::ClassCount {
                    expected: k,
                    found: p as usize + 1,
                });
            }
            self.counts[t as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    /// Elementwise sum, for merging evaluation shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(MadmError::ClassCount {
                expected: self.num_classes,
                found: other.num_classes,
            });
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// CSV with a header row of predicted ids and one row per ground-truth id.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes;
        let mut s = String::from("gt\\pred");
        for c in 0..k {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for r in 0..k {
            write!(s, "{r}").unwrap();
            for c in 0..k {
                write!(s, ",{}", self.get(r, c)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// `None` for classes absent from both ground truth and predictions.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// Per-class IoU `diag / (row + col - diag)` and their mean.
///
/// Classes with a zero denominator are reported as `None`; they are left
/// out of the mean unless `count_absent_as_zero` is set, in which case they
/// contribute 0.
pub fn miou(cm: &ConfusionMatrix, count_absent_as_zero: bool) -> Result<MiouReport> {
    if cm.total() == 0 {
        return Err(MadmError::UndefinedMetric(
            "confusion matrix is empty".into(),
        ));
    }
    let k = cm.num_classes;
    let mut per_class = Vec::with_capacity(k);
    let (mut sum, mut n) = (0.0, 0usize);
    for c in 0..k {
        let diag = cm.get(c, c);
        let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
        let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
        let denom = row + col - diag;
        if denom == 0 {
            per_class.push(None);
            if count_absent_as_zero {
                n += 1;
            }
        } else {
            let iou = diag as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            n += 1;
        }
    }
    Ok(MiouReport {
        per_class,
        mean: sum / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_diagonal_with_unit_iou() {
        let gt = LabelMap::new(vec![0, 1, 2, 1], 2, 2, 3).unwrap();
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&gt, &gt).unwrap();
        assert_eq!(cm.counts(), &[1, 0, 0, 0, 2, 0, 0, 0, 1]);
        let r = miou(&cm, false).unwrap();
        assert_eq!(r.mean, 1.0);
        assert!(r.per_class.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn hand_computed_two_class_case() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        let r = miou(&cm, false).unwrap();
        assert_eq!(r.per_class, vec![Some(0.6), Some(0.6)]);
        assert_eq!(r.mean, 0.6);
    }

    #[test]
    fn ignored_ground_truth_leaves_matrix_unchanged() {
        let gt = LabelMap::filled(2, 2, 3, 255).unwrap();
        let pred = LabelMap::filled(2, 2, 3, 1).unwrap();
        let mut cm = ConfusionMatrix::new(3);
        cm.update(&pred, &gt).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(miou(&cm, false).is_err());
    }

    #[test]
    fn absent_classes_are_excluded_or_zeroed() {
        let cm = ConfusionMatrix::from_counts(3, vec![2, 0, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        let r = miou(&cm, false).unwrap();
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.mean, 1.0);
        assert!((miou(&cm, true).unwrap().mean - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn shards_merge_additively() {
        let mut a = ConfusionMatrix::from_counts(2, vec![1, 2, 3, 4]).unwrap();
        let b = ConfusionMatrix::from_counts(2, vec![4, 3, 2, 1]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a.counts(), &[5, 5, 5, 5]);
        assert_eq!(a.to_csv(), "gt\\pred,0,1\n0,5,5\n1,5,5\n");
    }
}
