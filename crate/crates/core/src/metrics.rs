//! Evaluation metrics: overall/per-class accuracy, shape and category mIoU,
//! per-part accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square count matrix of (truth, prediction) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionTally {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionTally {
    pub fn new(num_classes: usize) -> Self {
        Self { counts: vec![vec![0; num_classes]; num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let c = self.num_classes();
        if truth >= c {
            return Err(Error::LabelRange { label: truth, bound: c });
        }
        if pred >= c {
            return Err(Error::LabelRange { label: pred, bound: c });
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.num_classes()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }

    /// Accuracy per true class; `None` for classes never seen in truth.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: usize = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect()
    }
}

/// Fraction of positions where prediction equals truth.
pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape {
            op: "overall_accuracy",
            detail: format!("{} predictions vs {} labels", pred.len(), truth.len()),
        });
    }
    let matches = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(matches as f64 / truth.len() as f64)
}

/// Mean IoU of one shape over the part ids of its category.
///
/// A part absent from both prediction and truth counts as IoU 1.
pub fn shape_miou(pred: &[usize], truth: &[usize], category_parts: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape {
            op: "shape_miou",
            detail: format!("{} predictions vs {} labels", pred.len(), truth.len()),
        });
    }
    if category_parts.is_empty() {
        return Err(Error::Config("category has no part ids".into()));
    }
    let mut sum = 0.0;
    for &part in category_parts {
        let mut intersection = 0usize;
        let mut union = 0usize;
        for (&p, &t) in pred.iter().zip(truth) {
            let in_p = p == part;
            let in_t = t == part;
            intersection += usize::from(in_p && in_t);
            union += usize::from(in_p || in_t);
        }
        sum += if union == 0 { 1.0 } else { intersection as f64 / union as f64 };
    }
    Ok(sum / category_parts.len() as f64)
}

/// Shape mIoUs grouped into per-category means plus the instance average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_shape: Vec<f64>,
    pub per_category: BTreeMap<String, f64>,
    pub instance_average: f64,
}

/// Average shape mIoUs per category; `shapes` pairs a category name with each
/// shape's mIoU.
pub fn category_miou(shapes: &[(String, f64)]) -> Result<IoUReport> {
    if shapes.is_empty() {
        return Err(Error::Config("no shapes to aggregate".into()));
    }
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (cat, v) in shapes {
        grouped.entry(cat.clone()).or_default().push(*v);
    }
    let per_category = grouped
        .into_iter()
        .map(|(cat, vs)| {
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            (cat, mean)
        })
        .collect();
    let per_shape: Vec<f64> = shapes.iter().map(|(_, v)| *v).collect();
    let instance_average = per_shape.iter().sum::<f64>() / per_shape.len() as f64;
    Ok(IoUReport { per_shape, per_category, instance_average })
}

/// Per-part point accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPartAccuracy {
    /// Indexed by part id; `None` when the part never occurs in truth.
    pub per_part: Vec<Option<f64>>,
    /// Mean over parts present in truth.
    pub average: f64,
    /// Plain pointwise accuracy.
    pub overall: f64,
}

pub fn per_part_accuracy(pred: &[usize], truth: &[usize], num_parts: usize) -> Result<PerPartAccuracy> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(Error::Shape {
            op: "per_part_accuracy",
            detail: format!("{} predictions vs {} labels", pred.len(), truth.len()),
        });
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&v| v >= num_parts) {
        return Err(Error::LabelRange { label: bad, bound: num_parts });
    }
    let mut totals = vec![0usize; num_parts];
    let mut correct = vec![0usize; num_parts];
    for (&p, &t) in pred.iter().zip(truth) {
        totals[t] += 1;
        correct[t] += usize::from(p == t);
    }
    let per_part: Vec<Option<f64>> = totals
        .iter()
        .zip(&correct)
        .map(|(&n, &c)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    let present: Vec<f64> = per_part.iter().flatten().copied().collect();
    let average = present.iter().sum::<f64>() / present.len().max(1) as f64;
    let overall = overall_accuracy(pred, truth)?;
    Ok(PerPartAccuracy { per_part, average, overall })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn overall_accuracy_cases() {
        assert_eq!(overall_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(overall_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(overall_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn overall_accuracy_matches_counting_oracle() {
        let mut r = rng::stream(41, "acc");
        for _ in 0..100 {
            let n = r.gen_range(1..50);
            let pred: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
            let truth: Vec<usize> = (0..n).map(|_| r.gen_range(0..4)).collect();
            let mut count = 0;
            for i in 0..n {
                if pred[i] == truth[i] {
                    count += 1;
                }
            }
            assert_eq!(overall_accuracy(&pred, &truth).unwrap(), count as f64 / n as f64);
        }
    }

    #[test]
    fn shape_miou_worked_example() {
        // truth parts: A = {1, 2}, B = {3, 4}; pred: A = {1, 2, 3}, B = {4}.
        let truth = [0, 0, 1, 1];
        let pred = [0, 0, 0, 1];
        let miou = shape_miou(&pred, &truth, &[0, 1]).unwrap();
        assert!((miou - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn shape_miou_perfect_and_absent_part() {
        assert_eq!(shape_miou(&[0, 1], &[0, 1], &[0, 1]).unwrap(), 1.0);
        // Part 2 absent from both: IoU 1 by convention.
        assert_eq!(shape_miou(&[0, 1], &[0, 1], &[0, 1, 2]).unwrap(), 1.0);
        // Empty part list is a config error.
        assert!(shape_miou(&[0], &[0], &[]).is_err());
    }

    #[test]
    fn shape_miou_point_permutation_invariant() {
        let truth = [0, 1, 1, 2, 0];
        let pred = [0, 1, 2, 2, 1];
        let a = shape_miou(&pred, &truth, &[0, 1, 2]).unwrap();
        let order = [4, 2, 0, 3, 1];
        let truth_p: Vec<usize> = order.iter().map(|&i| truth[i]).collect();
        let pred_p: Vec<usize> = order.iter().map(|&i| pred[i]).collect();
        let b = shape_miou(&pred_p, &truth_p, &[0, 1, 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn category_miou_cases() {
        let report = category_miou(&[("chair".into(), 0.5), ("chair".into(), 1.0)]).unwrap();
        assert_eq!(report.per_category["chair"], 0.75);
        assert_eq!(report.instance_average, 0.75);

        let report = category_miou(&[("a".into(), 0.25), ("b".into(), 0.75)]).unwrap();
        assert_eq!(report.per_category["a"], 0.25);
        assert_eq!(report.per_category["b"], 0.75);
        assert_eq!(report.instance_average, 0.5);
    }

    #[test]
    fn per_part_accuracy_worked_example() {
        // truth [A, A, B, B], pred [A, B, B, B]
        let out = per_part_accuracy(&[0, 1, 1, 1], &[0, 0, 1, 1], 3).unwrap();
        assert_eq!(out.per_part[0], Some(0.5));
        assert_eq!(out.per_part[1], Some(1.0));
        assert_eq!(out.per_part[2], None);
        assert_eq!(out.average, 0.75);
        assert_eq!(out.overall, 0.75);
    }

    #[test]
    fn metrics_equal_one_on_identical_inputs() {
        let labels = [0, 1, 2, 1, 0];
        assert_eq!(overall_accuracy(&labels, &labels).unwrap(), 1.0);
        assert_eq!(shape_miou(&labels, &labels, &[0, 1, 2]).unwrap(), 1.0);
        let pp = per_part_accuracy(&labels, &labels, 3).unwrap();
        assert_eq!(pp.average, 1.0);
        assert_eq!(pp.overall, 1.0);
    }

    #[test]
    fn confusion_tally_roundup() {
        let mut t = ConfusionTally::new(3);
        for (truth, pred) in [(0, 0), (0, 1), (1, 1), (2, 2), (2, 2)] {
            t.record(truth, pred).unwrap();
        }
        assert_eq!(t.total(), 5);
        assert!((t.accuracy() - 0.8).abs() < 1e-12);
        let pc = t.per_class_accuracy();
        assert_eq!(pc[0], Some(0.5));
        assert_eq!(pc[1], Some(1.0));
        assert_eq!(pc[2], Some(1.0));
        assert!(t.record(3, 0).is_err());
    }
}
