//! Overall accuracy, mean class accuracy and mean IoU from a confusion matrix.

use crate::error::{Error, Result};

/// `counts[truth][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: u32, pred: u32) -> Result<()> {
        for l in [truth, pred] {
            if l as usize >= self.classes {
                return Err(Error::InvalidLabel { label: l as usize, classes: self.classes });
            }
        }
        self.counts[truth as usize * self.classes + pred as usize] += 1;
        Ok(())
    }

    pub fn add_all(&mut self, truth: &[u32], pred: &[u32]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!("{} labels, {} predictions", truth.len(), pred.len())));
        }
        truth.iter().zip(pred).try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch(format!("{} vs {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.count(c, p)).sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, c)).sum()
    }

    /// Correct over total; 0 when empty.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.classes).map(|c| self.count(c, c)).sum::<u64>() as f64 / total as f64
    }

    /// Mean recall over classes that occur in the ground truth.
    pub fn mean_class_accuracy(&self) -> f64 {
        mean((0..self.classes).filter_map(|c| {
            let s = self.support(c);
            (s > 0).then(|| self.count(c, c) as f64 / s as f64)
        }))
    }

    /// `TP / (TP + FP + FN)` for class `c`, `None` when the class never
    /// appears in truth or prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.count(c, c);
        let union = self.support(c) + self.predicted(c) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    /// Mean IoU over classes that appear in truth or prediction.
    pub fn mean_iou(&self) -> f64 {
        mean((0..self.classes).filter_map(|c| self.iou(c)))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Index of the largest value per row; ties go to the smaller index.
pub fn argmax_rows(values: &[f64], width: usize) -> Vec<u32> {
    values
        .chunks_exact(width)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u32
        })
        .collect()
}
