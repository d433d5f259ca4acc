use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n × n` counts, rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        Self {
            n_classes: rows.len(),
            counts: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }
}

/// trace / total.
pub fn subject_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Numerical("accuracy of an empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Mean recall over classes with non-zero support.
pub fn macro_recall(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = (0..cm.n_classes)
        .filter(|&c| cm.row_sum(c) > 0)
        .map(|c| cm.get(c, c) as f64 / cm.row_sum(c) as f64)
        .collect();
    if recalls.is_empty() {
        return Err(Error::Numerical("macro recall of an empty confusion matrix".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Arithmetic mean and sample standard deviation (0 for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant() {
        let cm = ConfusionMatrix::from_rows(&[vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]]);
        assert_eq!(subject_accuracy(&cm).unwrap(), 1.0);
        assert_eq!(macro_recall(&cm).unwrap(), 1.0);
        let cm = ConfusionMatrix::from_rows(&[vec![10, 0, 0], vec![10, 0, 0], vec![10, 0, 0]]);
        assert!((subject_accuracy(&cm).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((macro_recall(&cm).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_support_class_is_skipped() {
        let cm = ConfusionMatrix::from_rows(&[vec![3, 1, 0], vec![0, 0, 0], vec![0, 2, 2]]);
        assert!((macro_recall(&cm).unwrap() - (0.75 + 0.5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(subject_accuracy(&ConfusionMatrix::new(2)).is_err());
        assert!(macro_recall(&ConfusionMatrix::new(2)).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
