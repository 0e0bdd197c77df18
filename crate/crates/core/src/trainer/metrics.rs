use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    /// Undefined precision, recall or F1 counts as 0.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Metrics {
        assert_eq!(truth.len(), predicted.len(), "one prediction per label");
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        Metrics::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Metrics {
        let classes = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..classes)
            .map(|c| {
                let tp = confusion[c][c];
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = confusion.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
                ClassMetrics { precision, recall, f1, support }
            })
            .collect();
        let macro_f1 = if classes == 0 { 0.0 } else { per_class.iter().map(|c| c.f1).sum::<f64>() / classes as f64 };
        Metrics { accuracy: ratio(correct, total), macro_f1, per_class, confusion }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_predictions(&[0, 1, 1, 0], &[0, 1, 1, 0], 2);
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn hand_computed_case() {
        let m = Metrics::from_predictions(&[0, 0, 1], &[0, 1, 1], 2);
        assert_eq!(m.accuracy, 2.0 / 3.0);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn constant_predictor() {
        let m = Metrics::from_predictions(&[0, 1, 0, 1], &[1, 1, 1, 1], 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[0].precision, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn identities(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..60)) {
                let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let m = Metrics::from_predictions(&t, &p, 3);
                let trace: usize = (0..3).map(|c| m.confusion[c][c]).sum();
                prop_assert_eq!(m.accuracy, trace as f64 / m.total() as f64);
                for c in 0..3 {
                    prop_assert_eq!(m.confusion[c].iter().sum::<usize>(), t.iter().filter(|&&x| x == c).count());
                }
                prop_assert!((0.0..=1.0).contains(&m.macro_f1));
            }
        }
    }
}
