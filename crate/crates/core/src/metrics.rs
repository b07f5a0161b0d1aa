//! Confusion matrices, accuracy, macro-F1 and patient-level aggregation.

use serde::{Deserialize, Serialize};

use crate::downstream::{TaskLabel, TaskPrediction};
use crate::error::{Error, Result};

/// `counts[i][j]` = samples with true class `i` predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidArgument(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(Self { labels, counts })
    }

    /// Anonymous labels "0", "1", ...
    pub fn square(counts: Vec<Vec<u64>>) -> Result<Self> {
        let labels = (0..counts.len()).map(|i| i.to_string()).collect();
        Self::from_counts(labels, counts)
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = Self::square(vec![vec![0; n_classes]; n_classes]).expect("square");
        for (t, p) in pairs {
            cm.record(t, p);
        }
        cm
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn non_empty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix has no samples".into())),
            n => Ok(n),
        }
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.non_empty()?;
    let trace: u64 = (0..cm.labels.len()).map(|i| cm.counts[i][i]).sum();
    Ok(trace as f64 / total as f64)
}

/// Unweighted mean of per-class F1. A class with no true and no predicted
/// samples scores 0 and still counts toward the mean.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.non_empty()?;
    let k = cm.labels.len();
    let f1_sum: f64 = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|r| cm.counts[r][c]).sum();
            let actual: u64 = cm.counts[c].iter().sum();
            // 2PR/(P+R) reduces to 2tp/(predicted+actual).
            if predicted + actual == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (predicted + actual) as f64
            }
        })
        .sum();
    Ok(f1_sum / k as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn of(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            accuracy: accuracy(cm)?,
            macro_f1: macro_f1(cm)?,
        })
    }

    /// `self - before`, component-wise.
    pub fn minus(&self, before: &Metrics) -> Metrics {
        Metrics {
            accuracy: self.accuracy - before.accuracy,
            macro_f1: self.macro_f1 - before.macro_f1,
        }
    }
}

/// Majority vote; ties go to the highest mean confidence, then to the
/// lowest label ordinal.
pub fn aggregate_patient(predictions: &[TaskPrediction]) -> Result<TaskPrediction> {
    let Some(first) = predictions.first() else {
        return Err(Error::Empty("no predictions to aggregate".into()));
    };
    let task = first.task();
    if predictions.iter().any(|p| p.task() != task) {
        return Err(Error::InvalidArgument("predictions mix tasks".into()));
    }
    let labels = task.labels();
    let mut confidences = vec![Vec::new(); labels.len()];
    for p in predictions {
        confidences[p.label.ordinal()].push(p.confidence);
    }
    // Summing in sorted order keeps the result independent of input order.
    let votes: Vec<(usize, f64)> = confidences
        .into_iter()
        .map(|mut c| {
            c.sort_by(f64::total_cmp);
            (c.len(), c.iter().sum())
        })
        .collect();
    let mean = |(n, s): (usize, f64)| if n == 0 { 0.0 } else { s / n as f64 };
    let mut best = 0;
    for i in 1..labels.len() {
        let (cand, cur) = (votes[i], votes[best]);
        if cand.0 > cur.0 || (cand.0 == cur.0 && cand.0 > 0 && mean(cand) > mean(cur)) {
            best = i;
        }
    }
    let label: TaskLabel = labels[best];
    Ok(TaskPrediction {
        label,
        confidence: mean(votes[best]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::PresentationLabel::{Cephalic, NonCephalic};
    use proptest::prelude::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix::square(counts).unwrap()
    }

    #[test]
    fn hand_computed_values() {
        let m = cm(vec![vec![3, 1], vec![1, 3]]);
        assert_eq!(accuracy(&m).unwrap(), 0.75);
        assert_eq!(macro_f1(&m).unwrap(), 0.75);

        let m = cm(vec![vec![5, 0], vec![0, 0]]);
        assert_eq!(accuracy(&m).unwrap(), 1.0);
        assert_eq!(macro_f1(&m).unwrap(), 0.5);

        let eye: Vec<Vec<u64>> = (0..6).map(|i| (0..6).map(|j| (i == j) as u64 * 4).collect()).collect();
        assert_eq!(accuracy(&cm(eye.clone())).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm(eye)).unwrap(), 1.0);

        let anti = cm(vec![vec![0, 2], vec![3, 0]]);
        assert_eq!(accuracy(&anti).unwrap(), 0.0);
    }

    #[test]
    fn empty_matrix_errors() {
        let m = cm(vec![vec![0, 0], vec![0, 0]]);
        assert!(matches!(accuracy(&m), Err(Error::Empty(_))));
        assert!(matches!(macro_f1(&m), Err(Error::Empty(_))));
    }

    fn pred(l: crate::sweep::PresentationLabel, c: f64) -> TaskPrediction {
        TaskPrediction {
            label: TaskLabel::Presentation(l),
            confidence: c,
        }
    }

    #[test]
    fn aggregation_rules() {
        let four_two: Vec<_> = [Cephalic, Cephalic, NonCephalic, Cephalic, NonCephalic, Cephalic]
            .into_iter()
            .map(|l| pred(l, 0.5))
            .collect();
        assert_eq!(
            aggregate_patient(&four_two).unwrap().label,
            TaskLabel::Presentation(Cephalic)
        );

        let tie = [
            pred(NonCephalic, 0.6),
            pred(Cephalic, 0.9),
            pred(NonCephalic, 0.6),
            pred(Cephalic, 0.9),
            pred(NonCephalic, 0.6),
            pred(Cephalic, 0.9),
        ];
        assert_eq!(
            aggregate_patient(&tie).unwrap().label,
            TaskLabel::Presentation(Cephalic)
        );
        let tie_rev: Vec<_> = tie
            .iter()
            .map(|p| pred(if p.confidence > 0.7 { NonCephalic } else { Cephalic }, p.confidence))
            .collect();
        assert_eq!(
            aggregate_patient(&tie_rev).unwrap().label,
            TaskLabel::Presentation(NonCephalic)
        );

        let full_tie = [pred(NonCephalic, 0.5), pred(Cephalic, 0.5)];
        assert_eq!(
            aggregate_patient(&full_tie).unwrap().label,
            TaskLabel::Presentation(Cephalic)
        );

        let one = [pred(NonCephalic, 0.3)];
        assert_eq!(aggregate_patient(&one).unwrap(), one[0]);
        assert!(aggregate_patient(&[]).is_err());
    }

    /// Independent per-class F1 from raw pairs, following the textbook
    /// precision/recall definitions.
    fn brute(k: usize, pairs: &[(usize, usize)]) -> (f64, f64) {
        let acc = pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64;
        let mut f1s = 0.0;
        for c in 0..k {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
            let fneg = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            f1s += if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
        }
        (acc, f1s / k as f64)
    }

    proptest! {
        #[test]
        fn matches_brute_force(k in 2usize..=6, raw in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
            let pairs: Vec<(usize, usize)> = raw.into_iter().map(|(t, p)| (t % k, p % k)).collect();
            let m = ConfusionMatrix::from_pairs(k, pairs.iter().copied());
            let (acc, f1) = brute(k, &pairs);
            prop_assert!((accuracy(&m).unwrap() - acc).abs() <= 1e-12);
            prop_assert!((macro_f1(&m).unwrap() - f1).abs() <= 1e-12);
        }

        #[test]
        fn symmetric_binary_f1_equals_accuracy(a in 0u64..500, b in 0u64..500) {
            prop_assume!(a + b > 0);
            let m = cm(vec![vec![a, b], vec![b, a]]);
            prop_assert!((macro_f1(&m).unwrap() - accuracy(&m).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn aggregation_is_permutation_invariant(
            votes in prop::collection::vec((any::<bool>(), 0u8..=10), 1..12),
            seed: u64,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let preds: Vec<_> = votes.iter().map(|&(b, c)| pred(if b { Cephalic } else { NonCephalic }, c as f64 / 10.0)).collect();
            let mut shuffled = preds.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(aggregate_patient(&preds).unwrap().label, aggregate_patient(&shuffled).unwrap().label);
        }
    }
}
