//! Confusion matrix and the per-class and macro-averaged classification
//! metrics derived from it.
//!
//! Per-class counts use the one-vs-rest view: TP is the diagonal entry,
//! FN the rest of the row, FP the rest of the column and TN everything
//! else. A ratio with a zero denominator is reported as 0 and flagged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label lists differ in length ({truth} true, {predicted} predicted)")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("need at least {min} classes, got {got}")]
    TooFewClasses { min: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    /// Builds from row-major counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        let mut cm = Self::zeros(k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(MetricsError::LengthMismatch { truth: k, predicted: row.len() });
            }
            cm.counts[i * k..(i + 1) * k].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.k {
                return Err(MetricsError::LabelOutOfRange { label, classes: self.k });
            }
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn class_counts(&self, class: usize) -> ClassCounts {
        let tp = self.get(class, class);
        let row: u64 = (0..self.k).map(|j| self.get(class, j)).sum();
        let col: u64 = (0..self.k).map(|i| self.get(i, class)).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        ClassCounts { tp, fp, fn_, tn: self.total() - tp - fp - fn_ }
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

/// A ratio that may be undefined. Undefined values read as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self { value: 0.0, undefined: true }
        } else {
            Self { value: num as f64 / den as f64, undefined: false }
        }
    }
}

pub fn recall(tp: u64, fn_: u64) -> Metric {
    Metric::ratio(tp, tp + fn_)
}

pub fn precision(tp: u64, fp: u64) -> Metric {
    Metric::ratio(tp, tp + fp)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else if precision == recall {
        precision
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub label: Option<String>,
    pub support: u64,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub value: f64,
    /// Classes left out of the mean because the metric was undefined.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: usize,
    pub total: u64,
    /// `None` for an empty matrix.
    pub accuracy: Option<f64>,
    pub macro_precision: MacroAverage,
    pub macro_recall: MacroAverage,
    pub macro_f1: MacroAverage,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Attaches label names to the per-class entries.
    pub fn with_labels(mut self, labels: &[String]) -> Self {
        for c in &mut self.per_class {
            c.label = labels.get(c.class).cloned();
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

fn macro_mean(values: impl Iterator<Item = Metric>) -> MacroAverage {
    let (mut sum, mut n, mut excluded) = (0.0, 0usize, 0usize);
    for m in values {
        if m.undefined {
            excluded += 1;
        } else {
            sum += m.value;
            n += 1;
        }
    }
    MacroAverage { value: if n == 0 { 0.0 } else { sum / n as f64 }, excluded }
}

/// Per-class metrics plus their unweighted means over defined classes.
///
/// F1 is undefined only when both precision and recall are.
pub fn macro_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.classes() < 2 {
        return Err(MetricsError::TooFewClasses { min: 2, got: cm.classes() });
    }
    let per_class: Vec<ClassReport> = (0..cm.classes())
        .map(|c| {
            let n = cm.class_counts(c);
            let p = precision(n.tp, n.fp);
            let r = recall(n.tp, n.fn_);
            ClassReport {
                class: c,
                label: None,
                support: n.tp + n.fn_,
                precision: p,
                recall: r,
                f1: Metric { value: f1(p.value, r.value), undefined: p.undefined && r.undefined },
            }
        })
        .collect();
    Ok(MetricsReport {
        classes: cm.classes(),
        total: cm.total(),
        accuracy: accuracy(cm).ok(),
        macro_precision: macro_mean(per_class.iter().map(|c| c.precision)),
        macro_recall: macro_mean(per_class.iter().map(|c| c.recall)),
        macro_f1: macro_mean(per_class.iter().map(|c| c.f1)),
        per_class,
        confusion: cm.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(accuracy(&cm).unwrap(), 0.75);
    }

    #[test]
    fn all_correct_is_diagonal() {
        let labels = [0, 1, 2, 2, 1];
        let cm = confusion(&labels, &labels, 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
    }

    #[test]
    fn empty_lists() {
        let cm = confusion(&[], &[], 4).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(accuracy(&cm), Err(MetricsError::Empty));
    }

    #[test]
    fn label_out_of_range() {
        assert_eq!(
            confusion(&[0, 2], &[0, 1], 2),
            Err(MetricsError::LabelOutOfRange { label: 2, classes: 2 })
        );
    }

    #[test]
    fn recall_precision_examples() {
        assert_eq!(recall(5, 0), Metric { value: 1.0, undefined: false });
        assert_eq!(recall(3, 1).value, 0.75);
        assert_eq!(recall(0, 0), Metric { value: 0.0, undefined: true });
        assert_eq!(precision(5, 0).value, 1.0);
        assert_eq!(precision(3, 1).value, 0.75);
        assert_eq!(precision(0, 0), Metric { value: 0.0, undefined: true });
    }

    #[test]
    fn f1_examples() {
        assert_eq!(f1(0.4, 0.4), 0.4);
        assert!((f1(1.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn perfect_35_class_report() {
        let labels: Vec<usize> = (0..35).flat_map(|c| [c, c]).collect();
        let r = macro_report(&confusion(&labels, &labels, 35).unwrap()).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        for m in [&r.macro_precision, &r.macro_recall, &r.macro_f1] {
            assert_eq!(m.value, 1.0);
            assert_eq!(m.excluded, 0);
        }
    }

    #[test]
    fn never_predicted_class_is_excluded_from_precision_mean() {
        // class 2 has support but is never predicted; class 1 never occurs.
        let cm = ConfusionMatrix::from_rows(&[vec![2, 0, 0], vec![0, 0, 0], vec![1, 0, 0]]).unwrap();
        let r = macro_report(&cm).unwrap();
        assert!(r.per_class[1].precision.undefined && r.per_class[1].recall.undefined);
        assert!(r.per_class[1].f1.undefined);
        assert!(r.per_class[2].precision.undefined && !r.per_class[2].recall.undefined);
        assert!(!r.per_class[2].f1.undefined);
        assert_eq!(r.macro_precision.excluded, 2);
        assert!((r.macro_precision.value - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.macro_recall.excluded, 1);
        assert_eq!(r.macro_recall.value, 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(macro_report(&ConfusionMatrix::zeros(1)).is_err());
    }

    #[test]
    fn json_has_documented_fields() {
        let cm = confusion(&[0, 1], &[0, 0], 2).unwrap();
        let labels = vec!["1".to_string(), "2".to_string()];
        let v: serde_json::Value = serde_json::from_str(&macro_report(&cm).unwrap().with_labels(&labels).to_json()).unwrap();
        for key in ["classes", "total", "accuracy", "macro_precision", "macro_recall", "macro_f1", "per_class", "confusion"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["per_class"][1]["label"], "2");
        assert_eq!(v["per_class"][1]["recall"]["undefined"], false);
    }

    fn matrix(k: usize) -> impl Strategy<Value = ConfusionMatrix> {
        proptest::collection::vec(0u64..6, k * k).prop_map(move |c| ConfusionMatrix { k, counts: c })
    }

    proptest! {
        #[test]
        fn one_vs_rest_counts_cover_total(cm in matrix(5)) {
            for c in 0..5 {
                let n = cm.class_counts(c);
                prop_assert_eq!(n.tp + n.fp + n.fn_ + n.tn, cm.total());
            }
        }

        #[test]
        fn accuracy_is_sum_of_tp(cm in matrix(4)) {
            prop_assume!(cm.total() > 0);
            let tp: u64 = (0..4).map(|c| cm.class_counts(c).tp).sum();
            prop_assert_eq!(accuracy(&cm).unwrap(), tp as f64 / cm.total() as f64);
        }

        #[test]
        fn f1_between_min_and_max(p in 0.001f64..=1.0, r in 0.001f64..=1.0) {
            let f = f1(p, r);
            prop_assert!(f >= p.min(r) - 1e-15 && f <= p.max(r) + 1e-15);
        }

        #[test]
        fn report_values_in_unit_range(cm in matrix(6)) {
            let r = macro_report(&cm).unwrap();
            for c in &r.per_class {
                for m in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&m.value));
                }
            }
        }

        #[test]
        fn permutation_invariant(cm in matrix(5), seed in any::<u64>()) {
            let mut perm: Vec<usize> = (0..5).collect();
            crate::nn::Rng::new(seed).shuffle(&mut perm);
            let mut permuted = ConfusionMatrix::zeros(5);
            for i in 0..5 {
                for j in 0..5 {
                    permuted.counts[perm[i] * 5 + perm[j]] = cm.get(i, j);
                }
            }
            let a = macro_report(&cm).unwrap();
            let b = macro_report(&permuted).unwrap();
            for (x, y) in [(&a.macro_precision, &b.macro_precision), (&a.macro_recall, &b.macro_recall), (&a.macro_f1, &b.macro_f1)] {
                prop_assert!((x.value - y.value).abs() < 1e-12);
                prop_assert_eq!(x.excluded, y.excluded);
            }
            prop_assert_eq!(a.accuracy, b.accuracy);
        }
    }
}
