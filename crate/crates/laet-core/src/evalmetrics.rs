//! Classification and regression metrics: accuracy, micro/macro F1, Matthews
//! correlation coefficient, and RMSE.

use crate::error::{Error, Result};

/// Round to the six decimal places used everywhere metrics are reported.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// k x k count matrix; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    /// Tally predictions against labels. The class count is inferred from
    /// the largest index present.
    pub fn from_predictions(preds: &[usize], labels: &[usize]) -> Result<Self> {
        if preds.is_empty() || preds.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction/label lengths {} vs {} (must be equal and non-zero)",
                preds.len(),
                labels.len()
            )));
        }
        let k = preds
            .iter()
            .chain(labels)
            .copied()
            .max()
            .unwrap_or(0)
            + 1;
        let mut counts = vec![0usize; k * k];
        for (&p, &y) in preds.iter().zip(labels) {
            counts[y * k + p] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> usize {
        self.counts[true_class * self.k + predicted]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    fn trace(&self) -> usize {
        (0..self.k).map(|c| self.count(c, c)).sum()
    }

    fn true_count(&self, c: usize) -> usize {
        (0..self.k).map(|p| self.count(c, p)).sum()
    }

    fn predicted_count(&self, c: usize) -> usize {
        (0..self.k).map(|t| self.count(t, c)).sum()
    }
}

/// Proportion of correct predictions.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::from_predictions(preds, labels)?;
    Ok(cm.trace() as f64 / cm.total() as f64)
}

/// Micro F1, macro F1 and per-class F1 values.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    pub per_class: Vec<f64>,
}

/// F1 scores with the standard zero conventions: a class with P + R = 0
/// scores 0, and the macro average runs over classes present in the labels
/// so absent classes cannot drag it down.
pub fn f1_scores(preds: &[usize], labels: &[usize]) -> Result<F1Scores> {
    let cm = ConfusionMatrix::from_predictions(preds, labels)?;
    let k = cm.classes();
    let mut per_class = Vec::with_capacity(k);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let mut tp_total = 0usize;
    let mut fp_total = 0usize;
    let mut fn_total = 0usize;
    for c in 0..k {
        let tp = cm.count(c, c);
        let fp = cm.predicted_count(c) - tp;
        let fn_ = cm.true_count(c) - tp;
        tp_total += tp;
        fp_total += fp;
        fn_total += fn_;
        let denom = 2 * tp + fp + fn_;
        let f1 = if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        };
        per_class.push(f1);
        if cm.true_count(c) > 0 {
            macro_sum += f1;
            macro_n += 1;
        }
    }
    let micro_denom = 2 * tp_total + fp_total + fn_total;
    let micro = if micro_denom == 0 {
        0.0
    } else {
        2.0 * tp_total as f64 / micro_denom as f64
    };
    Ok(F1Scores {
        micro,
        macro_: macro_sum / macro_n.max(1) as f64,
        per_class,
    })
}

/// Matthews correlation coefficient. Binary inputs use the classical
/// four-count formula; more classes use the multiclass generalization.
/// Any zero denominator factor yields 0.
pub fn mcc(preds: &[usize], labels: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::from_predictions(preds, labels)?;
    let k = cm.classes();
    if k < 2 {
        // A single observed class carries no correlation signal.
        return Ok(0.0);
    }
    if k == 2 {
        let tp = cm.count(1, 1) as f64;
        let tn = cm.count(0, 0) as f64;
        let fp = cm.count(0, 1) as f64;
        let fn_ = cm.count(1, 0) as f64;
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return Ok(0.0);
        }
        return Ok((tp * tn - fp * fn_) / denom.sqrt());
    }
    // Multiclass form: (c*s - sum(p_c * t_c)) /
    //   sqrt((s^2 - sum p_c^2)(s^2 - sum t_c^2))
    let s = cm.total() as f64;
    let c = cm.trace() as f64;
    let mut pt = 0.0;
    let mut pp = 0.0;
    let mut tt = 0.0;
    for class in 0..k {
        let p = cm.predicted_count(class) as f64;
        let t = cm.true_count(class) as f64;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let denom = (s * s - pp) * (s * s - tt);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    Ok((c * s - pt) / denom.sqrt())
}

/// Root mean squared error of scalar predictions.
pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction/target lengths {} vs {} (must be equal and non-zero)",
            preds.len(),
            targets.len()
        )));
    }
    let mse: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / preds.len() as f64;
    Ok(mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 1, 0, 0], &[1, 1, 1, 0]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn f1_examples() {
        let perfect = f1_scores(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(perfect.micro, 1.0);
        assert_eq!(perfect.macro_, 1.0);

        // Class 1: precision 0.75 (3 of 4 predicted), recall 0.6 (3 of 5
        // true) -> F1 = 2*0.45/1.35 = 2/3.
        let preds = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let scores = f1_scores(&preds, &labels).unwrap();
        assert!((scores.per_class[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mcc_examples() {
        assert_eq!(mcc(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap(), 1.0);

        // TP=3, TN=4, FP=1, FN=2 -> 10/sqrt(600)
        let preds = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let value = mcc(&preds, &labels).unwrap();
        assert!((value - 10.0 / 600.0f64.sqrt()).abs() < 1e-12);

        // Constant predictor: zero factors -> 0 by convention.
        assert_eq!(mcc(&[1, 1, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let v = rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!((v - 2.5f64.sqrt()).abs() < 1e-12);
        // Shifting both sequences leaves RMSE unchanged.
        let shifted = rmse(&[101.0, 102.0], &[102.0, 104.0]).unwrap();
        assert!((v - shifted).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_do_not_drag_macro_f1() {
        // Labels only use classes 0 and 1, predictions mention class 2.
        let scores = f1_scores(&[0, 1, 2, 1], &[0, 1, 1, 1]).unwrap();
        // Macro averages over classes 0 and 1 only.
        let expected = (scores.per_class[0] + scores.per_class[1]) / 2.0;
        assert!((scores.macro_ - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn micro_f1_equals_accuracy_single_label(
            seq in proptest::collection::vec((0usize..4, 0usize..4), 1..60)
        ) {
            let preds: Vec<usize> = seq.iter().map(|(p, _)| *p).collect();
            let labels: Vec<usize> = seq.iter().map(|(_, y)| *y).collect();
            let acc = accuracy(&preds, &labels).unwrap();
            let f1 = f1_scores(&preds, &labels).unwrap();
            prop_assert!((acc - f1.micro).abs() < 1e-15);
        }

        #[test]
        fn metrics_invariant_under_relabeling(
            seq in proptest::collection::vec((0usize..3, 0usize..3), 1..60)
        ) {
            let preds: Vec<usize> = seq.iter().map(|(p, _)| *p).collect();
            let labels: Vec<usize> = seq.iter().map(|(_, y)| *y).collect();
            // Apply the permutation 0->2, 1->0, 2->1 to both sequences.
            let perm = [2usize, 0, 1];
            let preds_p: Vec<usize> = preds.iter().map(|&p| perm[p]).collect();
            let labels_p: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
            prop_assert!((accuracy(&preds, &labels).unwrap()
                - accuracy(&preds_p, &labels_p).unwrap()).abs() < 1e-15);
            prop_assert!((mcc(&preds, &labels).unwrap()
                - mcc(&preds_p, &labels_p).unwrap()).abs() < 1e-12);
            let a = f1_scores(&preds, &labels).unwrap();
            let b = f1_scores(&preds_p, &labels_p).unwrap();
            prop_assert!((a.macro_ - b.macro_).abs() < 1e-12);
            prop_assert!((a.micro - b.micro).abs() < 1e-12);
        }
    }
}
