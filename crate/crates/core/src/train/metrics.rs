use super::eval::CaseScore;
use crate::dataio::Label;

/// Case-level metrics with malignant as the positive class. Ratios whose
/// denominator is zero are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize, auc: Option<f64>) -> Self {
        Self {
            auc,
            accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            tp,
            fp,
            fn_,
            tn,
        }
    }

    /// The five headline values in CSV column order.
    pub fn values(&self) -> [Option<f64>; 5] {
        [self.auc, self.accuracy, self.precision, self.recall, self.specificity]
    }
}

pub fn confusion_metrics(scores: &[CaseScore]) -> MetricsReport {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for s in scores {
        match (s.pred_label, s.true_label) {
            (Label::Malignant, Label::Malignant) => tp += 1,
            (Label::Malignant, Label::Benign) => fp += 1,
            (Label::Benign, Label::Malignant) => fn_ += 1,
            (Label::Benign, Label::Benign) => tn += 1,
        }
    }
    let probs: Vec<f64> = scores.iter().map(|s| s.case_prob).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.true_label.is_positive()).collect();
    MetricsReport::from_counts(tp, fp, fn_, tn, auc(&probs, &labels))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. `None` unless both classes are present.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len(), "auc: scores and labels differ in length");
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Twice the concordance count, kept integral so the result is exact.
    let mut twice: u128 = 0;
    let mut neg_below = 0u128;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let (mut pos, mut neg) = (0u128, 0u128);
        for &k in &idx[i..j] {
            if positive[k] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        twice += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Some(twice as f64 / (2 * n_pos * n_neg) as f64)
}
