use super::{CaseRecord, DataError, Label};
use crate::numeric::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<CaseRecord>,
    pub val: Vec<CaseRecord>,
}

/// Stratified seeded split. Per class, `floor(ratio·n)` cases go to training
/// and the remainder to validation; membership ignores input order.
pub fn split_cases(cases: &[CaseRecord], ratio: f64, seed: u64) -> Result<DatasetSplit, DataError> {
    if cases.is_empty() {
        return Err(DataError::Split("no cases".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::Split(format!("ratio {ratio} outside [0,1]")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in Label::ALL {
        let mut group: Vec<&CaseRecord> = cases.iter().filter(|c| c.label == label).collect();
        group.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        Rng::derived(seed, &format!("split/{label}")).shuffle(&mut group);
        let n_train = ((ratio * group.len() as f64) + 1e-9).floor() as usize;
        train.extend(group[..n_train].iter().map(|c| (*c).clone()));
        val.extend(group[n_train..].iter().map(|c| (*c).clone()));
    }
    train.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    val.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    Ok(DatasetSplit { train, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cases(malignant: usize, benign: usize) -> Vec<CaseRecord> {
        (0..malignant + benign)
            .map(|i| CaseRecord {
                case_id: format!("case{i:04}"),
                label: if i < malignant { Label::Malignant } else { Label::Benign },
                frame_paths: vec![],
                frame_period_s: 0.1,
            })
            .collect()
    }

    fn count(v: &[CaseRecord], l: Label) -> usize {
        v.iter().filter(|c| c.label == l).count()
    }

    #[test]
    fn clinical_cohort_counts() {
        let s = split_cases(&cases(219, 90), 0.8, 1).unwrap();
        assert_eq!(count(&s.train, Label::Malignant), 175);
        assert_eq!(count(&s.train, Label::Benign), 72);
        assert_eq!(count(&s.val, Label::Malignant), 44);
        assert_eq!(count(&s.val, Label::Benign), 18);
        assert_eq!(s.train.len(), 247);
    }

    #[test]
    fn single_class_ten_cases() {
        let s = split_cases(&cases(10, 0), 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (8, 2));
    }

    #[test]
    fn partition_deterministic_and_order_free() {
        let all = cases(13, 7);
        let a = split_cases(&all, 0.8, 5).unwrap();
        assert_eq!(a, split_cases(&all, 0.8, 5).unwrap());
        let mut rev = all.clone();
        rev.reverse();
        assert_eq!(a, split_cases(&rev, 0.8, 5).unwrap());
        let ids: HashSet<_> = a.train.iter().chain(&a.val).map(|c| c.case_id.clone()).collect();
        assert_eq!(ids.len(), all.len());
        assert_ne!(a, split_cases(&all, 0.8, 6).unwrap());
    }
}
