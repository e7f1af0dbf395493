use super::{RankerError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub f1: f64,
    pub threshold: f64,
    pub instances: usize,
    pub positives: usize,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(RankerError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RankerError::NonFiniteScore);
    }
    Ok(())
}

/// Area under the ROC curve by rank sum with midranks for ties.
///
/// Ranks are kept doubled so every intermediate is an integer; the result is
/// `(2·R⁺ − P(P+1)) / (2·P·N)` with `R⁺` the positives' (doubled) rank sum.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(RankerError::SingleClassTestSet);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank (i+1+j)/2
        let doubled = (i + 1 + j) as u128;
        let p_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank2_pos += doubled * p_in_group;
        i = j;
    }
    let num = rank2_pos - pos * (pos + 1);
    Ok(num as f64 / (2 * pos * neg) as f64)
}

/// F1 of the positive class, predicting positive when `score >= threshold`.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

pub fn report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    Ok(EvalReport {
        auc: auc(scores, labels)?,
        f1: f1(scores, labels, threshold)?,
        threshold,
        instances: scores.len(),
        positives: labels.iter().filter(|&&l| l == 1).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1;
                    twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
                }
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn hand_cases() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        let s = [0.8, 0.4, 0.4, 0.2, 0.9];
        let l = [1, 0, 1, 0, 0];
        assert_eq!(auc(&s, &l).unwrap(), pairwise(&s, &l));
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(RankerError::SingleClassTestSet)));
        assert!(matches!(auc(&[0.1], &[1, 0]), Err(RankerError::LengthMismatch { .. })));
        assert!(matches!(auc(&[f64::NAN, 0.2], &[1, 0]), Err(RankerError::NonFiniteScore)));
    }

    #[test]
    fn f1_counts() {
        // tp, fp, fn = 1, 1, 1
        assert_eq!(f1(&[0.9, 0.7, 0.2, 0.1], &[1, 0, 1, 0], 0.5).unwrap(), 0.5);
        // threshold is inclusive
        assert_eq!(f1(&[0.5], &[1], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.2], &[1, 0], 0.5).unwrap(), 0.0);
        // p = 2/3, r = 1/2
        let p = 2.0 / 3.0;
        let r = 0.5;
        let got = f1(&[0.9, 0.8, 0.7, 0.1, 0.2], &[1, 1, 0, 1, 1], 0.5).unwrap();
        assert!((got - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rank_sum_equals_pairwise(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            // coarse scores force plenty of ties
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 7.0).collect();
            let labels: Vec<u8> = data.iter().map(|d| d.1 as u8).collect();
            let both = labels.contains(&0) && labels.contains(&1);
            prop_assume!(both);
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise(&scores, &labels));
        }
    }
}
