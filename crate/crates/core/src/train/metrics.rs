use crate::error::{Error, Result};

/// `a·b / (‖a‖‖b‖)`, defined as 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

/// Mann–Whitney AUC of positive vs negative scores with midranks for ties.
pub fn binary_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucReport {
    pub micro: f64,
    pub macro_avg: f64,
    /// Per-class AUC; `None` for classes without both positives and negatives.
    pub per_class: Vec<Option<f64>>,
}

impl AucReport {
    pub fn skipped(&self) -> Vec<usize> {
        self.per_class.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(i, _)| i).collect()
    }
}

/// One-vs-rest AUC over a `samples × classes` score matrix.
pub fn roc_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<AucReport> {
    let classes = scores.first().map_or(0, Vec::len);
    if classes < 2 {
        return Err(Error::Protocol("ROC AUC needs at least 2 classes".into()));
    }
    if scores.len() != labels.len() || scores.iter().any(|r| r.len() != classes) {
        return Err(Error::Protocol("score matrix and labels disagree in shape".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Protocol(format!("label {l} out of range for {classes} classes")));
    }
    if labels.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Protocol("all samples belong to one class".into()));
    }
    let (mut pos_all, mut neg_all) = (Vec::new(), Vec::new());
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (row, &l) in scores.iter().zip(labels) {
            if l == c {
                pos.push(row[c]);
            } else {
                neg.push(row[c]);
            }
        }
        per_class.push(binary_auc(&pos, &neg));
        pos_all.extend(pos);
        neg_all.extend(neg);
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let micro = binary_auc(&pos_all, &neg_all).ok_or_else(|| Error::Protocol("no positive or negative decisions".into()))?;
    Ok(AucReport { micro, macro_avg: valid.iter().sum::<f64>() / valid.len() as f64, per_class })
}

/// Subjects ordered by descending score, ties by ascending id.
pub fn rank_subjects(scores: &[(u32, f64)]) -> Vec<(u32, f64)> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// Cumulative match curve in percent from 1-based ranks, `k = 1..=max_k`.
pub fn cmc(ranks: &[usize], max_k: usize) -> Vec<f64> {
    (1..=max_k)
        .map(|k| {
            if ranks.is_empty() {
                0.0
            } else {
                100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn perfect_and_tied_auc() {
        let r = roc_auc(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0, 1]).unwrap();
        assert_eq!((r.micro, r.macro_avg), (1.0, 1.0));
        let r = roc_auc(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]], &[0, 1, 1]).unwrap();
        assert_eq!((r.micro, r.macro_avg), (0.5, 0.5));
    }

    #[test]
    fn one_class_input_rejected() {
        assert!(matches!(roc_auc(&[vec![0.1, 0.2], vec![0.3, 0.4]], &[1, 1]), Err(Error::Protocol(_))));
    }

    #[test]
    fn class_without_positives_is_skipped() {
        let r = roc_auc(&[vec![0.9, 0.1, 0.3], vec![0.2, 0.8, 0.1]], &[0, 1]).unwrap();
        assert_eq!(r.skipped(), vec![2]);
        assert_eq!(r.macro_avg, 1.0);
    }

    #[test]
    fn ranking_ties_by_id() {
        let r = rank_subjects(&[(5, 0.3), (2, 0.9), (1, 0.3)]);
        assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![2, 1, 5]);
    }

    #[test]
    fn cmc_is_monotone() {
        let c = cmc(&[1, 3, 2, 1], 4);
        assert_eq!(c, vec![50.0, 75.0, 100.0, 100.0]);
    }
}
