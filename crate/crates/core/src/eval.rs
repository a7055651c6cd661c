//! Positive-pair accuracy and recall of pseudo-labels against ground-truth
//! identities.
//!
//! A pair `(i, j)` is a gt pair when both instances share an identity and a
//! predicted pair when both carry the same (non-noise) label. Accuracy is
//! predicted-and-gt pairs over gt pairs; recall divides by predicted pairs.
//! Noise instances still count toward gt pairs, so an unlabeled instance
//! lowers accuracy instead of disappearing from it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelQuartet;
use crate::types::{HardLabelVector, Modality};

/// Identity of every instance, per modality. Values are opaque.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ids_v: Vec<i64>,
    pub ids_r: Vec<i64>,
}

impl GroundTruth {
    pub fn new(ids_v: Vec<i64>, ids_r: Vec<i64>) -> Self {
        Self { ids_v, ids_r }
    }

    pub fn ids(&self, modality: Modality) -> &[i64] {
        match modality {
            Modality::Visible => &self.ids_v,
            Modality::Infrared => &self.ids_r,
        }
    }
}

/// Integer pair counts behind one accuracy/recall pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    /// Pairs with equal predictions and equal identities.
    pub matched: u64,
    /// Pairs with equal identities.
    pub gt_pairs: u64,
    /// Pairs with equal, non-noise predictions.
    pub pred_pairs: u64,
}

impl PairCounts {
    pub fn accuracy(&self) -> Option<f64> {
        (self.gt_pairs > 0).then(|| self.matched as f64 / self.gt_pairs as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.pred_pairs > 0).then(|| self.matched as f64 / self.pred_pairs as f64)
    }
}

fn check_lengths(pred: &HardLabelVector, gt: &[i64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth ids",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn tally<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> HashMap<K, u64> {
    let mut m = HashMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn dot<K: std::hash::Hash + Eq>(a: &HashMap<K, u64>, b: &HashMap<K, u64>) -> u64 {
    a.iter().map(|(k, &x)| x * b.get(k).copied().unwrap_or(0)).sum()
}

/// Counts over all `(i, j)` with `i` from side a and `j` from side b.
pub fn pair_counts(
    pred_a: &HardLabelVector,
    pred_b: &HardLabelVector,
    gt_a: &[i64],
    gt_b: &[i64],
) -> Result<PairCounts> {
    check_lengths(pred_a, gt_a)?;
    check_lengths(pred_b, gt_b)?;
    let labeled = |pred: &HardLabelVector| {
        pred.labels()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l)))
            .collect::<Vec<_>>()
    };
    let (la, lb) = (labeled(pred_a), labeled(pred_b));
    let gt = dot(&tally(gt_a.iter()), &tally(gt_b.iter()));
    let pred = dot(
        &tally(la.iter().map(|&(_, l)| l)),
        &tally(lb.iter().map(|&(_, l)| l)),
    );
    let matched = dot(
        &tally(la.iter().map(|&(i, l)| (l, gt_a[i]))),
        &tally(lb.iter().map(|&(i, l)| (l, gt_b[i]))),
    );
    Ok(PairCounts {
        matched,
        gt_pairs: gt,
        pred_pairs: pred,
    })
}

/// Counts within one modality, optionally leaving out the `i = j` pairs.
pub fn intra_pair_counts(
    pred: &HardLabelVector,
    gt: &[i64],
    include_self_pairs: bool,
) -> Result<PairCounts> {
    let mut c = pair_counts(pred, pred, gt, gt)?;
    if !include_self_pairs {
        let labeled = (pred.len() - pred.noise_count()) as u64;
        c.matched -= labeled;
        c.pred_pairs -= labeled;
        c.gt_pairs -= pred.len() as u64;
    }
    Ok(c)
}

pub fn pair_accuracy(
    pred_a: &HardLabelVector,
    pred_b: &HardLabelVector,
    gt_a: &[i64],
    gt_b: &[i64],
) -> Result<Option<f64>> {
    Ok(pair_counts(pred_a, pred_b, gt_a, gt_b)?.accuracy())
}

pub fn pair_recall(
    pred_a: &HardLabelVector,
    pred_b: &HardLabelVector,
    gt_a: &[i64],
    gt_b: &[i64],
) -> Result<Option<f64>> {
    Ok(pair_counts(pred_a, pred_b, gt_a, gt_b)?.recall())
}

/// The eight label-quality metrics. `None` marks an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub intra_acc_v: Option<f64>,
    pub intra_acc_r: Option<f64>,
    pub cross_acc_v: Option<f64>,
    pub cross_acc_r: Option<f64>,
    pub intra_re_v: Option<f64>,
    pub intra_re_r: Option<f64>,
    pub cross_re_v: Option<f64>,
    pub cross_re_r: Option<f64>,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 8] = [
        "intra_acc_v",
        "intra_acc_r",
        "cross_acc_v",
        "cross_acc_r",
        "intra_re_v",
        "intra_re_r",
        "cross_re_v",
        "cross_re_r",
    ];

    /// Values in the order of [`MetricsReport::FIELDS`].
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            self.intra_acc_v,
            self.intra_acc_r,
            self.cross_acc_v,
            self.cross_acc_r,
            self.intra_re_v,
            self.intra_re_r,
            self.cross_re_v,
            self.cross_re_r,
        ]
    }
}

/// Hard labels of the four label sets, by role.
#[derive(Debug, Clone, PartialEq)]
pub struct HardQuartet {
    pub intra_v: HardLabelVector,
    pub cross_r: HardLabelVector,
    pub intra_r: HardLabelVector,
    pub cross_v: HardLabelVector,
}

impl HardQuartet {
    pub fn from_soft(labels: &LabelQuartet) -> Self {
        Self {
            intra_v: labels.intra_v.hard(),
            cross_r: labels.cross_r.hard(),
            intra_r: labels.intra_r.hard(),
            cross_v: labels.cross_v.hard(),
        }
    }
}

/// Intra metrics pair each modality's cross labels with themselves; cross
/// metrics pair one modality's intra labels with the other's cross labels in
/// the same label space.
pub fn report_from_hard(
    h: &HardQuartet,
    gt: &GroundTruth,
    include_self_pairs: bool,
) -> Result<MetricsReport> {
    if h.intra_v.k() != h.cross_r.k() || h.intra_r.k() != h.cross_v.k() {
        return Err(Error::shape("label spaces of paired label sets differ"));
    }
    let intra_v = intra_pair_counts(&h.cross_v, &gt.ids_v, include_self_pairs)?;
    let intra_r = intra_pair_counts(&h.cross_r, &gt.ids_r, include_self_pairs)?;
    let cross_v = pair_counts(&h.intra_v, &h.cross_r, &gt.ids_v, &gt.ids_r)?;
    let cross_r = pair_counts(&h.cross_v, &h.intra_r, &gt.ids_v, &gt.ids_r)?;
    Ok(MetricsReport {
        intra_acc_v: intra_v.accuracy(),
        intra_acc_r: intra_r.accuracy(),
        cross_acc_v: cross_v.accuracy(),
        cross_acc_r: cross_r.accuracy(),
        intra_re_v: intra_v.recall(),
        intra_re_r: intra_r.recall(),
        cross_re_v: cross_v.recall(),
        cross_re_r: cross_r.recall(),
    })
}

/// Hardens the four label sets and computes every metric.
pub fn full_report(
    labels: &LabelQuartet,
    gt: &GroundTruth,
    include_self_pairs: bool,
) -> Result<MetricsReport> {
    let checks = [
        (&labels.intra_v, Modality::Visible, Modality::Visible),
        (&labels.cross_r, Modality::Infrared, Modality::Visible),
        (&labels.intra_r, Modality::Infrared, Modality::Infrared),
        (&labels.cross_v, Modality::Visible, Modality::Infrared),
    ];
    for (l, modality, space) in checks {
        if l.modality != modality || l.space != space {
            return Err(Error::ModeMismatch(format!(
                "expected {modality} labels in the {space} space, got {} labels in the {} space",
                l.modality, l.space
            )));
        }
    }
    report_from_hard(&HardQuartet::from_soft(labels), gt, include_self_pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hard(v: &[Option<usize>], k: usize) -> HardLabelVector {
        HardLabelVector::new(v.to_vec(), k).unwrap()
    }

    fn brute(a: &[Option<usize>], b: &[Option<usize>], ga: &[i64], gb: &[i64]) -> PairCounts {
        let mut c = PairCounts::default();
        for i in 0..a.len() {
            for j in 0..b.len() {
                let same_pred = a[i].is_some() && a[i] == b[j];
                let same_gt = ga[i] == gb[j];
                c.matched += (same_pred && same_gt) as u64;
                c.gt_pairs += same_gt as u64;
                c.pred_pairs += same_pred as u64;
            }
        }
        c
    }

    #[test]
    fn isomorphic_labeling_is_perfect() {
        let p = hard(&[Some(2), Some(2), Some(0), Some(1)], 3);
        let gt = [7, 7, 3, 9];
        assert_eq!(pair_accuracy(&p, &p, &gt, &gt).unwrap(), Some(1.0));
        assert_eq!(pair_recall(&p, &p, &gt, &gt).unwrap(), Some(1.0));
    }

    #[test]
    fn swapped_cross_labels_score_zero() {
        let v = hard(&[Some(0), Some(1)], 2);
        let r = hard(&[Some(1), Some(0)], 2);
        let gt = [0, 1];
        assert_eq!(pair_accuracy(&v, &r, &gt, &gt).unwrap(), Some(0.0));
    }

    #[test]
    fn hand_counted_pairs() {
        let v = [Some(0), Some(0), Some(1)];
        let r = [Some(0), Some(1), Some(1)];
        let (gv, gr) = ([1, 1, 2], [1, 2, 2]);
        let c = pair_counts(&hard(&v, 2), &hard(&r, 2), &gv, &gr).unwrap();
        assert_eq!(c, brute(&v, &r, &gv, &gr));
        assert_eq!(c.accuracy(), Some(4.0 / 4.0));
        let r_bad = [Some(1), Some(1), Some(1)];
        let c = pair_counts(&hard(&v, 2), &hard(&r_bad, 2), &gv, &gr).unwrap();
        assert_eq!(c.accuracy(), Some(2.0 / 4.0));
        assert_eq!(c.recall(), Some(2.0 / 3.0));
    }

    #[test]
    fn single_cluster_recall() {
        let p = hard(&[Some(0); 4], 1);
        let gt = [0, 0, 1, 1];
        let c = intra_pair_counts(&p, &gt, true).unwrap();
        assert_eq!(c.recall(), Some(8.0 / 16.0));
        let c = intra_pair_counts(&p, &gt, false).unwrap();
        assert_eq!(c.recall(), Some(4.0 / 12.0));
    }

    #[test]
    fn distinct_labels_recall_from_self_pairs() {
        let p = hard(&[Some(0), Some(1), Some(2)], 3);
        let gt = [0, 0, 0];
        let c = intra_pair_counts(&p, &gt, true).unwrap();
        assert_eq!(c.pred_pairs, 3);
        assert_eq!(c.recall(), Some(1.0));
        assert_eq!(intra_pair_counts(&p, &gt, false).unwrap().recall(), None);
    }

    #[test]
    fn noise_counts_only_in_gt_pairs() {
        let p = hard(&[Some(0), None], 1);
        let gt = [5, 5];
        let c = intra_pair_counts(&p, &gt, true).unwrap();
        assert_eq!(c, PairCounts { matched: 1, gt_pairs: 4, pred_pairs: 1 });
    }

    #[test]
    fn undefined_without_gt_pairs() {
        let v = hard(&[Some(0)], 1);
        assert_eq!(pair_accuracy(&v, &v, &[1], &[2]).unwrap(), None);
    }

    #[test]
    fn length_mismatch() {
        let v = hard(&[Some(0)], 1);
        assert!(pair_accuracy(&v, &v, &[1, 2], &[1]).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Option<usize>>, Vec<Option<usize>>, Vec<i64>, Vec<i64>)> {
        (1usize..25, 1usize..25).prop_flat_map(|(na, nb)| {
            let label = prop::option::weighted(0.85, 0usize..4);
            (
                prop::collection::vec(label.clone(), na),
                prop::collection::vec(label, nb),
                prop::collection::vec(0i64..4, na),
                prop::collection::vec(0i64..4, nb),
            )
        })
    }

    proptest! {
        #[test]
        fn counting_matches_enumeration((a, b, ga, gb) in arb_case()) {
            let c = pair_counts(&hard(&a, 4), &hard(&b, 4), &ga, &gb).unwrap();
            prop_assert_eq!(c, brute(&a, &b, &ga, &gb));
        }

        #[test]
        fn relabeling_invariant((a, b, ga, gb) in arb_case(), shift in 1usize..4) {
            let relabel = |v: &[Option<usize>]| -> Vec<Option<usize>> {
                v.iter().map(|l| l.map(|x| (x + shift) % 4)).collect()
            };
            let before = pair_counts(&hard(&a, 4), &hard(&b, 4), &ga, &gb).unwrap();
            let after = pair_counts(&hard(&relabel(&a), 4), &hard(&relabel(&b), 4), &ga, &gb).unwrap();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn accuracy_equals_recall_on_gt_partition(gt in prop::collection::vec(0i64..5, 1..30)) {
            let labels: Vec<Option<usize>> = gt.iter().map(|&g| Some(g as usize)).collect();
            let c = intra_pair_counts(&hard(&labels, 5), &gt, true).unwrap();
            prop_assert_eq!(c.accuracy(), c.recall());
        }
    }
}
