//! mAP and thresholded F1-family metrics against fully labeled data.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::check_labels;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at each positive's rank. Equal scores rank by ascending index.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            context: "average_precision",
            expected: (labels.len(), 1),
            found: (scores.len(), 1),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score in average_precision".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps ascending index among ties.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// `None` for classes without positives.
    pub per_class_ap: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
}

/// Mean AP over classes with at least one positive.
pub fn mean_average_precision(
    probs: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, u8>,
) -> Result<MapResult> {
    Error::check_shape("mean_average_precision", truth.dim(), probs.dim())?;
    check_labels(truth)?;
    let k = truth.ncols();
    let mut per_class_ap = Vec::with_capacity(k);
    let mut excluded_classes = Vec::new();
    for j in 0..k {
        let labels: Vec<u8> = truth.column(j).to_vec();
        if labels.iter().all(|&y| y == 0) {
            per_class_ap.push(None);
            excluded_classes.push(j);
            continue;
        }
        let scores: Vec<f64> = probs.column(j).to_vec();
        per_class_ap.push(Some(average_precision(&scores, &labels)?));
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::UndefinedMetric(
            "mAP undefined: no class has a positive label".into(),
        ));
    }
    Ok(MapResult {
        map: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class_ap,
        excluded_classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    #[serde(rename = "or")]
    pub or_: f64,
    pub of1: f64,
    /// Quantities whose denominator was empty and were set to 0.
    pub zeroed: Vec<String>,
}

fn ratio(num: f64, den: f64, name: impl FnOnce() -> String, zeroed: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        zeroed.push(name());
        0.0
    } else {
        num / den
    }
}

/// Per-class and overall precision, recall and F1 for predictions `p >= threshold`.
/// CF1 is the harmonic mean of the class-averaged CP and CR.
pub fn f1_family(
    probs: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, u8>,
    threshold: f64,
) -> Result<F1Report> {
    Error::check_shape("f1_family", truth.dim(), probs.dim())?;
    check_labels(truth)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config(format!(
            "metric threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let k = truth.ncols();
    let mut zeroed = Vec::new();
    let (mut tp_all, mut pred_all, mut pos_all) = (0usize, 0usize, 0usize);
    let (mut cp_sum, mut cr_sum) = (0.0, 0.0);
    for j in 0..k {
        let (mut tp, mut pred, mut pos) = (0usize, 0usize, 0usize);
        for (&p, &y) in probs.column(j).iter().zip(truth.column(j).iter()) {
            let hit = p >= threshold;
            pred += usize::from(hit);
            pos += usize::from(y == 1);
            tp += usize::from(hit && y == 1);
        }
        cp_sum += ratio(tp as f64, pred as f64, || format!("cp[{j}]"), &mut zeroed);
        cr_sum += ratio(tp as f64, pos as f64, || format!("cr[{j}]"), &mut zeroed);
        tp_all += tp;
        pred_all += pred;
        pos_all += pos;
    }
    let (cp, cr) = if k == 0 {
        (0.0, 0.0)
    } else {
        (cp_sum / k as f64, cr_sum / k as f64)
    };
    let cf1 = ratio(2.0 * cp * cr, cp + cr, || "cf1".into(), &mut zeroed);
    let op = ratio(tp_all as f64, pred_all as f64, || "op".into(), &mut zeroed);
    let or_ = ratio(tp_all as f64, pos_all as f64, || "or".into(), &mut zeroed);
    let of1 = ratio(2.0 * op * or_, op + or_, || "of1".into(), &mut zeroed);
    Ok(F1Report {
        cp,
        cr,
        cf1,
        op,
        or_,
        of1,
        zeroed,
    })
}

/// Everything reported for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub cf1: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub op: f64,
    #[serde(rename = "or")]
    pub or_: f64,
    pub threshold: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
    pub zeroed: Vec<String>,
}

pub fn evaluate(
    probs: ArrayView2<'_, f64>,
    truth: ArrayView2<'_, u8>,
    threshold: f64,
) -> Result<MetricsReport> {
    let map = mean_average_precision(probs, truth)?;
    let f1 = f1_family(probs, truth, threshold)?;
    Ok(MetricsReport {
        map: map.map,
        cf1: f1.cf1,
        of1: f1.of1,
        cp: f1.cp,
        cr: f1.cr,
        op: f1.op,
        or_: f1.or_,
        threshold,
        per_class_ap: map.per_class_ap,
        excluded_classes: map.excluded_classes,
        zeroed: f1.zeroed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    /// Precision at every positive computed by counting, for each positive,
    /// how many items rank at or above it.
    fn brute_ap(scores: &[f64], labels: &[u8]) -> f64 {
        let n = scores.len();
        let ahead =
            |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i);
        let mut total = 0.0;
        let mut pos = 0.0;
        for i in 0..n {
            if labels[i] != 1 {
                continue;
            }
            pos += 1.0;
            let rank = (0..n).filter(|&j| ahead(i, j)).count() as f64;
            let hits = (0..n).filter(|&j| ahead(i, j) && labels[j] == 1).count() as f64;
            total += hits / rank;
        }
        total / pos
    }

    #[test]
    fn ap_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(),
            1.0
        );
        let ap = average_precision(&[0.9, 0.8, 0.1], &[0, 1, 1]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(
            average_precision(&[0.1, 0.7, 0.3], &[1, 1, 1]).unwrap(),
            1.0
        );
        assert!(matches!(
            average_precision(&[0.1], &[0]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ties_rank_by_index() {
        // Positive at index 1 ranks after the negative at index 0.
        assert_eq!(average_precision(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.5, 0.5], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn map_examples() {
        let truth = array![[1u8, 0], [0, 1], [1, 1], [0, 0]];
        let perfect = truth.mapv(f64::from);
        assert_eq!(
            mean_average_precision(perfect.view(), truth.view())
                .unwrap()
                .map,
            1.0
        );
        let anti = truth.mapv(|y| 1.0 - f64::from(y));
        let r = mean_average_precision(anti.view(), truth.view()).unwrap();
        for ap in r.per_class_ap.iter().flatten() {
            assert!((ap - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-15);
        }
        let empty = array![[0u8, 1], [0, 0]];
        let r = mean_average_precision(Array2::zeros((2, 2)).view(), empty.view()).unwrap();
        assert_eq!(r.excluded_classes, vec![0]);
        assert!(
            mean_average_precision(Array2::zeros((2, 2)).view(), Array2::zeros((2, 2)).view())
                .is_err()
        );
    }

    #[test]
    fn map_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let probs = Array2::from_shape_fn((30, 6), |_| (rng.random_range(0..20) as f64) / 20.0);
        let truth = Array2::from_shape_fn((30, 6), |_| u8::from(rng.random_bool(0.3)));
        let r = mean_average_precision(probs.view(), truth.view()).unwrap();
        for j in 0..6 {
            let s = probs.column(j).to_vec();
            let y = truth.column(j).to_vec();
            if y.contains(&1) {
                assert!((r.per_class_ap[j].unwrap() - brute_ap(&s, &y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f1_examples() {
        let truth = array![[1u8, 0], [0, 1], [1, 1]];
        let r = f1_family(truth.mapv(f64::from).view(), truth.view(), 0.5).unwrap();
        assert_eq!((r.cf1, r.of1), (1.0, 1.0));
        let r = f1_family(Array2::zeros((3, 2)).view(), truth.view(), 0.5).unwrap();
        assert_eq!((r.op, r.or_, r.of1), (0.0, 0.0, 0.0));
        assert!(r.zeroed.contains(&"op".to_string()));
    }

    #[test]
    fn f1_matches_confusion_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let probs = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>());
        let truth = Array2::from_shape_fn((20, 5), |_| u8::from(rng.random_bool(0.4)));
        let r = f1_family(probs.view(), truth.view(), 0.5).unwrap();
        let (mut cps, mut crs, mut tpa, mut fpa, mut fna) = (vec![], vec![], 0.0, 0.0, 0.0);
        for j in 0..5 {
            let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
            for i in 0..20 {
                match (probs[[i, j]] >= 0.5, truth[[i, j]] == 1) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fnn += 1.0,
                    _ => {}
                }
            }
            cps.push(if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 });
            crs.push(if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 });
            tpa += tp;
            fpa += fp;
            fna += fnn;
        }
        let cp = cps.iter().sum::<f64>() / 5.0;
        let cr = crs.iter().sum::<f64>() / 5.0;
        let op = tpa / (tpa + fpa);
        let or_ = tpa / (tpa + fna);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(r.cp, cp) && close(r.cr, cr));
        assert!(close(r.cf1, 2.0 * cp * cr / (cp + cr)));
        assert!(close(r.op, op) && close(r.or_, or_));
        assert!(close(r.of1, 2.0 * op * or_ / (op + or_)));
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_transform(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
            labels[0] = 1;
            let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
            let a = average_precision(&scores, &labels).unwrap();
            let b = average_precision(&squashed, &labels).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((a - brute_ap(&scores, &labels)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn f1_invariant_under_sample_permutation(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let probs = Array2::from_shape_fn((12, 4), |_| rng.random::<f64>());
            let truth = Array2::from_shape_fn((12, 4), |_| u8::from(rng.random_bool(0.4)));
            let mut perm: Vec<usize> = (0..12).collect();
            perm.shuffle(&mut rng);
            let pp = probs.select(ndarray::Axis(0), &perm);
            let pt = truth.select(ndarray::Axis(0), &perm);
            let a = f1_family(probs.view(), truth.view(), 0.5).unwrap();
            let b = f1_family(pp.view(), pt.view(), 0.5).unwrap();
            prop_assert!((a.cf1 - b.cf1).abs() < 1e-12 && (a.of1 - b.of1).abs() < 1e-12);
            prop_assert!(a.of1 <= a.op.max(a.or_) + 1e-12);
            for v in [a.cp, a.cr, a.cf1, a.op, a.or_, a.of1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
