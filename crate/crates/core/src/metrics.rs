//! Confusion-matrix metrics, ROC curves and rank-based AUC, and the
//! outlier-fraction sensitivity sweep. The positive class is "outlier".

use crate::error::{Error, Result};
use crate::knn::top_m_flagged;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// ROC curve points from (0,0) to (1,1) with nondecreasing FPR, plus the
/// rank-based AUC (ties get half credit).
#[derive(Debug, Clone)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Trapezoidal area under the stored points.
    pub fn trapezoid_area(&self) -> f64 {
        let mut area = 0.0;
        for pair in self.points.windows(2) {
            let (x0, y0) = pair[0];
            let (x1, y1) = pair[1];
            area += (x1 - x0) * (y0 + y1) / 2.0;
        }
        area
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Seconds; filled in by the caller that timed the phase.
    pub wall_time: f64,
}

/// Count TP/FP/TN/FN from a flagged index set against truth flags.
pub fn confusion(flagged: &[usize], truth: &[bool]) -> Result<ConfusionCounts> {
    let mut is_flagged = vec![false; truth.len()];
    for &i in flagged {
        if i >= truth.len() {
            return Err(Error::Data(format!(
                "flagged index {i} out of range for {} samples",
                truth.len()
            )));
        }
        is_flagged[i] = true;
    }
    let mut c = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for (&f, &t) in is_flagged.iter().zip(truth) {
        match (f, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// precision = TP/(TP+FP), recall = TP/(TP+FN),
/// f1 = 2*precision*recall/(precision+recall),
/// accuracy = (TP+TN)/total. Zero denominators give 0.
pub fn prf_metrics(c: &ConfusionCounts) -> (f64, f64, f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let accuracy = ratio(c.tp + c.tn, c.total());
    (precision, recall, f1, accuracy)
}

/// Rank-based AUC (Mann-Whitney with average ranks for ties) plus the
/// threshold-swept curve. Needs at least one positive and one negative.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<RocCurve> {
    if scores.len() != truth.len() {
        return Err(Error::Shape("roc: scores/truth length mismatch".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!(
            "roc needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    // average ranks (ascending scores, rank 1..n)
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0; // ranks are 1-based
        for &idx in &order[i..=j] {
            if truth[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    let auc = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);

    // threshold sweep, descending over distinct scores
    let mut points = Vec::with_capacity(order.len() + 1);
    points.push((0.0, 0.0));
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = order.len();
    while i > 0 {
        // consume one distinct-score group from the top
        let top = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == top {
            if truth[order[i - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        points.push((fp as f64 / n, tp as f64 / p));
    }
    Ok(RocCurve { points, auc })
}

/// Re-threshold fixed scores at several fractions. AUC is threshold-free
/// and therefore identical across fractions.
pub fn fraction_sweep(scores: &[f64], truth: &[bool], fractions: &[f64]) -> Result<Vec<(f64, MetricReport)>> {
    let curve = roc_auc(scores, truth)?;
    let n = scores.len();
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Config(format!("fraction must be in (0,1), got {fraction}")));
        }
        let m = (fraction * n as f64).round() as usize;
        let flagged = top_m_flagged(scores, m)?;
        let c = confusion(&flagged, truth)?;
        let (precision, recall, f1, accuracy) = prf_metrics(&c);
        out.push((
            fraction,
            MetricReport {
                auc: curve.auc,
                recall,
                precision,
                f1,
                accuracy,
                wall_time: 0.0,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seeding::stream_rng;

    /// O(n^2) pairwise-comparison AUC: P(score_pos > score_neg) + P(tie)/2.
    fn pairwise_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &ti) in truth.iter().enumerate() {
            if !ti {
                continue;
            }
            for (j, &tj) in truth.iter().enumerate() {
                if tj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn confusion_exact_and_empty_cases() {
        let truth = [true, false, true, false];
        let c = confusion(&[0, 2], &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 0, tn: 2, fn_: 0 });
        let c = confusion(&[], &truth).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 0, fp: 0, tn: 2, fn_: 2 });
        assert!(confusion(&[4], &truth).is_err());
    }

    #[test]
    fn confusion_matches_set_arithmetic_oracle() {
        let mut rng = stream_rng(90, 0);
        let truth: Vec<bool> = (0..30).map(|_| rng.gen_bool(0.3)).collect();
        let flagged: Vec<usize> = (0..30).filter(|_| rng.gen_bool(0.4)).collect();
        let c = confusion(&flagged, &truth).unwrap();
        let tp = flagged.iter().filter(|&&i| truth[i]).count();
        let fp = flagged.len() - tp;
        let outliers = truth.iter().filter(|&&t| t).count();
        assert_eq!(c.tp, tp);
        assert_eq!(c.fp, fp);
        assert_eq!(c.fn_, outliers - tp);
        assert_eq!(c.tn, 30 - outliers - fp);
        assert_eq!(c.total(), 30);
    }

    #[test]
    fn prf_direct_arithmetic() {
        let c = ConfusionCounts { tp: 2, fp: 2, tn: 14, fn_: 2 };
        let (precision, recall, f1, accuracy) = prf_metrics(&c);
        assert_eq!(precision, 0.5);
        assert_eq!(recall, 0.5);
        assert_eq!(f1, 0.5);
        assert_eq!(accuracy, 0.8);
    }

    #[test]
    fn prf_perfect_and_guarded() {
        let perfect = ConfusionCounts { tp: 5, fp: 0, tn: 10, fn_: 0 };
        assert_eq!(prf_metrics(&perfect), (1.0, 1.0, 1.0, 1.0));
        let hopeless = ConfusionCounts { tp: 0, fp: 3, tn: 10, fn_: 4 };
        let (precision, recall, f1, _) = prf_metrics(&hopeless);
        assert_eq!((precision, recall, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn accuracy_identity() {
        let c = ConfusionCounts { tp: 3, fp: 2, tn: 9, fn_: 1 };
        let (_, _, _, accuracy) = prf_metrics(&c);
        let total = c.total() as f64;
        assert!((accuracy - (1.0 - (c.fp + c.fn_) as f64 / total)).abs() < 1e-15);
    }

    #[test]
    fn auc_perfect_and_all_ties() {
        let curve = roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap();
        assert_eq!(curve.auc, 1.0);
        let curve = roc_auc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]).unwrap();
        assert!((curve.auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn auc_single_class_is_metric_error() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn auc_matches_pairwise_oracle_with_ties() {
        let mut rng = stream_rng(91, 0);
        for case in 0..30 {
            let n = 10 + case % 30;
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..5.0f64) * 2.0).floor() / 2.0).collect();
            let mut truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            truth[0] = true;
            truth[1] = false;
            let curve = roc_auc(&scores, &truth).unwrap();
            let want = pairwise_auc(&scores, &truth);
            assert!((curve.auc - want).abs() < 1e-12, "case {case}");
            assert!((curve.auc - curve.trapezoid_area()).abs() < 1e-12, "trapezoid case {case}");
        }
    }

    #[test]
    fn curve_endpoints_and_monotonicity() {
        let mut rng = stream_rng(92, 0);
        let scores: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        let truth: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let curve = roc_auc(&scores, &truth).unwrap();
        assert_eq!(*curve.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*curve.points.last().unwrap(), (1.0, 1.0));
        for pair in curve.points.windows(2) {
            assert!(pair[1].0 >= pair[0].0);
            assert!(pair[1].1 >= pair[0].1);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = stream_rng(93, 0);
        let scores: Vec<f64> = (0..40).map(|_| rng.gen_range(0.1..3.0)).collect();
        let truth: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let base = roc_auc(&scores, &truth).unwrap().auc;
        let squashed: Vec<f64> = scores.iter().map(|&s| (s * 2.0).ln()).collect();
        let got = roc_auc(&squashed, &truth).unwrap().auc;
        assert!((base - got).abs() < 1e-12);
    }

    #[test]
    fn matched_flag_count_equalizes_recall_precision_f1() {
        let mut rng = stream_rng(94, 0);
        let scores: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..1.0)).collect();
        let truth: Vec<bool> = (0..60).map(|i| i < 9).collect();
        let flagged = top_m_flagged(&scores, 9).unwrap();
        let c = confusion(&flagged, &truth).unwrap();
        let (precision, recall, f1, _) = prf_metrics(&c);
        assert_eq!(recall, precision);
        assert_eq!(recall, f1);
    }

    #[test]
    fn fraction_sweep_consistency_and_monotonicity() {
        let mut rng = stream_rng(95, 0);
        let scores: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let truth: Vec<bool> = scores.iter().map(|&s| s > 0.85 || rng.gen_bool(0.05)).collect();
        let fractions = [0.05, 0.10, 0.15];
        let swept = fraction_sweep(&scores, &truth, &fractions).unwrap();
        assert_eq!(swept.len(), 3);
        // identical AUC across fractions, and consistent with single runs
        for (f, report) in &swept {
            let single = fraction_sweep(&scores, &truth, &[*f]).unwrap();
            assert_eq!(single[0].1, *report);
            assert_eq!(report.auc, swept[0].1.auc);
        }
        // recall nondecreasing, precision nonincreasing in the fraction
        for pair in swept.windows(2) {
            assert!(pair[1].1.recall >= pair[0].1.recall);
            assert!(pair[1].1.precision <= pair[0].1.precision);
        }
    }
}
