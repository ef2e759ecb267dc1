//! Confusion matrices, headline metrics, abstention accounting, and the
//! sliding-window baseline helpers.
//!
//! Zero-division conventions: a per-class F1 with no true or predicted
//! members of that class is 0; sensitivity and specificity demand at least
//! one true member of their class and error out otherwise, naming the metric.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{LABEL_EXCLUSION, LABEL_INCLUSION};
use crate::decide::{AggregateDecision, AggregateLabel};

/// Token budget per sub-sequence for the windowed baseline.
pub const WINDOW_MAX_LEN: usize = 512;
/// Fraction of the window advanced per step; the floor of stride × max_len
/// keeps the overlap at a fifth or more.
pub const WINDOW_STRIDE: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Inclusion predicted as Inclusion. Short names land in the artifacts;
    /// the `c` suffix only dodges the `fn` keyword.
    #[serde(rename = "tp")]
    pub tpc: u64,
    #[serde(rename = "fp")]
    pub fpc: u64,
    #[serde(rename = "fn")]
    pub fnc: u64,
    #[serde(rename = "tn")]
    pub tnc: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub abstained: u64,
    pub retained_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{metric} undefined: its class has no true members")]
    EmptyClass { metric: &'static str },
    #[error("every decision abstained; nothing to evaluate")]
    AllAbstained,
    #[error("{decisions} decisions against {labels} labels")]
    LengthMismatch { decisions: usize, labels: usize },
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fnn: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix { tpc: tp, fpc: fp, fnc: fnn, tnc: tn }
    }

    pub fn total(&self) -> u64 {
        self.tpc + self.fpc + self.fnc + self.tnc
    }

    pub fn observe(&mut self, truth: u8, predicted: u8) {
        match (truth == LABEL_INCLUSION, predicted == LABEL_INCLUSION) {
            (true, true) => self.tpc += 1,
            (false, true) => self.fpc += 1,
            (true, false) => self.fnc += 1,
            (false, false) => self.tnc += 1,
        }
    }

    /// Rows in Exclusion-then-Inclusion order on both axes, true labels as
    /// rows, matching the published matrix layout.
    pub fn rows_exclusion_first(&self) -> [[u64; 2]; 2] {
        [[self.tnc, self.fpc], [self.fnc, self.tpc]]
    }
}

fn f1_from_counts(tp: u64, fp: u64, fnn: u64) -> f64 {
    // 2tp/(2tp+fp+fn) equals the harmonic precision/recall mean wherever
    // that is defined, and is 0 exactly when precision+recall is 0.
    let denom = 2 * tp + fp + fnn;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    if cm.tpc + cm.fnc == 0 {
        return Err(EvalError::EmptyClass { metric: "sensitivity" });
    }
    if cm.tnc + cm.fpc == 0 {
        return Err(EvalError::EmptyClass { metric: "specificity" });
    }
    let f1_inclusion = f1_from_counts(cm.tpc, cm.fpc, cm.fnc);
    let f1_exclusion = f1_from_counts(cm.tnc, cm.fnc, cm.fpc);
    Ok(MetricsReport {
        accuracy: (cm.tpc + cm.tnc) as f64 / total as f64,
        macro_f1: (f1_inclusion + f1_exclusion) / 2.0,
        sensitivity: cm.tpc as f64 / (cm.tpc + cm.fnc) as f64,
        specificity: cm.tnc as f64 / (cm.tnc + cm.fpc) as f64,
        abstained: 0,
        retained_fraction: 1.0,
    })
}

/// Scores one strategy's decisions against the true labels. Abstentions
/// leave the matrix and are accounted in `abstained`/`retained_fraction`.
pub fn evaluate_strategy(
    decisions: &[AggregateDecision],
    labels: &[u8],
) -> Result<MetricsReport, EvalError> {
    if decisions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            decisions: decisions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    let mut abstained = 0u64;
    for (decision, &truth) in decisions.iter().zip(labels) {
        let predicted = match decision.label {
            AggregateLabel::Inclusion => LABEL_INCLUSION,
            AggregateLabel::Exclusion => LABEL_EXCLUSION,
            AggregateLabel::Abstain => {
                abstained += 1;
                continue;
            }
        };
        cm.observe(truth, predicted);
    }
    if cm.total() == 0 {
        return Err(EvalError::AllAbstained);
    }
    let mut report = metrics(&cm)?;
    report.abstained = abstained;
    report.retained_fraction = cm.total() as f64 / (cm.total() + abstained) as f64;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub max_len: usize,
    pub advance: usize,
    /// (start, length) pairs; every window but possibly the last is full.
    pub windows: Vec<(usize, usize)>,
}

pub fn plan_windows(total_tokens: usize) -> WindowPlan {
    plan_windows_with(total_tokens, WINDOW_MAX_LEN, WINDOW_STRIDE)
}

pub fn plan_windows_with(total_tokens: usize, max_len: usize, stride: f64) -> WindowPlan {
    let advance = (stride * max_len as f64) as usize;
    let mut windows = Vec::new();
    if total_tokens > 0 {
        let mut start = 0;
        loop {
            windows.push((start, max_len.min(total_tokens - start)));
            if start + max_len >= total_tokens {
                break;
            }
            start += advance;
        }
    }
    WindowPlan { max_len, advance, windows }
}

/// Majority label over a slice of window verdicts; ties go to Inclusion.
pub fn mode_label(labels: &[u8]) -> u8 {
    let inclusions = labels.iter().filter(|&&l| l == LABEL_INCLUSION).count();
    let exclusions = labels.len() - inclusions;
    if inclusions >= exclusions {
        LABEL_INCLUSION
    } else {
        LABEL_EXCLUSION
    }
}

/// Windowed baseline: classify each sub-sequence, then take the mode.
pub fn window_mode_predict<F>(total_tokens: usize, mut classify: F) -> u8
where
    F: FnMut(usize, usize) -> u8,
{
    let plan = plan_windows(total_tokens);
    let labels: Vec<u8> = plan.windows.iter().map(|&(s, l)| classify(s, l)).collect();
    mode_label(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decide::Strategy;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sensitivity_matches_published_positive_split() {
        let cm = ConfusionMatrix::new(94, 175, 12, 782);
        let report = metrics(&cm).unwrap();
        assert_abs_diff_eq!(report.sensitivity * 100.0, 88.68, epsilon = 0.01);
    }

    #[test]
    fn perfect_classifier_scores_ones() {
        let report = metrics(&ConfusionMatrix::new(5, 0, 0, 5)).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.macro_f1, 1.0);
        assert_eq!(report.sensitivity, 1.0);
        assert_eq!(report.specificity, 1.0);
    }

    #[test]
    fn all_wrong_classifier_scores_zeros() {
        let report = metrics(&ConfusionMatrix::new(0, 5, 5, 0)).unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.macro_f1, 0.0);
        assert_eq!(report.sensitivity, 0.0);
        assert_eq!(report.specificity, 0.0);
    }

    #[test]
    fn small_mixed_matrix() {
        let report = metrics(&ConfusionMatrix::new(2, 1, 1, 2)).unwrap();
        assert_abs_diff_eq!(report.sensitivity, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.accuracy, 4.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_matrices_name_the_metric() {
        assert_eq!(metrics(&ConfusionMatrix::default()).unwrap_err(), EvalError::EmptyMatrix);
        assert_eq!(
            metrics(&ConfusionMatrix::new(0, 3, 0, 4)).unwrap_err(),
            EvalError::EmptyClass { metric: "sensitivity" }
        );
        assert_eq!(
            metrics(&ConfusionMatrix::new(3, 0, 4, 0)).unwrap_err(),
            EvalError::EmptyClass { metric: "specificity" }
        );
    }

    #[test]
    fn confusion_rows_follow_exclusion_first_layout() {
        let cm = ConfusionMatrix::new(10, 20, 30, 40);
        assert_eq!(cm.rows_exclusion_first(), [[40, 20], [30, 10]]);
    }

    fn agg(label: AggregateLabel) -> AggregateDecision {
        AggregateDecision {
            strategy: Strategy::NoInconsistent,
            label,
            chosen_run: None,
            failsafe_applied: false,
        }
    }

    #[test]
    fn abstentions_shrink_the_denominator() {
        let mut decisions = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..3 {
            decisions.push(agg(AggregateLabel::Inclusion));
            labels.push(LABEL_INCLUSION);
        }
        for _ in 0..3 {
            decisions.push(agg(AggregateLabel::Exclusion));
            labels.push(LABEL_EXCLUSION);
        }
        for _ in 0..4 {
            decisions.push(agg(AggregateLabel::Abstain));
            labels.push(LABEL_EXCLUSION);
        }
        let report = evaluate_strategy(&decisions, &labels).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.abstained, 4);
        assert_abs_diff_eq!(report.retained_fraction, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn no_abstentions_means_full_retention() {
        let decisions = vec![agg(AggregateLabel::Inclusion), agg(AggregateLabel::Exclusion)];
        let labels = vec![LABEL_INCLUSION, LABEL_EXCLUSION];
        let report = evaluate_strategy(&decisions, &labels).unwrap();
        assert_eq!(report.retained_fraction, 1.0);
        assert_eq!(report.abstained, 0);
    }

    #[test]
    fn all_abstained_is_an_error() {
        let decisions = vec![agg(AggregateLabel::Abstain); 3];
        let labels = vec![LABEL_INCLUSION; 3];
        assert_eq!(evaluate_strategy(&decisions, &labels).unwrap_err(), EvalError::AllAbstained);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let decisions = vec![agg(AggregateLabel::Inclusion)];
        let err = evaluate_strategy(&decisions, &[]).unwrap_err();
        assert_eq!(err, EvalError::LengthMismatch { decisions: 1, labels: 0 });
    }

    #[test]
    fn window_plan_enumerations() {
        let plan = plan_windows(1000);
        assert_eq!(plan.advance, 409);
        assert_eq!(plan.windows, vec![(0, 512), (409, 512), (818, 182)]);

        assert_eq!(plan_windows(512).windows, vec![(0, 512)]);
        assert_eq!(plan_windows(513).windows, vec![(0, 512), (409, 104)]);
        assert_eq!(plan_windows(1).windows, vec![(0, 1)]);
    }

    #[test]
    fn window_mode_examples() {
        assert_eq!(mode_label(&[1, 0, 1]), 1);
        assert_eq!(mode_label(&[0, 0, 1]), 0);
        assert_eq!(mode_label(&[1, 0]), 1);
        // 1000 tokens split into three windows; per-window verdicts 1,0,1.
        let verdicts = [1u8, 0, 1];
        let mut i = 0;
        let label = window_mode_predict(1000, |_, _| {
            let v = verdicts[i];
            i += 1;
            v
        });
        assert_eq!(label, 1);
    }

    proptest::proptest! {
        #[test]
        fn metric_identities_hold(
            tp in 0u64..200, fp in 0u64..200, fnn in 0u64..200, tn in 0u64..200,
        ) {
            let cm = ConfusionMatrix::new(tp, fp, fnn, tn);
            if let Ok(report) = metrics(&cm) {
                let total = cm.total() as f64;
                proptest::prop_assert!(
                    (report.accuracy - (tp + tn) as f64 / total).abs() < 1e-12
                );
                proptest::prop_assert!(
                    (report.sensitivity - (1.0 - fnn as f64 / (tp + fnn) as f64)).abs() < 1e-12
                );
                for m in [report.accuracy, report.macro_f1, report.sensitivity, report.specificity] {
                    proptest::prop_assert!((0.0..=1.0).contains(&m));
                }
                // Swapping classes and orientation together leaves macro-F1 alone.
                let swapped = metrics(&ConfusionMatrix::new(tn, fnn, fp, tp)).unwrap();
                proptest::prop_assert!((report.macro_f1 - swapped.macro_f1).abs() < 1e-12);
            }
        }

        #[test]
        fn windows_cover_everything_without_overflow(total in 1usize..5000) {
            let plan = plan_windows(total);
            let mut covered = vec![false; total];
            for &(start, len) in &plan.windows {
                proptest::prop_assert!(len <= plan.max_len);
                proptest::prop_assert!(start + len <= total);
                for c in covered.iter_mut().skip(start).take(len) {
                    *c = true;
                }
            }
            proptest::prop_assert!(covered.iter().all(|&c| c));
            for pair in plan.windows.windows(2) {
                let (s0, l0) = pair[0];
                let (s1, _) = pair[1];
                proptest::prop_assert_eq!(s1 - s0, plan.advance);
                // Full consecutive windows overlap by max_len - advance.
                if l0 == plan.max_len {
                    proptest::prop_assert_eq!(s0 + l0 - s1, plan.max_len - plan.advance);
                }
            }
        }

        #[test]
        fn abstained_plus_evaluated_is_total(
            labels in proptest::collection::vec(0u8..2, 1..60),
            kinds in proptest::collection::vec(0u8..3, 1..60),
        ) {
            let n = labels.len().min(kinds.len());
            let decisions: Vec<AggregateDecision> = kinds[..n]
                .iter()
                .map(|k| agg(match k {
                    0 => AggregateLabel::Inclusion,
                    1 => AggregateLabel::Exclusion,
                    _ => AggregateLabel::Abstain,
                }))
                .collect();
            match evaluate_strategy(&decisions, &labels[..n]) {
                Ok(report) => {
                    let evaluated = (report.retained_fraction
                        * (report.abstained as f64 + (n as u64 - report.abstained) as f64))
                        .round() as u64;
                    proptest::prop_assert_eq!(evaluated + report.abstained, n as u64);
                }
                Err(EvalError::AllAbstained | EvalError::EmptyClass { .. }) => {}
                Err(other) => proptest::prop_assert!(false, "unexpected error {}", other),
            }
        }
    }
}
