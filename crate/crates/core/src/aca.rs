//! Confidence monitoring and adaptive classifier assignment.
//!
//! The confidence score of a modality is the mean ground-truth probability
//! mass of its raw-summed stack predictions, accumulated over the training
//! batches seen since the last check. Every `period` iterations the scores
//! are compared: when the spread exceeds the dead zone, the lowest-scoring
//! modality receives one extra classifier.

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Which reading of the assignment rule to apply.
///
/// `Text` boosts the weaker modality: a positive gap adds a classifier to
/// the low-score side, and equal scores are neutral. `Algorithm1` is the
/// literal two-branch pseudocode form, kept for comparison: a positive gap
/// adds to the high-score side and anything below the dead zone adds to the
/// low-score side (so equal scores still add). Two modalities only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AcaRule {
    #[default]
    Text,
    Algorithm1,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcaConfig {
    /// Scale on the weaker score; >= 1.
    pub sigma: f64,
    /// Dead zone for fault tolerance; >= 0.
    pub tau: f64,
    /// Check period in iterations.
    pub period: usize,
    /// Optional cap on per-modality stack size.
    pub max_classifiers: Option<usize>,
    pub rule: AcaRule,
}

impl Default for AcaConfig {
    fn default() -> Self {
        AcaConfig { sigma: 1.0, tau: 0.01, period: 1, max_classifiers: None, rule: AcaRule::Text }
    }
}

impl AcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 1.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 1, got {}", self.sigma)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.period == 0 {
            return Err(Error::Config("period must be >= 1".to_string()));
        }
        if self.max_classifiers == Some(0) {
            return Err(Error::Config("max_classifiers must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// Per-modality confidence scores at one check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub iteration: u64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AcaAction {
    /// Scores within the dead zone, or period not reached.
    None,
    /// Add one classifier to this modality index.
    Add(usize),
    /// The rule fired but the target stack is at its cap.
    Capped(usize),
}

impl AcaAction {
    pub fn describe(&self, names: &[String]) -> String {
        match self {
            AcaAction::None => "none".to_string(),
            AcaAction::Add(i) => format!("add:{}", names[*i]),
            AcaAction::Capped(i) => format!("capped:{}", names[*i]),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcaDecision {
    pub action: AcaAction,
    pub record: ConfidenceRecord,
}

/// Running confidence sums over the monitoring window.
#[derive(Debug, Clone)]
pub struct ConfidenceAccumulator {
    sums: Vec<f64>,
    count: usize,
}

impl ConfidenceAccumulator {
    pub fn new(num_modalities: usize) -> Self {
        ConfidenceAccumulator { sums: vec![0.0; num_modalities], count: 0 }
    }

    /// Add one batch: per modality, sum_i y_i^T [sum_j p_ij] with the raw
    /// (unscaled) stack sum.
    pub fn accumulate(&mut self, stacks: &[Vec<&Matrix>], y: &Matrix) -> Result<()> {
        if stacks.len() != self.sums.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} modalities, got {}",
                self.sums.len(),
                stacks.len()
            )));
        }
        for (m, stack) in stacks.iter().enumerate() {
            if stack.is_empty() {
                return Err(Error::InvalidArgument("empty prediction stack".to_string()));
            }
            let mut acc = 0.0;
            for p in stack {
                if !p.same_shape(y) {
                    return Err(Error::shape(
                        "confidence",
                        format!("prediction {} vs labels {}", p.shape_str(), y.shape_str()),
                    ));
                }
                for idx in 0..y.len() {
                    acc += y.values()[idx] * p.values()[idx];
                }
            }
            self.sums[m] += acc;
        }
        self.count += y.rows();
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Mean scores over the window, clearing the window.
    pub fn take_scores(&mut self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("empty confidence monitoring set".to_string()));
        }
        let scores = self.sums.iter().map(|s| s / self.count as f64).collect();
        self.sums.fill(0.0);
        self.count = 0;
        Ok(scores)
    }
}

/// One-shot score computation for a fixed prediction set.
pub fn confidence_scores(stacks: &[Vec<&Matrix>], y: &Matrix) -> Result<Vec<f64>> {
    let mut acc = ConfidenceAccumulator::new(stacks.len());
    acc.accumulate(stacks, y)?;
    acc.take_scores()
}

/// Apply the assignment rule to one score record.
///
/// `counts` are the current per-modality stack sizes, used for the cap.
pub fn decide(scores: &[f64], counts: &[usize], cfg: &AcaConfig) -> Result<AcaAction> {
    cfg.validate()?;
    if scores.len() != counts.len() || scores.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need matching scores/counts for >= 2 modalities, got {}/{}",
            scores.len(),
            counts.len()
        )));
    }
    let target = match cfg.rule {
        AcaRule::Text => {
            let hi = argmax(scores);
            let lo = argmin(scores);
            if scores[hi] - cfg.sigma * scores[lo] > cfg.tau {
                Some(lo)
            } else {
                None
            }
        }
        AcaRule::Algorithm1 => {
            if scores.len() != 2 {
                return Err(Error::Config(
                    "algorithm1 rule is defined for exactly two modalities".to_string(),
                ));
            }
            let gap = scores[0] - cfg.sigma * scores[1];
            if gap > cfg.tau {
                Some(0)
            } else if gap < cfg.tau {
                Some(1)
            } else {
                None
            }
        }
    };
    Ok(match target {
        None => AcaAction::None,
        Some(idx) => {
            if cfg.max_classifiers.is_some_and(|cap| counts[idx] >= cap) {
                AcaAction::Capped(idx)
            } else {
                AcaAction::Add(idx)
            }
        }
    })
}

/// Periodic check: decides only when `iteration` is a positive multiple of
/// the period, draining the accumulator; otherwise leaves it untouched.
pub fn maybe_check(
    iteration: u64,
    cfg: &AcaConfig,
    counts: &[usize],
    accumulator: &mut ConfidenceAccumulator,
) -> Result<Option<AcaDecision>> {
    if iteration == 0 || iteration % cfg.period as u64 != 0 {
        return Ok(None);
    }
    let scores = accumulator.take_scores()?;
    let action = decide(&scores, counts, cfg)?;
    Ok(Some(AcaDecision { action, record: ConfidenceRecord { iteration, scores } }))
}

/// Mean absolute successive difference; the divisor is the series length.
pub fn confidence_fluctuation(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fluctuation needs >= 2 scores, got {}",
            series.len()
        )));
    }
    let sum: f64 = series.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(sum / series.len() as f64)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v < xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(rows: &[usize], k: usize) -> Matrix {
        let mut m = Matrix::zeros(rows.len(), k);
        for (i, &c) in rows.iter().enumerate() {
            m.set(i, c, 1.0);
        }
        m
    }

    fn uniform(rows: usize, k: usize) -> Matrix {
        Matrix::from_fn(rows, k, |_, _| 1.0 / k as f64)
    }

    #[test]
    fn perfect_single_classifier_scores_one() {
        let y = one_hot(&[0, 1, 2], 3);
        let s = confidence_scores(&[vec![&y]], &y).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_single_classifier_scores_one_over_k() {
        let y = one_hot(&[0, 3], 4);
        let p = uniform(2, 4);
        let s = confidence_scores(&[vec![&p]], &y).unwrap();
        assert!((s[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn two_uniform_classifiers_k4_score_half() {
        let y = one_hot(&[1, 2, 0], 4);
        let p = uniform(3, 4);
        let s = confidence_scores(&[vec![&p, &p]], &y).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12, "raw sum over the stack: 2 * 1/4");
    }

    #[test]
    fn accumulator_averages_over_batches() {
        let mut acc = ConfidenceAccumulator::new(1);
        let y1 = one_hot(&[0], 2);
        let y2 = one_hot(&[1, 1, 1], 2);
        let p1 = Matrix::from_rows(&[vec![0.9, 0.1]]).unwrap();
        let p2 = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.7, 0.3], vec![0.2, 0.8]]).unwrap();
        acc.accumulate(&[vec![&p1]], &y1).unwrap();
        acc.accumulate(&[vec![&p2]], &y2).unwrap();
        let s = acc.take_scores().unwrap();
        assert!((s[0] - (0.9 + 0.5 + 0.3 + 0.8) / 4.0).abs() < 1e-12);
        assert!(acc.take_scores().is_err(), "window cleared after take");
    }

    #[test]
    fn decide_adds_to_weaker_modality() {
        let cfg = AcaConfig::default();
        let action = decide(&[0.8, 0.5], &[1, 1], &cfg).unwrap();
        assert_eq!(action, AcaAction::Add(1));
        let action = decide(&[0.5, 0.8], &[1, 1], &cfg).unwrap();
        assert_eq!(action, AcaAction::Add(0));
    }

    #[test]
    fn decide_respects_dead_zone() {
        let cfg = AcaConfig::default();
        assert_eq!(decide(&[0.505, 0.5], &[1, 1], &cfg).unwrap(), AcaAction::None);
    }

    #[test]
    fn equal_scores_are_neutral_for_any_sigma_tau() {
        for sigma in [1.0, 1.3, 2.0] {
            for tau in [0.0, 0.01, 0.5] {
                let cfg = AcaConfig { sigma, tau, ..AcaConfig::default() };
                assert_eq!(decide(&[0.4, 0.4], &[1, 1], &cfg).unwrap(), AcaAction::None);
            }
        }
    }

    #[test]
    fn algorithm1_literal_branches() {
        let cfg = AcaConfig { rule: AcaRule::Algorithm1, ..AcaConfig::default() };
        // gap above tau adds to the first (higher) modality
        assert_eq!(decide(&[0.8, 0.5], &[1, 1], &cfg).unwrap(), AcaAction::Add(0));
        // inside the dead zone the literal elif adds to the second
        assert_eq!(decide(&[0.5, 0.5], &[1, 1], &cfg).unwrap(), AcaAction::Add(1));
        assert!(decide(&[0.5, 0.5, 0.5], &[1, 1, 1], &cfg).is_err());
    }

    #[test]
    fn three_modalities_boost_the_minimum() {
        let cfg = AcaConfig::default();
        let action = decide(&[0.6, 0.2, 0.5], &[1, 1, 1], &cfg).unwrap();
        assert_eq!(action, AcaAction::Add(1));
    }

    #[test]
    fn cap_reports_capped() {
        let cfg = AcaConfig { max_classifiers: Some(2), ..AcaConfig::default() };
        assert_eq!(decide(&[0.8, 0.5], &[1, 2], &cfg).unwrap(), AcaAction::Capped(1));
        assert_eq!(decide(&[0.8, 0.5], &[1, 1], &cfg).unwrap(), AcaAction::Add(1));
    }

    #[test]
    fn maybe_check_gates_on_period() {
        let cfg = AcaConfig { period: 3, ..AcaConfig::default() };
        let mut acc = ConfidenceAccumulator::new(2);
        let y = one_hot(&[0], 2);
        let pa = Matrix::from_rows(&[vec![0.9, 0.1]]).unwrap();
        let pv = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        acc.accumulate(&[vec![&pa], vec![&pv]], &y).unwrap();

        assert!(maybe_check(1, &cfg, &[1, 1], &mut acc).unwrap().is_none());
        assert!(maybe_check(2, &cfg, &[1, 1], &mut acc).unwrap().is_none());
        assert!(!acc.is_empty(), "accumulator untouched off-period");
        let decision = maybe_check(3, &cfg, &[1, 1], &mut acc).unwrap().unwrap();
        assert_eq!(decision.action, AcaAction::Add(1));
        assert_eq!(decision.record.iteration, 3);
        assert!(acc.is_empty());
    }

    #[test]
    fn maybe_check_equal_scores_none() {
        let cfg = AcaConfig { period: 1, ..AcaConfig::default() };
        let mut acc = ConfidenceAccumulator::new(2);
        let y = one_hot(&[0], 2);
        let p = uniform(1, 2);
        acc.accumulate(&[vec![&p], vec![&p]], &y).unwrap();
        let decision = maybe_check(1, &cfg, &[1, 1], &mut acc).unwrap().unwrap();
        assert_eq!(decision.action, AcaAction::None);
    }

    #[test]
    fn fluctuation_examples() {
        assert_eq!(confidence_fluctuation(&[0.4, 0.4, 0.4]).unwrap(), 0.0);
        assert!((confidence_fluctuation(&[0.0, 1.0, 0.0, 1.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(confidence_fluctuation(&[0.4]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // |s_a - s_v| <= tau with sigma = 1 never triggers.
            #[test]
            fn dead_zone_neutrality(s in 0.0f64..3.0, delta in -1.0f64..1.0, tau in 0.0f64..1.0) {
                let d = delta * tau;
                let cfg = AcaConfig { sigma: 1.0, tau, ..AcaConfig::default() };
                let action = decide(&[s, (s + d).max(0.0)], &[1, 1], &cfg).unwrap();
                prop_assert_eq!(action, AcaAction::None);
            }

            // Widening an already-triggering gap keeps the same target.
            #[test]
            fn monotone_response(
                sa in 0.0f64..3.0, sv in 0.0f64..3.0,
                up in 0.0f64..1.0, down in 0.0f64..1.0,
            ) {
                let cfg = AcaConfig { sigma: 1.0, tau: 0.01, ..AcaConfig::default() };
                if decide(&[sa, sv], &[1, 1], &cfg).unwrap() == AcaAction::Add(1) {
                    let wider = decide(&[sa + up, (sv - down).max(0.0)], &[1, 1], &cfg).unwrap();
                    prop_assert_eq!(wider, AcaAction::Add(1));
                }
            }

            // Reversing a series leaves the fluctuation unchanged.
            #[test]
            fn fluctuation_reverse_symmetric(series in prop::collection::vec(0.0f64..2.0, 2..20)) {
                let fwd = confidence_fluctuation(&series).unwrap();
                let mut rev = series.clone();
                rev.reverse();
                let bwd = confidence_fluctuation(&rev).unwrap();
                prop_assert!((fwd - bwd).abs() < 1e-12);
            }
        }
    }
}
